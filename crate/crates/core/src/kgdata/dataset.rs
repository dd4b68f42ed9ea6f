//! Data directory layout:
//!
//! ```text
//! triples_<kg>.tsv                   every known triple of a KG (defines ids)
//! kgc_{train,valid,test}_<kg>.tsv    completion splits (optional)
//! seeds_<a>_<b>.tsv                  alignment seeds, split by fraction
//! seeds_{train,test}_<a>_<b>.tsv     pre-split alignment seeds (optional)
//! vectors.tsv                        surface-information vectors (optional)
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;

use super::io::{parse_seeds, parse_triples_with, read_triples_resolved, split_seeds};
use super::{load_initial_vectors, AlignmentSplit, Kg, KgcSplit, MultiKg, Vocab};
use crate::error::{Error, Result};

/// Files found in a data directory.
#[derive(Clone, Debug, Default)]
pub struct DatasetLayout {
    pub kg_ids: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn kg_ids(dir: &Path) -> Result<Vec<String>> {
    let mut full = BTreeSet::new();
    let mut split = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_prefix("triples_").and_then(|s| s.strip_suffix(".tsv")) {
            full.insert(id.to_owned());
        } else if let Some(id) = name.strip_prefix("kgc_train_").and_then(|s| s.strip_suffix(".tsv")) {
            split.insert(id.to_owned());
        }
    }
    full.extend(split);
    Ok(full.into_iter().collect())
}

/// `<a>_<b>` → `(a, b)` where both are known KG ids.
fn pair_ids(stem: &str, ids: &[String]) -> Option<(usize, usize)> {
    stem.match_indices('_').find_map(|(i, _)| {
        let a = ids.iter().position(|k| k == &stem[..i])?;
        let b = ids.iter().position(|k| k == &stem[i + 1..])?;
        Some((a, b))
    })
}

/// Loads every KG, split, and seed file under `dir`.
///
/// The KG structure seen by the model is the completion training split when
/// one exists. Unsplit seed files are partitioned with `seed_train_fraction`.
pub fn load_dataset(
    dir: &Path,
    seed_train_fraction: f64,
    rng_seed: u64,
    with_vectors: bool,
) -> Result<(MultiKg, DatasetLayout)> {
    let ids = kg_ids(dir)?;
    if ids.is_empty() {
        return Err(Error::Data(format!("no triples_<kg>.tsv files in {}", dir.display())));
    }
    let mut layout = DatasetLayout {
        kg_ids: ids.clone(),
        files: Vec::new(),
    };
    let mut relations = Vocab::new();
    let mut kgs = Vec::new();
    let mut splits = Vec::new();

    for id in &ids {
        let full = dir.join(format!("triples_{id}.tsv"));
        let part = |s: &str| dir.join(format!("kgc_{s}_{id}.tsv"));
        let mut entities = Vocab::new();
        let mut all = Vec::new();
        let sources: Vec<PathBuf> = if full.exists() {
            vec![full]
        } else {
            ["train", "valid", "test"]
                .iter()
                .map(|s| part(s))
                .filter(|p| p.exists())
                .collect()
        };
        for src in &sources {
            let (t, report) = parse_triples_with(src, &mut entities, &mut relations)?;
            if report.duplicates > 0 {
                info!("{}: dropped {} duplicate triples", src.display(), report.duplicates);
            }
            all.extend(t);
            layout.files.push(src.clone());
        }
        if all.is_empty() {
            return Err(Error::Data(format!("kg {id}: empty triple file")));
        }
        let split = if part("train").exists() {
            let mut s = KgcSplit::default();
            for (which, slot) in [("train", &mut s.train), ("valid", &mut s.valid), ("test", &mut s.test)] {
                let p = part(which);
                if p.exists() {
                    *slot = read_triples_resolved(&p, &entities, &relations)?;
                    if !layout.files.contains(&p) {
                        layout.files.push(p);
                    }
                }
            }
            s
        } else {
            KgcSplit {
                train: all.clone(),
                ..KgcSplit::default()
            }
        };
        let mut kg = Kg::new(id.clone(), entities, all);
        kg.set_triples(split.train.clone());
        kgs.push(kg);
        splits.push(split);
    }

    let mut multikg = MultiKg::new(kgs, relations);
    multikg.kgc_splits = splits;

    // Alignment seeds.
    let mut stems: BTreeSet<(usize, usize)> = BTreeSet::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name().to_string_lossy().into_owned();
        let Some(stem) = name.strip_prefix("seeds_").and_then(|s| s.strip_suffix(".tsv")) else {
            continue;
        };
        let stem = stem
            .strip_prefix("train_")
            .or_else(|| stem.strip_prefix("test_"))
            .filter(|s| pair_ids(s, &ids).is_some())
            .unwrap_or(stem);
        if let Some(p) = pair_ids(stem, &ids) {
            stems.insert(p);
        }
    }
    for (a, b) in stems {
        let stem = format!("{}_{}", ids[a], ids[b]);
        let train_p = dir.join(format!("seeds_train_{stem}.tsv"));
        let test_p = dir.join(format!("seeds_test_{stem}.tsv"));
        let (left, right) = (&multikg.kgs[a], &multikg.kgs[b]);
        let split = if train_p.exists() && test_p.exists() {
            let (train, r1) = parse_seeds(&train_p, (a, b), left, right)?;
            let (test, r2) = parse_seeds(&test_p, (a, b), left, right)?;
            info!("seeds {stem}: {} train, {} test, {} skipped", train.len(), test.len(), r1.skipped + r2.skipped);
            layout.files.extend([train_p, test_p]);
            AlignmentSplit { train, test }
        } else {
            let p = dir.join(format!("seeds_{stem}.tsv"));
            let (set, report) = parse_seeds(&p, (a, b), left, right)?;
            info!("seeds {stem}: {} pairs, {} skipped", set.len(), report.skipped);
            layout.files.push(p);
            let (train, test) = split_seeds(&set, seed_train_fraction, rng_seed)?;
            AlignmentSplit { train, test }
        };
        multikg.alignments.push(split);
    }

    let vectors = dir.join("vectors.tsv");
    if with_vectors && vectors.exists() {
        load_initial_vectors(&vectors, &mut multikg)?;
        layout.files.push(vectors);
    }
    info!(
        "loaded {} KGs, {} entities, {} relations",
        multikg.kgs.len(),
        multikg.total_entities(),
        multikg.relation_count()
    );
    multikg.validate()?;
    Ok((multikg, layout))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    #[test]
    fn pair_ids_handles_underscores() {
        let ids = vec!["a_b".to_string(), "c".to_string()];
        assert_eq!(pair_ids("a_b_c", &ids), Some((0, 1)));
        assert_eq!(pair_ids("c_a_b", &ids), Some((1, 0)));
        assert_eq!(pair_ids("x_y", &ids), None);
    }

    #[test]
    fn loads_a_directory() {
        let dir = TempDir::new().unwrap();
        let w = |n: &str, b: &str| fs::write(dir.path().join(n), b).unwrap();
        w("triples_en.tsv", "a\tr\tb\nb\tr\tc\nc\ts\ta\nd\tr\ta\n");
        w("triples_fr.tsv", "x\tr\ty\ny\tr\tz\nz\ts\tx\n");
        w("kgc_train_en.tsv", "a\tr\tb\nb\tr\tc\n");
        w("kgc_valid_en.tsv", "c\ts\ta\n");
        w("kgc_test_en.tsv", "d\tr\ta\n");
        w("seeds_en_fr.tsv", "a\tx\nb\ty\nc\tz\nd\tnope\n");
        let (m, layout) = load_dataset(dir.path(), 0.5, 3, false).unwrap();
        assert_eq!(layout.kg_ids, vec!["en", "fr"]);
        assert_eq!(m.kgs[0].entity_count(), 4);
        assert_eq!(m.kgs[0].triples().len(), 2);
        assert_eq!(m.kgc_splits[0].test.len(), 1);
        assert_eq!(m.kgc_splits[1].train.len(), 3);
        assert_eq!(m.relation_count(), 2);
        let a = &m.alignments[0];
        assert_eq!(a.train.kg_pair, (0, 1));
        assert_eq!(a.train.len() + a.test.len(), 3);
    }
}
