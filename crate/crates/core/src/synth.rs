//! Synthetic KG pairs with a known alignment.
//!
//! A random base graph is copied twice: the target KG keeps every triple
//! under relabelled, shuffled entities, and the source KG drops each triple
//! independently with the missing rate.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const SOURCE_ID: &str = "src";
pub const TARGET_ID: &str = "tgt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub entity_count: usize,
    pub relation_count: usize,
    pub mean_degree: f64,
    pub missing_rate: f64,
    /// Share of ground-truth pairs written as training seeds.
    pub seed_fraction: f64,
    pub rng_seed: u64,
    /// Share of each KG's triples held out for completion validation.
    #[serde(default = "default_valid")]
    pub valid_fraction: f64,
    /// Share of each KG's triples held out for completion testing.
    #[serde(default = "default_test")]
    pub test_fraction: f64,
}

fn default_valid() -> f64 {
    0.05
}

fn default_test() -> f64 {
    0.1
}

impl SynthSpec {
    pub fn new(entity_count: usize, relation_count: usize, mean_degree: f64, missing_rate: f64, seed_fraction: f64, rng_seed: u64) -> Self {
        SynthSpec {
            entity_count,
            relation_count,
            mean_degree,
            missing_rate,
            seed_fraction,
            rng_seed,
            valid_fraction: default_valid(),
            test_fraction: default_test(),
        }
    }

    /// Number of base triples, `round(|E| · degree / 2)`.
    pub fn base_triple_count(&self) -> usize {
        (self.entity_count as f64 * self.mean_degree / 2.0).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Synth(m.into()));
        if self.entity_count < 2 || self.relation_count == 0 || self.base_triple_count() == 0 {
            return bad("parameters imply an empty graph");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.seed_fraction) {
            return bad("seed fraction must lie in [0, 1]");
        }
        if self.valid_fraction < 0.0 || self.test_fraction < 0.0 || self.valid_fraction + self.test_fraction >= 1.0 {
            return bad("holdout fractions must be non-negative and sum below 1");
        }
        let possible = self.entity_count * (self.entity_count - 1) * self.relation_count;
        if self.base_triple_count() > possible / 2 {
            return bad("mean degree too high for the entity and relation counts");
        }
        Ok(())
    }
}

pub type LabelTriple = (String, String, String);

#[derive(Clone, Debug, PartialEq)]
pub struct SynthKg {
    pub id: String,
    pub triples: Vec<LabelTriple>,
    pub train: Vec<LabelTriple>,
    pub valid: Vec<LabelTriple>,
    pub test: Vec<LabelTriple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub source: SynthKg,
    pub target: SynthKg,
    /// Every ground-truth pair whose entities occur in both KGs.
    pub alignment: Vec<(String, String)>,
    pub seeds_train: Vec<(String, String)>,
    pub seeds_test: Vec<(String, String)>,
}

fn split_kg<R: Rng>(id: &str, triples: Vec<LabelTriple>, spec: &SynthSpec, rng: &mut R) -> SynthKg {
    let mut order = triples.clone();
    order.shuffle(rng);
    let n = order.len();
    let n_valid = (n as f64 * spec.valid_fraction).round() as usize;
    let n_test = (n as f64 * spec.test_fraction).round() as usize;
    let test = order.split_off(n - n_test);
    let valid = order.split_off(n - n_test - n_valid);
    SynthKg {
        id: id.into(),
        triples,
        train: order,
        valid,
        test,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let mut rng = stream_rng(spec.rng_seed, "synth", 0);
    let target_count = spec.base_triple_count();
    let mut seen = HashSet::new();
    let mut base = Vec::with_capacity(target_count);
    while base.len() < target_count {
        let h = rng.gen_range(0..spec.entity_count);
        let t = rng.gen_range(0..spec.entity_count);
        let r = rng.gen_range(0..spec.relation_count);
        if h != t && seen.insert((h, r, t)) {
            base.push((h, r, t));
        }
    }

    let mut perm: Vec<usize> = (0..spec.entity_count).collect();
    perm.shuffle(&mut stream_rng(spec.rng_seed, "synth", 1));
    let rel = |r: usize| format!("r{r}");
    let src_label = |e: usize| format!("e{e}");
    let tgt_label = |e: usize| format!("x{}", perm[e]);

    let mut drop_rng = stream_rng(spec.rng_seed, "synth", 2);
    let source: Vec<LabelTriple> = base
        .iter()
        .filter(|_| !drop_rng.gen_bool(spec.missing_rate))
        .map(|&(h, r, t)| (src_label(h), rel(r), src_label(t)))
        .collect();
    let mut target: Vec<LabelTriple> = base
        .iter()
        .map(|&(h, r, t)| (tgt_label(h), rel(r), tgt_label(t)))
        .collect();
    target.shuffle(&mut stream_rng(spec.rng_seed, "synth", 3));
    if source.is_empty() {
        return Err(Error::Synth("every source triple was dropped".into()));
    }

    let present = |ts: &[LabelTriple]| -> BTreeSet<String> {
        ts.iter().flat_map(|t| [t.0.clone(), t.2.clone()]).collect()
    };
    let (in_src, in_tgt) = (present(&source), present(&target));
    let alignment: Vec<(String, String)> = (0..spec.entity_count)
        .map(|e| (src_label(e), tgt_label(e)))
        .filter(|(a, b)| in_src.contains(a) && in_tgt.contains(b))
        .collect();
    let mut shuffled = alignment.clone();
    shuffled.shuffle(&mut stream_rng(spec.rng_seed, "synth", 4));
    let n_train = (shuffled.len() as f64 * spec.seed_fraction).round() as usize;
    let seeds_test = shuffled.split_off(n_train);

    let mut split_rng = stream_rng(spec.rng_seed, "synth", 5);
    Ok(SynthPair {
        source: split_kg(SOURCE_ID, source, spec, &mut split_rng),
        target: split_kg(TARGET_ID, target, spec, &mut split_rng),
        alignment,
        seeds_train: shuffled,
        seeds_test,
    })
}

fn write_lines<I, S>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut buf = String::new();
    for r in rows {
        buf.push_str(r.as_ref());
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn triple_lines(ts: &[LabelTriple]) -> impl Iterator<Item = String> + '_ {
    ts.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}"))
}

fn pair_lines(ps: &[(String, String)]) -> impl Iterator<Item = String> + '_ {
    ps.iter().map(|(a, b)| format!("{a}\t{b}"))
}

impl SynthPair {
    /// Writes the pair in the data-directory layout read by `load_dataset`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for kg in [&self.source, &self.target] {
            write_lines(&dir.join(format!("triples_{}.tsv", kg.id)), triple_lines(&kg.triples))?;
            for (name, part) in [("train", &kg.train), ("valid", &kg.valid), ("test", &kg.test)] {
                write_lines(&dir.join(format!("kgc_{name}_{}.tsv", kg.id)), triple_lines(part))?;
            }
        }
        let stem = format!("{SOURCE_ID}_{TARGET_ID}");
        write_lines(&dir.join(format!("alignment_{stem}.tsv")), pair_lines(&self.alignment))?;
        write_lines(&dir.join(format!("seeds_train_{stem}.tsv")), pair_lines(&self.seeds_train))?;
        write_lines(&dir.join(format!("seeds_test_{stem}.tsv")), pair_lines(&self.seeds_test))?;
        Ok(())
    }

    pub fn describe(&self) -> String {
        let mut s = String::new();
        for kg in [&self.source, &self.target] {
            writeln!(
                s,
                "{}: {} triples ({} train / {} valid / {} test)",
                kg.id,
                kg.triples.len(),
                kg.train.len(),
                kg.valid.len(),
                kg.test.len()
            )
            .unwrap();
        }
        write!(
            s,
            "alignment: {} pairs ({} train seeds / {} test)",
            self.alignment.len(),
            self.seeds_train.len(),
            self.seeds_test.len()
        )
        .unwrap();
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn lossless_pair_is_isomorphic() {
        let pair = generate(&SynthSpec::new(60, 3, 4.0, 0.0, 0.3, 9)).unwrap();
        let map: HashMap<&str, &str> = pair.alignment.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let tgt: HashSet<&LabelTriple> = pair.target.triples.iter().collect();
        assert_eq!(pair.source.triples.len(), pair.target.triples.len());
        for (h, r, t) in &pair.source.triples {
            let image = (map[h.as_str()].to_string(), r.clone(), map[t.as_str()].to_string());
            assert!(tgt.contains(&image));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SynthSpec::new(500, 4, 4.0, 0.2, 0.3, 11);
        assert_eq!(spec.base_triple_count(), 1000);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target.triples.len(), 1000);
    }

    #[test]
    fn splits_partition_each_kg() {
        let pair = generate(&SynthSpec::new(100, 3, 4.0, 0.1, 0.3, 2)).unwrap();
        for kg in [&pair.source, &pair.target] {
            let mut all: Vec<_> = kg.train.iter().chain(&kg.valid).chain(&kg.test).cloned().collect();
            let mut orig = kg.triples.clone();
            all.sort();
            orig.sort();
            assert_eq!(all, orig);
        }
        assert_eq!(pair.seeds_train.len() + pair.seeds_test.len(), pair.alignment.len());
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(generate(&SynthSpec::new(1, 3, 4.0, 0.0, 0.3, 1)).is_err());
        assert!(generate(&SynthSpec::new(10, 0, 4.0, 0.0, 0.3, 1)).is_err());
        assert!(generate(&SynthSpec::new(10, 2, 0.0, 0.0, 0.3, 1)).is_err());
        assert!(generate(&SynthSpec::new(10, 2, 2.0, 1.0, 0.3, 1)).is_err());
    }
}
