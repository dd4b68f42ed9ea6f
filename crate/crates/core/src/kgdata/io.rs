use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use super::{
    EntityId, InitialVectors, Kg, MultiKg, Provenance, SeedPair, SeedSet, TransferredTriple,
    Triple, Vocab,
};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Counts reported alongside a parsed file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Lines dropped because they repeat an earlier triple or pair.
    pub duplicates: usize,
    /// Lines dropped because a label could not be resolved.
    pub skipped: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn fields<'a>(path: &Path, line_no: usize, line: &'a str, want: usize) -> Result<Vec<&'a str>> {
    let parts: Vec<&str> = line.split('\t').collect();
    if parts.len() != want {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {want} tab-separated fields, found {}", parts.len()),
        });
    }
    Ok(parts)
}

/// Parses a `head⟨TAB⟩relation⟨TAB⟩tail` file into a fresh KG, assigning
/// entity ids in first-seen order and interning relations into `relations`.
pub fn parse_triples(path: &Path, kg_id: &str, relations: &mut Vocab) -> Result<(Kg, LoadReport)> {
    let mut entities = Vocab::new();
    let (triples, report) = parse_triples_with(path, &mut entities, relations)?;
    if triples.is_empty() {
        return Err(Error::Data(format!("{}: empty triple file", path.display())));
    }
    Ok((Kg::new(kg_id, entities, triples), report))
}

/// Parses triples, interning unseen labels into the given tables.
pub fn parse_triples_with(
    path: &Path,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<(Vec<Triple>, LoadReport)> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut report = LoadReport::default();
    for (no, line) in lines(&text) {
        let f = fields(path, no, line, 3)?;
        let h = entities.intern(f[0]);
        let r = relations.intern(f[1]);
        let t = entities.intern(f[2]);
        if seen.insert((h, r, t)) {
            triples.push(Triple::loaded(h, r, t));
        } else {
            report.duplicates += 1;
        }
    }
    Ok((triples, report))
}

/// Parses triples whose labels must already exist; unknown labels are errors.
pub fn read_triples_resolved(path: &Path, entities: &Vocab, relations: &Vocab) -> Result<Vec<Triple>> {
    let text = read(path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (no, line) in lines(&text) {
        let f = fields(path, no, line, 3)?;
        let unknown = |what: &str, label: &str| Error::Parse {
            path: path.to_path_buf(),
            line: no,
            message: format!("unknown {what} label {label:?}"),
        };
        let h = entities.get(f[0]).ok_or_else(|| unknown("entity", f[0]))?;
        let r = relations.get(f[1]).ok_or_else(|| unknown("relation", f[1]))?;
        let t = entities.get(f[2]).ok_or_else(|| unknown("entity", f[2]))?;
        if seen.insert((h, r, t)) {
            out.push(Triple::loaded(h, r, t));
        }
    }
    Ok(out)
}

pub fn write_triples(path: &Path, kg: &Kg, relations: &Vocab) -> Result<()> {
    let mut out = String::new();
    for t in kg.triples() {
        out.push_str(kg.entities.label(t.head.0));
        out.push('\t');
        out.push_str(relations.label(t.relation.0));
        out.push('\t');
        out.push_str(kg.entities.label(t.tail.0));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Sidecar of transferred triples: `head⟨TAB⟩relation⟨TAB⟩tail⟨TAB⟩epoch`.
pub fn write_transferred(path: &Path, kg: &Kg, relations: &Vocab) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for TransferredTriple { triple: t, epoch } in kg.transferred() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            kg.entities.label(t.head.0),
            relations.label(t.relation.0),
            kg.entities.label(t.tail.0),
            epoch
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses an `e⟨TAB⟩e*` seed file between `left` and `right`.
///
/// Pairs with an unresolvable label are skipped and counted; an entity
/// appearing in two different pairs is an error.
pub fn parse_seeds(
    path: &Path,
    kg_pair: (usize, usize),
    left: &Kg,
    right: &Kg,
) -> Result<(SeedSet, LoadReport)> {
    let text = read(path)?;
    let mut set = SeedSet::new(kg_pair);
    let mut report = LoadReport::default();
    let mut used_left = HashSet::new();
    let mut used_right = HashSet::new();
    let mut pairs_seen = HashSet::new();
    for (no, line) in lines(&text) {
        let f = fields(path, no, line, 2)?;
        let (Some(l), Some(r)) = (left.entities.get(f[0]), right.entities.get(f[1])) else {
            report.skipped += 1;
            continue;
        };
        if !pairs_seen.insert((l, r)) {
            report.duplicates += 1;
            continue;
        }
        if !used_left.insert(l) || !used_right.insert(r) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: no,
                message: format!("entity repeated across seed pairs ({} / {})", f[0], f[1]),
            });
        }
        set.pairs.push(SeedPair {
            left: EntityId(l),
            right: EntityId(r),
            provenance: Provenance::Given,
        });
    }
    Ok((set, report))
}

pub fn write_seeds(path: &Path, set: &SeedSet, left: &Kg, right: &Kg) -> Result<()> {
    let mut out = String::new();
    for p in &set.pairs {
        out.push_str(left.entities.label(p.left.0));
        out.push('\t');
        out.push_str(right.entities.label(p.right.0));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Deterministic seeded partition; the train side gets `floor(fraction · n)`.
pub fn split_seeds(set: &SeedSet, train_fraction: f64, rng_seed: u64) -> Result<(SeedSet, SeedSet)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Data(format!(
            "seed train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if set.len() < 2 {
        return Err(Error::Data(format!(
            "cannot split {} seed pair(s)",
            set.len()
        )));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    let (a, b) = set.kg_pair;
    order.shuffle(&mut stream_rng(rng_seed, "splits", (a * 1_000_003 + b) as u64));
    let n_train = (train_fraction * set.len() as f64).floor() as usize;
    let pick = |idx: &[usize]| SeedSet {
        kg_pair: set.kg_pair,
        pairs: idx.iter().map(|&i| set.pairs[i]).collect(),
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

/// Attaches pre-trained vectors (`label x1 x2 …`) to every entity and
/// relation whose label matches; the rest stay `None` (random init).
pub fn load_initial_vectors(path: &Path, multikg: &mut MultiKg) -> Result<()> {
    let text = read(path)?;
    let offsets = multikg.offsets();
    let mut entities = vec![None; multikg.total_entities()];
    let mut relations = vec![None; multikg.relation_count()];
    let mut dim: Option<usize> = None;
    for (no, line) in lines(&text) {
        let mut parts = line.split_whitespace();
        let label = parts.next().expect("non-blank line");
        let values = parts
            .map(|p| {
                p.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: no,
                    message: format!("not a number: {p:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: no,
                    message: format!("dimension mismatch: {} values, expected {d}", values.len()),
                })
            }
            _ => {}
        }
        for (k, kg) in multikg.kgs.iter().enumerate() {
            if let Some(e) = kg.entities.get(label) {
                entities[offsets[k] + e] = Some(values.clone());
            }
        }
        if let Some(r) = multikg.relations.get(label) {
            relations[r] = Some(values);
        }
    }
    let Some(dim) = dim else {
        return Err(Error::Data(format!("{}: empty vector file", path.display())));
    };
    if dim == 0 {
        return Err(Error::Data(format!("{}: vectors have no coordinates", path.display())));
    }
    multikg.initial_vectors = Some(InitialVectors {
        dim,
        entities,
        relations,
    });
    Ok(())
}

/// Lower-case hex SHA-256 of a file's bytes.
pub fn sha256_file(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write(dir: &TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn single_self_loop() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.tsv", "a\tr\ta\n");
        let (kg, report) = parse_triples(&p, "x", &mut Vocab::new()).unwrap();
        assert_eq!(kg.entity_count(), 1);
        assert_eq!(kg.relation_count(), 1);
        assert_eq!(kg.triples(), &[Triple::loaded(0, 0, 0)]);
        assert_eq!(report.duplicates, 0);
    }

    #[test]
    fn duplicate_lines_are_dropped_and_counted() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.tsv", "a\tr\tb\na\tr\tb\n");
        let (kg, report) = parse_triples(&p, "x", &mut Vocab::new()).unwrap();
        assert_eq!(kg.triples().len(), 1);
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.tsv", "a\tr\tb\na\tr\n");
        match parse_triples(&p, "x", &mut Vocab::new()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_rejected() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "t.tsv", "");
        let err = parse_triples(&p, "x", &mut Vocab::new()).unwrap_err();
        assert!(err.to_string().contains("empty triple file"));
    }

    fn two_kgs(dir: &TempDir) -> (Kg, Kg) {
        let mut rel = Vocab::new();
        let body: String = (0..10).map(|i| format!("a{i}\tr\ta{}\n", (i + 1) % 10)).collect();
        let (k1, _) = parse_triples(&write(dir, "k1.tsv", &body), "k1", &mut rel).unwrap();
        let body: String = (0..10).map(|i| format!("b{i}\tr\tb{}\n", (i + 1) % 10)).collect();
        let (k2, _) = parse_triples(&write(dir, "k2.tsv", &body), "k2", &mut rel).unwrap();
        (k1, k2)
    }

    #[test]
    fn seeds_resolve_and_skip_unknown() {
        let dir = TempDir::new().unwrap();
        let (k1, k2) = two_kgs(&dir);
        let body: String = (0..10).map(|i| format!("a{i}\tb{i}\n")).collect();
        let (set, report) = parse_seeds(&write(&dir, "s.tsv", &body), (0, 1), &k1, &k2).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(report.skipped, 0);

        let (set, report) =
            parse_seeds(&write(&dir, "s2.tsv", "a0\tb0\nzz\tb1\n"), (0, 1), &k1, &k2).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(report.skipped, 1);
    }

    #[test]
    fn seeds_must_be_one_to_one() {
        let dir = TempDir::new().unwrap();
        let (k1, k2) = two_kgs(&dir);
        let err = parse_seeds(&write(&dir, "s.tsv", "a0\tb0\na0\tb1\n"), (0, 1), &k1, &k2);
        assert!(err.is_err());
    }

    fn seed_set(n: usize) -> SeedSet {
        SeedSet {
            kg_pair: (0, 1),
            pairs: (0..n)
                .map(|i| SeedPair {
                    left: EntityId(i),
                    right: EntityId(i),
                    provenance: Provenance::Given,
                })
                .collect(),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let (tr, te) = split_seeds(&seed_set(100), 0.5, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (50, 50));
        let (tr2, _) = split_seeds(&seed_set(100), 0.5, 7).unwrap();
        assert_eq!(tr, tr2);
        let (tr, te) = split_seeds(&seed_set(7), 0.5, 7).unwrap();
        assert_eq!((tr.len(), te.len()), (3, 4));
        assert!(split_seeds(&seed_set(1), 0.5, 7).is_err());
        assert!(split_seeds(&seed_set(10), 1.0, 7).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let set = seed_set(37);
        let (tr, te) = split_seeds(&set, 0.3, 11).unwrap();
        let mut all: Vec<_> = tr.pairs.iter().chain(&te.pairs).map(|p| p.left).collect();
        all.sort();
        assert_eq!(all, (0..37).map(EntityId).collect::<Vec<_>>());
    }

    #[test]
    fn vectors_attach_and_fall_back() {
        let dir = TempDir::new().unwrap();
        let (k1, k2) = two_kgs(&dir);
        let rel = Vocab::from_labels(["r"]);
        let mut m = MultiKg::new(vec![k1, k2], rel);
        let mut body = String::new();
        for k in ["a", "b"] {
            for i in 0..10 {
                if (k, i) != ("b", 3) {
                    body.push_str(&format!("{k}{i} 0.5 -1 2\n"));
                }
            }
        }
        body.push_str("r 1 1 1\n");
        load_initial_vectors(&write(&dir, "v.tsv", &body), &mut m).unwrap();
        let v = m.initial_vectors.as_ref().unwrap();
        assert_eq!(v.dim, 3);
        assert_eq!(v.random_init_count(), 1);
        assert!(v.entities[13].is_none());
        m.validate().unwrap();

        let bad = write(&dir, "bad.tsv", "a0 1 2\na1 1 2 3\n");
        assert!(load_initial_vectors(&bad, &mut m).is_err());
    }

    proptest! {
        #[test]
        fn triple_file_round_trip(edges in proptest::collection::vec((0usize..8, 0usize..3, 0usize..8), 1..40)) {
            let dir = TempDir::new().unwrap();
            let body: String = edges.iter().map(|(h, r, t)| format!("e{h}\tr{r}\te{t}\n")).collect();
            let mut rel = Vocab::new();
            let (kg, _) = parse_triples(&write(&dir, "a.tsv", &body), "x", &mut rel).unwrap();
            let out = dir.path().join("b.tsv");
            write_triples(&out, &kg, &rel).unwrap();
            let mut rel2 = Vocab::new();
            let (kg2, _) = parse_triples(&out, "x", &mut rel2).unwrap();
            prop_assert_eq!(kg, kg2);
            prop_assert_eq!(rel, rel2);
        }
    }
}
