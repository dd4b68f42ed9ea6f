//! Entropy-driven seed enlargement and cross-KG triple transfer.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::diff::{softmax_in_place, Tensor};
use crate::error::{Error, Result};
use crate::kgdata::{EntityId, MultiKg, Origin, Provenance, SeedPair, SeedSet, TransferredTriple, Triple};

/// Entropies for one KG pair. `h_tilde` is fixed from the untrained model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyState {
    pub h_tilde: f64,
    pub h_current: f64,
}

/// `−Σ_e Σ_{e*} P ln P` with `P` the row softmax of the raw entries.
pub fn matrix_entropy(matrix: &Tensor) -> f64 {
    let mut total = 0.0;
    let mut row = Vec::with_capacity(matrix.cols());
    for r in 0..matrix.rows() {
        row.clear();
        row.extend_from_slice(matrix.row(r));
        softmax_in_place(&mut row);
        for &p in &row {
            if p > 0.0 {
                total -= p * p.ln();
            }
        }
    }
    total
}

/// `floor(β · (H̃ − H)/H̃ · min(|E|, |E*|))`, clamped at 0.
pub fn seed_budget(h_tilde: f64, h_current: f64, beta: f64, e_count: usize, e_star_count: usize) -> Result<usize> {
    if h_tilde <= 0.0 {
        return Err(Error::DegenerateEntropy);
    }
    let q = (beta * (h_tilde - h_current) / h_tilde * e_count.min(e_star_count) as f64).floor();
    Ok(if q > 0.0 { q as usize } else { 0 })
}

/// Given pairs of `seeds` plus up to `q` new pairs taken by descending
/// matrix entry, skipping any pair that reuses an entity. Earlier enlarged
/// pairs are dropped. Ties go to `(row, col)` ascending.
pub fn enlarge_seeds(matrix: &Tensor, q: usize, seeds: &SeedSet) -> SeedSet {
    let mut out = SeedSet::new(seeds.kg_pair);
    out.pairs.extend(seeds.given().copied());
    if q == 0 {
        return out;
    }
    let mut left: HashSet<usize> = out.pairs.iter().map(|p| p.left.0).collect();
    let mut right: HashSet<usize> = out.pairs.iter().map(|p| p.right.0).collect();
    let cols = matrix.cols();
    let data = matrix.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    let mut added = 0;
    for i in order {
        if added == q {
            break;
        }
        let (r, c) = (i / cols, i % cols);
        if left.contains(&r) || right.contains(&c) {
            continue;
        }
        left.insert(r);
        right.insert(c);
        out.pairs.push(SeedPair {
            left: EntityId(r),
            right: EntityId(c),
            provenance: Provenance::Enlarged,
        });
        added += 1;
    }
    out
}

/// Rebuilds every KG's transferred triples from `seed_sets`.
///
/// For aligned pairs `(e, e*)`, `(e', e'*)` and a loaded triple `(e, r, e')`
/// of one KG, `(e*, r, e'*)` is added to the other KG unless it is already
/// loaded there; both directions apply. Triples present before keep their
/// epoch, and triples no longer implied are removed. Returns how many
/// triples are new.
pub fn transfer_triples(multikg: &mut MultiKg, seed_sets: &[SeedSet], epoch: usize) -> usize {
    let n = multikg.kgs.len();
    let mut fresh: Vec<BTreeSet<(usize, usize, usize)>> = vec![BTreeSet::new(); n];
    let loaded: Vec<HashSet<(usize, usize, usize)>> = multikg
        .kgs
        .iter()
        .map(|kg| kg.triples().iter().map(Triple::key).collect())
        .collect();
    for set in seed_sets {
        let (a, b) = set.kg_pair;
        let forward: HashMap<usize, usize> = set.pairs.iter().map(|p| (p.left.0, p.right.0)).collect();
        let backward: HashMap<usize, usize> = set.pairs.iter().map(|p| (p.right.0, p.left.0)).collect();
        for (src, dst, map) in [(a, b, &forward), (b, a, &backward)] {
            for t in multikg.kgs[src].triples() {
                let (Some(&h), Some(&tl)) = (map.get(&t.head.0), map.get(&t.tail.0)) else {
                    continue;
                };
                let key = (h, t.relation.0, tl);
                if !loaded[dst].contains(&key) {
                    fresh[dst].insert(key);
                }
            }
        }
    }
    let mut added = 0;
    for (kg, keys) in multikg.kgs.iter_mut().zip(fresh) {
        let previous: HashMap<(usize, usize, usize), usize> =
            kg.transferred().iter().map(|t| (t.triple.key(), t.epoch)).collect();
        let next: Vec<TransferredTriple> = keys
            .into_iter()
            .map(|(h, r, t)| {
                let epoch = previous.get(&(h, r, t)).copied().unwrap_or_else(|| {
                    added += 1;
                    epoch
                });
                TransferredTriple {
                    triple: Triple {
                        origin: Origin::Transferred,
                        ..Triple::loaded(h, r, t)
                    },
                    epoch,
                }
            })
            .collect();
        if next != kg.transferred() {
            kg.set_transferred(next);
        }
    }
    added
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::{Kg, Vocab};
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_examples() {
        assert_abs_diff_eq!(matrix_entropy(&Tensor::filled(2, 2, 0.3)), 2.0 * 2f64.ln(), epsilon = 1e-12);
        assert_eq!(matrix_entropy(&Tensor::scalar(0.7)), 0.0);
        let row = Tensor::row_vector(&[10.0, 0.0]);
        let p1 = 1.0 / (1.0 + (-10f64).exp());
        let p2 = 1.0 - p1;
        assert_abs_diff_eq!(p1, 0.9999546, epsilon = 1e-7);
        assert_abs_diff_eq!(p2, 4.54e-5, epsilon = 1e-7);
        assert_abs_diff_eq!(matrix_entropy(&row), -(p1 * p1.ln() + p2 * p2.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(matrix_entropy(&row), 5.0e-4, epsilon = 1e-5);
    }

    #[test]
    fn budget_examples() {
        assert_eq!(seed_budget(3.0, 3.0, 0.2, 100, 120).unwrap(), 0);
        assert_eq!(seed_budget(3.0, 0.0, 0.2, 100, 120).unwrap(), 20);
        assert_eq!(seed_budget(10.0, 5.0, 0.2, 100, 100).unwrap(), 10);
        assert_eq!(seed_budget(1.0, 2.0, 0.3, 50, 50).unwrap(), 0);
        assert!(matches!(seed_budget(0.0, 0.0, 0.2, 5, 5), Err(Error::DegenerateEntropy)));
    }

    fn given(pairs: &[(usize, usize)]) -> SeedSet {
        SeedSet {
            kg_pair: (0, 1),
            pairs: pairs
                .iter()
                .map(|&(l, r)| SeedPair {
                    left: EntityId(l),
                    right: EntityId(r),
                    provenance: Provenance::Given,
                })
                .collect(),
        }
    }

    #[test]
    fn enlarge_examples() {
        let m = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let s = enlarge_seeds(&m, 0, &given(&[(1, 0)]));
        assert_eq!(s, given(&[(1, 0)]));

        let s = enlarge_seeds(&m, 2, &given(&[]));
        let got: Vec<_> = s.pairs.iter().map(|p| (p.left.0, p.right.0)).collect();
        assert_eq!(got, vec![(0, 0), (1, 1)]);
        assert!(s.pairs.iter().all(|p| p.provenance == Provenance::Enlarged));

        // best entry (0, 0) conflicts with the given seed on row 0
        let m3 = Tensor::from_rows(&[vec![0.9, 0.5, 0.1], vec![0.3, 0.2, 0.7], vec![0.0, 0.6, 0.4]]).unwrap();
        let s = enlarge_seeds(&m3, 1, &given(&[(0, 2)]));
        assert_eq!(s.len(), 2);
        assert_eq!((s.pairs[1].left.0, s.pairs[1].right.0), (2, 1));

        // earlier enlarged pairs are discarded
        let mut prev = given(&[(0, 2)]);
        prev.pairs.push(SeedPair {
            left: EntityId(1),
            right: EntityId(0),
            provenance: Provenance::Enlarged,
        });
        assert_eq!(enlarge_seeds(&m3, 0, &prev), given(&[(0, 2)]));
    }

    fn two_kg_example() -> MultiKg {
        // KG: A..E, KG*: A*..E*; relations r1..r4.
        let labels = ["A", "B", "C", "D", "E"];
        let rel = Vocab::from_labels(["r1", "r2", "r3", "r4"]);
        let kg = Kg::new(
            "kg",
            Vocab::from_labels(labels),
            vec![Triple::loaded(0, 0, 2), Triple::loaded(1, 1, 2), Triple::loaded(3, 2, 4)],
        );
        let kg_star = Kg::new(
            "kg_star",
            Vocab::from_labels(labels.map(|l| format!("{l}*"))),
            vec![Triple::loaded(0, 0, 2), Triple::loaded(1, 3, 0), Triple::loaded(3, 2, 4)],
        );
        MultiKg::new(vec![kg, kg_star], rel)
    }

    #[test]
    fn two_kg_transfer_example() {
        let mut m = two_kg_example();
        let seeds = given(&[(1, 1), (0, 0)]);
        assert_eq!(transfer_triples(&mut m, std::slice::from_ref(&seeds), 1), 1);
        let keys: Vec<_> = m.kgs[0].transferred().iter().map(|t| t.triple.key()).collect();
        assert_eq!(keys, vec![(1, 3, 0)]);
        assert!(m.kgs[1].transferred().is_empty());
        assert_eq!(transfer_triples(&mut m, &[seeds], 2), 0);
        assert_eq!(m.kgs[0].transferred()[0].epoch, 1);
        assert!(m.kgs[0].neighbor_set(EntityId(1)).iter().any(|&(e, r)| e.0 == 0 && r.0 == 3));
    }

    #[test]
    fn identical_kgs_transfer_nothing() {
        let mut m = two_kg_example();
        let t: Vec<Triple> = m.kgs[0].triples().to_vec();
        m.kgs[1].set_triples(t);
        let seeds = given(&[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
        assert_eq!(transfer_triples(&mut m, &[seeds], 1), 0);
    }

    #[test]
    fn dropped_pairs_remove_their_triples() {
        let mut m = two_kg_example();
        let mut seeds = given(&[(1, 1)]);
        seeds.pairs.push(SeedPair {
            left: EntityId(0),
            right: EntityId(0),
            provenance: Provenance::Enlarged,
        });
        assert_eq!(transfer_triples(&mut m, &[seeds], 1), 1);
        assert_eq!(transfer_triples(&mut m, &[given(&[(1, 1)])], 2), 0);
        assert!(m.kgs[0].transferred().is_empty());
    }
}
