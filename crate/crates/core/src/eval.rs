//! Ranking evaluation: filtered tail prediction for completion, candidate
//! ranking for alignment, MRR and Hits@k.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::build_alignment_matrix;
use crate::completion::tail_scores;
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::kgdata::{MultiKg, SeedSet, Triple};
use crate::rgnn::LayerEmbeddings;

pub const DEFAULT_HITS: [usize; 2] = [1, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankResult {
    pub query: usize,
    pub rank: usize,
    pub candidates: usize,
}

/// Rank of `scores[truth]` among `candidates`: one plus the number of other
/// candidates scoring at least as high.
fn pessimistic_rank(query: usize, scores: &[f64], truth: usize, keep: impl Fn(usize) -> bool) -> RankResult {
    let target = scores[truth];
    let mut rank = 1;
    let mut candidates = 1;
    for (i, &s) in scores.iter().enumerate() {
        if i == truth || !keep(i) {
            continue;
        }
        candidates += 1;
        if s >= target {
            rank += 1;
        }
    }
    RankResult { query, rank, candidates }
}

/// Filtered tail rank of `test` (local ids) given the score of every tail.
/// Tails `t ≠ test.tail` with `(h, r, t)` in `known` are removed.
pub fn kgc_rank(query: usize, test: (usize, usize, usize), scores: &[f64], known: &HashSet<(usize, usize, usize)>) -> RankResult {
    let (h, r, truth) = test;
    pessimistic_rank(query, scores, truth, |t| !known.contains(&(h, r, t)))
}

/// Rank of the true counterpart among all target entities.
pub fn kga_rank(query: usize, truth: usize, similarities: &[f64]) -> RankResult {
    pessimistic_rank(query, similarities, truth, |_| true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    pub mrr: f64,
    /// `(k, Hits@k)` in the order requested.
    pub hits: Vec<(usize, f64)>,
}

impl Metrics {
    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.iter().find(|h| h.0 == k).map(|h| h.1)
    }
}

pub fn aggregate(ranks: &[RankResult], ks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Eval("no ranks to aggregate".into()));
    }
    let n = ranks.len() as f64;
    let mrr = ranks.iter().map(|r| 1.0 / r.rank as f64).sum::<f64>() / n;
    let hits = ks
        .iter()
        .map(|&k| (k, ranks.iter().filter(|r| r.rank <= k).count() as f64 / n))
        .collect();
    Ok(Metrics {
        count: ranks.len(),
        mrr,
        hits,
    })
}

/// Filtered ranks for `queries` of KG `kg` under completion embeddings `emb`
/// (global tables). The filter is the KG's train ∪ valid ∪ test.
pub fn evaluate_kgc(multikg: &MultiKg, emb: &LayerEmbeddings, kg: usize, queries: &[Triple]) -> Vec<RankResult> {
    let off = multikg.offsets()[kg];
    let count = multikg.kgs[kg].entity_count();
    let known = multikg.known_triples(kg);
    queries
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let scores = tail_scores(emb, off + t.head.0, t.relation.0, off..off + count);
            kgc_rank(i, t.key(), &scores, &known)
        })
        .collect()
}

/// Ranks of each test pair's right entity among every entity of the right
/// KG, scored by `1 − d_cos` of final embeddings.
pub fn evaluate_kga(multikg: &MultiKg, finals: &Tensor, pairs: &SeedSet) -> Result<Vec<RankResult>> {
    let (a, b) = pairs.kg_pair;
    let offsets = multikg.offsets();
    let rows = |k: usize| offsets[k]..offsets[k] + multikg.kgs[k].entity_count();
    let left_rows: Vec<usize> = pairs.pairs.iter().map(|p| offsets[a] + p.left.0).collect();
    let left = finals.select_rows(&left_rows);
    let right = finals.select_rows(&rows(b).collect::<Vec<_>>());
    let matrix = build_alignment_matrix((a, b), &left, &right)?;
    Ok(pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(i, p)| kga_rank(i, p.right.0, matrix.values.row(i)))
        .collect())
}

/// One line of the results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub scope: String,
    pub metric: String,
    pub value: f64,
}

/// Appends MRR and Hits@k rows for one scope.
pub fn push_rows(rows: &mut Vec<ResultRow>, task: &str, scope: &str, m: &Metrics) {
    let mut push = |metric: String, value: f64| {
        rows.push(ResultRow {
            task: task.into(),
            scope: scope.into(),
            metric,
            value,
        })
    };
    push("MRR".into(), m.mrr);
    for &(k, v) in &m.hits {
        push(format!("Hits@{k}"), v);
    }
}

/// Writes `results.tsv` (task, scope, metric, value) and `summary.txt`.
pub fn write_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut tsv = String::from("task\tscope\tmetric\tvalue\n");
    for r in rows {
        writeln!(tsv, "{}\t{}\t{}\t{:.6}", r.task, r.scope, r.metric, r.value).expect("string write");
    }
    let path = dir.join("results.tsv");
    fs::write(&path, tsv).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("summary.txt");
    fs::write(&path, summary_table(rows)).map_err(|e| Error::io(&path, e))
}

/// Text table: one block per task, a row per scope, a column per metric.
/// Values are percentages.
pub fn summary_table(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    let mut tasks: Vec<&str> = Vec::new();
    for r in rows {
        if !tasks.contains(&r.task.as_str()) {
            tasks.push(&r.task);
        }
    }
    for task in tasks {
        let of_task: Vec<&ResultRow> = rows.iter().filter(|r| r.task == task).collect();
        let mut metrics: Vec<&str> = Vec::new();
        let mut scopes: Vec<&str> = Vec::new();
        for r in &of_task {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
            if !scopes.contains(&r.scope.as_str()) {
                scopes.push(&r.scope);
            }
        }
        let width = scopes.iter().map(|s| s.len()).max().unwrap_or(0).max(task.len());
        write!(out, "{task:<width$}").unwrap();
        for m in &metrics {
            write!(out, "  {m:>8}").unwrap();
        }
        out.push('\n');
        for s in &scopes {
            write!(out, "{s:<width$}").unwrap();
            for m in &metrics {
                match of_task.iter().find(|r| r.scope == *s && r.metric == *m) {
                    Some(r) => write!(out, "  {:>8.2}", 100.0 * r.value).unwrap(),
                    None => write!(out, "  {:>8}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn kgc_examples() {
        let known: HashSet<_> = [(0, 0, 0), (0, 0, 1)].into_iter().collect();
        let r = kgc_rank(0, (0, 0, 1), &[-1.0, -2.0, -3.0], &known);
        assert_eq!((r.rank, r.candidates), (1, 2));
        let r = kgc_rank(0, (0, 0, 1), &[-1.0, 0.0, -3.0], &HashSet::new());
        assert_eq!(r.rank, 1);
        let r = kgc_rank(0, (0, 0, 1), &[0.5; 4], &HashSet::new());
        assert_eq!(r.rank, 4);
    }

    #[test]
    fn kga_examples() {
        assert_eq!(kga_rank(0, 0, &[1.0, 0.0, 0.0]).rank, 1);
        assert_eq!(kga_rank(0, 0, &[0.9, 0.95, 0.8]).rank, 2);
        assert_eq!(kga_rank(0, 1, &[1.0, 1.0, 0.2]).rank, 2);
    }

    #[test]
    fn aggregate_examples() {
        let rr = |ranks: &[usize]| {
            ranks
                .iter()
                .map(|&rank| RankResult { query: 0, rank, candidates: 10 })
                .collect::<Vec<_>>()
        };
        let m = aggregate(&rr(&[1, 2, 10]), &[1, 10]).unwrap();
        assert_abs_diff_eq!(m.mrr, 0.53333, epsilon = 1e-5);
        assert_abs_diff_eq!(m.hits_at(1).unwrap(), 0.33333, epsilon = 1e-5);
        assert_eq!(m.hits_at(10), Some(1.0));
        let m = aggregate(&rr(&[1, 1]), &[1, 3]).unwrap();
        assert_eq!((m.mrr, m.hits_at(1), m.hits_at(3)), (1.0, Some(1.0), Some(1.0)));
        assert!(aggregate(&[], &[1]).is_err());
    }

    #[test]
    fn summary_layout() {
        let mut rows = Vec::new();
        let m = Metrics {
            count: 1,
            mrr: 0.5,
            hits: vec![(1, 0.25)],
        };
        push_rows(&mut rows, "kgc", "en", &m);
        push_rows(&mut rows, "kgc", "fr", &m);
        let s = summary_table(&rows);
        assert!(s.starts_with("kgc       MRR    Hits@1\n"));
        assert!(s.contains("en      50.00     25.00"));
    }
}
