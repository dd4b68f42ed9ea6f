//! Multi-layer translational scoring and the completion losses.
//!
//! Entity and relation indices here are rows of the global tables, so callers
//! add KG offsets before building a batch.

use std::collections::HashSet;

use rand::Rng;

use crate::diff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rgnn::{LayerEmbeddings, LayerVars};

/// `(head, relation, tail)` in global rows.
pub type Key = (usize, usize, usize);

/// Attempts per negative before giving up.
pub const NEGATIVE_RETRIES: usize = 100;

/// `−‖h + r − t‖₁`.
pub fn score_layer(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    -h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).abs())
        .sum::<f64>()
}

/// Per-layer scores of one triple and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTriple {
    pub triple: Key,
    pub layers: Vec<f64>,
    pub total: f64,
}

pub fn score_triple(emb: &LayerEmbeddings, triple: Key) -> ScoredTriple {
    let (h, r, t) = triple;
    let layers: Vec<f64> = emb
        .entities
        .iter()
        .zip(&emb.relations)
        .map(|(e, rel)| score_layer(e.row(h), rel.row(r), e.row(t)))
        .collect();
    let total = layers.iter().sum();
    ScoredTriple { triple, layers, total }
}

pub fn score(emb: &LayerEmbeddings, triple: Key) -> f64 {
    score_triple(emb, triple).total
}

/// Scores of `(h, r, t)` for every `t` in `tails`, in order.
pub fn tail_scores(emb: &LayerEmbeddings, h: usize, r: usize, tails: std::ops::Range<usize>) -> Vec<f64> {
    let mut out = vec![0.0; tails.len()];
    let mut query = Vec::new();
    for (e, rel) in emb.entities.iter().zip(&emb.relations) {
        query.clear();
        query.extend(e.row(h).iter().zip(rel.row(r)).map(|(a, b)| a + b));
        for (slot, t) in out.iter_mut().zip(tails.clone()) {
            *slot -= query.iter().zip(e.row(t)).map(|(q, c)| (q - c).abs()).sum::<f64>();
        }
    }
    out
}

/// Row-wise `−‖h + r − t‖₁` at layer `k`, shape `B × 1`.
fn layer_scores(g: &mut Graph, layers: &LayerVars, k: usize, batch: &[Key]) -> Result<Var> {
    let hs: Vec<usize> = batch.iter().map(|t| t.0).collect();
    let rs: Vec<usize> = batch.iter().map(|t| t.1).collect();
    let ts: Vec<usize> = batch.iter().map(|t| t.2).collect();
    let h = g.gather(layers.entities[k], &hs)?;
    let r = g.gather(layers.relations[k], &rs)?;
    let t = g.gather(layers.entities[k], &ts)?;
    let hr = g.add(h, r)?;
    let diff = g.sub(hr, t)?;
    let l1 = g.l1_norm_row(diff);
    Ok(g.scale(l1, -1.0))
}

/// `Σ_k mean_pairs max(0, γ − f^k(pos) + f^k(neg))`.
pub fn ranking_loss(g: &mut Graph, layers: &LayerVars, pairs: &[(Key, Key)], margin: f64) -> Result<Var> {
    let pos: Vec<Key> = pairs.iter().map(|p| p.0).collect();
    let neg: Vec<Key> = pairs.iter().map(|p| p.1).collect();
    let mut total: Option<Var> = None;
    for k in 0..layers.entities.len() {
        if pairs.is_empty() {
            break;
        }
        let fp = layer_scores(g, layers, k, &pos)?;
        let fn_ = layer_scores(g, layers, k, &neg)?;
        let gap = g.sub(fn_, fp)?;
        let shifted = g.add_scalar(gap, margin);
        let hinge = g.relu(shifted);
        let term = g.mean(hinge);
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(crate::diff::Tensor::scalar(0.0))))
}

/// `Σ_k mean_pairs d_cos(c_e^k, c_{e*}^k)` over seed pairs in global rows.
pub fn alignment_constraint_loss(g: &mut Graph, layers: &LayerVars, seeds: &[(usize, usize)]) -> Result<Var> {
    let left: Vec<usize> = seeds.iter().map(|p| p.0).collect();
    let right: Vec<usize> = seeds.iter().map(|p| p.1).collect();
    let mut total: Option<Var> = None;
    for &table in &layers.entities {
        if seeds.is_empty() {
            break;
        }
        let a = g.gather(table, &left)?;
        let b = g.gather(table, &right)?;
        let d = g.cosine_distance(a, b)?;
        let term = g.mean(d);
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(crate::diff::Tensor::scalar(0.0))))
}

/// Loss parts of one completion step.
#[derive(Clone, Copy, Debug)]
pub struct CompletionLoss {
    pub ranking: Var,
    pub constraint: Var,
    pub total: Var,
}

/// `L_c = L_c1 + L_c2`.
pub fn completion_loss(
    g: &mut Graph,
    layers: &LayerVars,
    pairs: &[(Key, Key)],
    seeds: &[(usize, usize)],
    margin: f64,
) -> Result<CompletionLoss> {
    let ranking = ranking_loss(g, layers, pairs, margin)?;
    let constraint = alignment_constraint_loss(g, layers, seeds)?;
    let total = g.add(ranking, constraint)?;
    Ok(CompletionLoss {
        ranking,
        constraint,
        total,
    })
}

/// `m` corruptions per positive within entity rows `entities`. Head or tail is
/// chosen with equal probability; corruptions found in `known` are redrawn.
/// Output pairs are `(positive, negative)` in positive order.
pub fn sample_negatives<R: Rng>(
    positives: &[Key],
    known: &HashSet<Key>,
    entities: std::ops::Range<usize>,
    m: usize,
    rng: &mut R,
) -> Result<Vec<(Key, Key)>> {
    if m == 0 {
        return Err(Error::Sampling("negatives per positive must be at least 1".into()));
    }
    if entities.is_empty() {
        return Err(Error::Sampling("no entities to corrupt with".into()));
    }
    let mut out = Vec::with_capacity(positives.len() * m);
    for &pos in positives {
        for _ in 0..m {
            let mut found = None;
            for _ in 0..NEGATIVE_RETRIES {
                let e = rng.gen_range(entities.clone());
                let cand = if rng.gen_bool(0.5) {
                    (e, pos.1, pos.2)
                } else {
                    (pos.0, pos.1, e)
                };
                if cand != pos && !known.contains(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            let neg = found.ok_or_else(|| {
                Error::Sampling(format!(
                    "no valid corruption of {pos:?} after {NEGATIVE_RETRIES} attempts"
                ))
            })?;
            out.push((pos, neg));
        }
    }
    Ok(out)
}
