//! Alignment side: fusion with completion tables, final heads, the
//! alignment matrix, the margin loss over nearest negatives, and greedy
//! matching.

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{matmul_plain, norm2, Activation, Graph, Mlp, ParamId, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::rgnn::{Encoder, LayerEmbeddings, LayerVars, Topology};

/// Per-layer fusion maps `2n → n`, for layers `0..=K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub entity: Vec<Mlp>,
    pub relation: Vec<Mlp>,
}

impl FusionParams {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, dim: usize, depth: usize) -> Self {
        let make = |params: &mut Params, rng: &mut R, name: String| {
            Mlp::new(params, rng, &name, &[2 * dim, dim], &[Activation::Identity])
        };
        let mut entity = Vec::new();
        let mut relation = Vec::new();
        for k in 0..=depth {
            entity.push(make(params, rng, format!("fusion{k}.entity")));
            relation.push(make(params, rng, format!("fusion{k}.relation")));
        }
        FusionParams { entity, relation }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.entity
            .iter()
            .chain(&self.relation)
            .flat_map(Mlp::param_ids)
            .collect()
    }
}

/// Replaces layer-`k` alignment tables with `MLP(c ∘ a)`. The completion
/// tables enter as constants.
#[allow(clippy::too_many_arguments)]
pub fn sir_fuse(
    g: &mut Graph,
    params: &Params,
    fusion: &FusionParams,
    k: usize,
    completion: &LayerEmbeddings,
    entities: Var,
    relations: Var,
    trainable: bool,
) -> Result<(Var, Var)> {
    let ce = g.constant(completion.entities[k].clone());
    let cr = g.constant(completion.relations[k].clone());
    let je = g.concat(&[ce, entities])?;
    let jr = g.concat(&[cr, relations])?;
    let e = fusion.entity[k].forward(g, params, je, trainable)?;
    let r = fusion.relation[k].forward(g, params, jr, trainable)?;
    Ok((e, r))
}

/// Final heads `(K+1)n → n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub entity: Mlp,
    pub relation: Mlp,
}

impl HeadParams {
    pub fn new<R: Rng>(params: &mut Params, rng: &mut R, dim: usize, depth: usize) -> Self {
        let input = (depth + 1) * dim;
        HeadParams {
            entity: Mlp::new(params, rng, "head.entity", &[input, dim], &[Activation::Identity]),
            relation: Mlp::new(params, rng, "head.relation", &[input, dim], &[Activation::Identity]),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.entity.param_ids();
        ids.extend(self.relation.param_ids());
        ids
    }
}

/// Concatenates layers `0..=K` and applies the heads.
pub fn final_embeddings(
    g: &mut Graph,
    params: &Params,
    heads: &HeadParams,
    layers: &LayerVars,
    trainable: bool,
) -> Result<(Var, Var)> {
    let e = g.concat(&layers.entities)?;
    let r = g.concat(&layers.relations)?;
    Ok((
        heads.entity.forward(g, params, e, trainable)?,
        heads.relation.forward(g, params, r, trainable)?,
    ))
}

/// Alignment encoder, fusion maps, and heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentNet {
    pub encoder: Encoder,
    pub fusion: FusionParams,
    pub heads: HeadParams,
}

/// Graph nodes of one alignment forward pass.
#[derive(Clone, Debug)]
pub struct AlignmentVars {
    pub layers: LayerVars,
    pub entities: Var,
    pub relations: Var,
}

impl AlignmentNet {
    /// Runs `encoder` (which may be shared with the completion side) with
    /// fusion against `completion` when given, then the heads.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Params,
        encoder: &Encoder,
        topo: &Topology,
        completion: Option<&LayerEmbeddings>,
        trainable: bool,
    ) -> Result<AlignmentVars> {
        let layers = match completion {
            Some(c) => {
                let fusion = &self.fusion;
                let mut hook = |g: &mut Graph, k: usize, e: Var, r: Var| {
                    sir_fuse(g, params, fusion, k, c, e, r, trainable)
                };
                encoder.encode(g, params, topo, trainable, Some(&mut hook))?
            }
            None => encoder.encode(g, params, topo, trainable, None)?,
        };
        let (entities, relations) = final_embeddings(g, params, &self.heads, &layers, trainable)?;
        Ok(AlignmentVars {
            layers,
            entities,
            relations,
        })
    }
}

/// `A(e, e*) = 1 − d_cos(a_e, a_{e*})` for one KG pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentMatrix {
    pub kg_pair: (usize, usize),
    pub values: Tensor,
}

fn normalized(t: &Tensor) -> Result<Tensor> {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm2(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

fn transpose(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(t.cols(), t.rows());
    for r in 0..t.rows() {
        for c in 0..t.cols() {
            out.set(c, r, t.get(r, c));
        }
    }
    out
}

pub fn build_alignment_matrix(kg_pair: (usize, usize), src: &Tensor, tgt: &Tensor) -> Result<AlignmentMatrix> {
    if src.cols() != tgt.cols() {
        return Err(Error::shape("alignment_matrix", format!("{:?} vs {:?}", src.shape(), tgt.shape())));
    }
    let values = matmul_plain(&normalized(src)?, &transpose(&normalized(tgt)?));
    Ok(AlignmentMatrix { kg_pair, values })
}

/// Same-KG rows of `finals` ordered by descending cosine similarity to
/// `row`, excluding `row`; ties go to the lower id. Takes `k`.
fn nearest(unit: &Tensor, row: usize, range: &Range<usize>, k: usize) -> Vec<usize> {
    let q = unit.row(row);
    let mut cands: Vec<(f64, usize)> = range
        .clone()
        .filter(|&x| x != row)
        .map(|x| (crate::diff::dot(q, unit.row(x)), x))
        .collect();
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    cands.into_iter().take(k).map(|c| c.1).collect()
}

/// A positive seed pair with one of its corruptions, in global rows.
pub type NegativePair = ((usize, usize), (usize, usize));

/// For each seed `(e, e*)`: `(x, e*)` for the `k_neg` nearest `x` to `e` in
/// its KG, then `(e, y)` for the `k_neg` nearest `y` to `e*`.
pub fn nearest_negatives(
    seeds: &[(usize, usize)],
    finals: &Tensor,
    left: Range<usize>,
    right: Range<usize>,
    k_neg: usize,
) -> Result<Vec<NegativePair>> {
    if k_neg == 0 {
        return Err(Error::Alignment("alignment negatives must be at least 1".into()));
    }
    if left.len() < k_neg + 1 || right.len() < k_neg + 1 {
        return Err(Error::Alignment(format!(
            "a KG has fewer than {} entities for {k_neg} nearest negatives",
            k_neg + 1
        )));
    }
    let unit = normalized(finals)?;
    let mut out = Vec::with_capacity(seeds.len() * 2 * k_neg);
    for &(e, es) in seeds {
        for x in nearest(&unit, e, &left, k_neg) {
            out.push(((e, es), (x, es)));
        }
        for y in nearest(&unit, es, &right, k_neg) {
            out.push(((e, es), (e, y)));
        }
    }
    Ok(out)
}

/// Mean over pos-neg pairs of `max(0, γ + d(pos) − d(neg))`.
pub fn alignment_loss(g: &mut Graph, finals: Var, pairs: &[NegativePair], margin: f64) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let idx = |f: fn(&NegativePair) -> usize| pairs.iter().map(f).collect::<Vec<_>>();
    let pl = g.gather(finals, &idx(|p| p.0 .0))?;
    let pr = g.gather(finals, &idx(|p| p.0 .1))?;
    let nl = g.gather(finals, &idx(|p| p.1 .0))?;
    let nr = g.gather(finals, &idx(|p| p.1 .1))?;
    let dp = g.cosine_distance(pl, pr)?;
    let dn = g.cosine_distance(nl, nr)?;
    let gap = g.sub(dp, dn)?;
    let shifted = g.add_scalar(gap, margin);
    let hinge = g.relu(shifted);
    Ok(g.mean(hinge))
}

/// One matched pair with its matrix entry; ids are local to each KG.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub left: usize,
    pub right: usize,
    pub score: f64,
}

/// Greedy one-to-one matching: largest remaining entry first, ties by
/// `(row, col)` ascending.
pub fn greedy_match(matrix: &Tensor) -> Vec<Match> {
    let (rows, cols) = matrix.shape();
    let mut order: Vec<usize> = (0..rows * cols).collect();
    let data = matrix.data();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    let mut out = Vec::with_capacity(rows.min(cols));
    for i in order {
        let (r, c) = (i / cols, i % cols);
        if row_used[r] || col_used[c] {
            continue;
        }
        row_used[r] = true;
        col_used[c] = true;
        out.push(Match {
            left: r,
            right: c,
            score: data[i],
        });
        if out.len() == rows.min(cols) {
            break;
        }
    }
    out
}

/// Writes `e<TAB>e*<TAB>score` lines.
pub fn write_matching(path: &Path, matches: &[Match], left: &[String], right: &[String]) -> Result<()> {
    let mut buf = Vec::new();
    for m in matches {
        writeln!(buf, "{}\t{}\t{}", left[m.left], right[m.right], m.score).expect("write to memory");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}
