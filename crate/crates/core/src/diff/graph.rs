//! Tape of recorded operations and the reverse sweep over it.

use std::collections::BTreeMap;

use super::{ParamId, Params, Tensor};
use crate::error::{Error, Result};

/// Index of a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Concat(Vec<usize>),
    Tanh(usize),
    LeakyRelu(usize, f64),
    Relu(usize),
    Ln(usize),
    Gather(usize, Vec<usize>),
    SoftmaxRow(usize),
    SegmentSoftmax(usize, Vec<usize>),
    ScatterWeightedSum {
        values: usize,
        weights: usize,
        index: Vec<usize>,
    },
    L1NormRow(usize),
    CosineDistance(usize, usize),
    Sum(usize),
    Mean(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
///
/// Leaves either carry a gradient accumulator (`input`, trainable params) or
/// are constants. `backward` may be called more than once; leaf gradients
/// accumulate across calls until [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    bound: BTreeMap<ParamId, Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    /// Leaf that records a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter as a leaf. A parameter is bound at most once
    /// per graph; later calls return the same node.
    pub fn param(&mut self, params: &Params, id: ParamId, trainable: bool) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(params.get(id).clone(), Op::Leaf, trainable);
        self.bound.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v.0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Gradients of every bound trainable parameter that the last backward
    /// reached, in parameter-id order.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.bound
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].clone().map(|g| (id, g)))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if x.cols() != y.rows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", x.shape(), y.shape()),
            ));
        }
        let out = matmul_plain(x, y);
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::MatMul(a.0, b.0), rg))
    }

    fn elementwise_pair(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !x.same_shape(y) {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "add", |p, q| p + q, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "sub", |p, q| p - q, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise_pair(a, b, "mul", |p, q| p * q, Op::Mul(a.0, b.0))
    }

    /// `a + b` with the `1 × n` row `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if y.rows() != 1 || y.cols() != x.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + row {:?}", x.shape(), y.shape()),
            ));
        }
        let mut out = x.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(y.data()) {
                *o += b;
            }
        }
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::AddRow(a.0, b.0), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let x = &self.nodes[a.0].value;
        let data = x.data().iter().map(|v| f(*v)).collect();
        let out = Tensor::from_vec(x.rows(), x.cols(), data).expect("same length");
        let rg = self.rg(a.0);
        self.push(out, op, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |v| v * factor, Op::Scale(a.0, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |v| v + c, Op::AddScalar(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(a.0, slope),
        )
    }

    /// `max(0, x)`.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |v| v.max(0.0), Op::Relu(a.0))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Ln(a.0))
    }

    /// Column-wise concatenation; all parts must share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let rows = self.nodes[first.0].value.rows();
        let mut cols = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.rows() != rows {
                return Err(Error::shape(
                    "concat",
                    format!("row counts {rows} and {}", t.rows()),
                ));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.nodes[p.0].value.row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|p| self.rg(p.0));
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()), rg))
    }

    /// Rows of `a` picked by `index` (repeats allowed).
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let x = &self.nodes[a.0].value;
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape(
                "gather",
                format!("row {bad} out of {}", x.rows()),
            ));
        }
        let out = x.select_rows(index);
        let rg = self.rg(a.0);
        Ok(self.push(out, Op::Gather(a.0, index.to_vec()), rg))
    }

    /// Softmax across the columns of every row.
    pub fn softmax_row(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut out = x.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let rg = self.rg(a.0);
        self.push(out, Op::SoftmaxRow(a.0), rg)
    }

    /// Softmax of a column of logits within groups: entries sharing
    /// `segment[i]` are normalised together.
    pub fn segment_softmax(&mut self, logits: Var, segment: &[usize]) -> Result<Var> {
        let x = &self.nodes[logits.0].value;
        if x.cols() != 1 || x.rows() != segment.len() {
            return Err(Error::shape(
                "segment_softmax",
                format!("logits {:?} with {} segment ids", x.shape(), segment.len()),
            ));
        }
        let out = segment_softmax_plain(x.data(), segment);
        let out = Tensor::from_vec(out.len(), 1, out)?;
        let rg = self.rg(logits.0);
        Ok(self.push(out, Op::SegmentSoftmax(logits.0, segment.to_vec()), rg))
    }

    /// `out[index[e]] += weights[e] · values[e]` over `out_rows` output rows.
    pub fn scatter_weighted_sum(
        &mut self,
        values: Var,
        weights: Var,
        index: &[usize],
        out_rows: usize,
    ) -> Result<Var> {
        let (v, w) = (&self.nodes[values.0].value, &self.nodes[weights.0].value);
        if w.cols() != 1 || w.rows() != v.rows() || index.len() != v.rows() {
            return Err(Error::shape(
                "scatter_weighted_sum",
                format!(
                    "values {:?}, weights {:?}, {} indices",
                    v.shape(),
                    w.shape(),
                    index.len()
                ),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::shape(
                "scatter_weighted_sum",
                format!("target row {bad} out of {out_rows}"),
            ));
        }
        let mut out = Tensor::zeros(out_rows, v.cols());
        for (e, &dst) in index.iter().enumerate() {
            let weight = w.data()[e];
            let src = v.row(e);
            for (o, s) in out.row_mut(dst).iter_mut().zip(src) {
                *o += weight * s;
            }
        }
        let rg = self.rg(values.0) || self.rg(weights.0);
        Ok(self.push(
            out,
            Op::ScatterWeightedSum {
                values: values.0,
                weights: weights.0,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// `‖row‖₁` for every row, as an `m × 1` column.
    pub fn l1_norm_row(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().fold(0.0, |acc, v| acc + v.abs()))
            .collect();
        let out = Tensor::from_vec(x.rows(), 1, data).expect("one per row");
        let rg = self.rg(a.0);
        self.push(out, Op::L1NormRow(a.0), rg)
    }

    /// Row-wise `1 − cos(a_i, b_i)` as an `m × 1` column.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !x.same_shape(y) {
            return Err(Error::shape(
                "cosine_distance",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let mut data = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            data.push(super::tensor::cosine_distance(x.row(r), y.row(r))?);
        }
        let out = Tensor::from_vec(x.rows(), 1, data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(out, Op::CosineDistance(a.0, b.0), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.nodes[a.0].value.data().iter().fold(0.0, |acc, v| acc + v);
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(total), Op::Sum(a.0), rg)
    }

    /// Mean of all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let total = x.data().iter().fold(0.0, |acc, v| acc + v);
        let mean = if x.is_empty() {
            0.0
        } else {
            total / x.len() as f64
        };
        let rg = self.rg(a.0);
        self.push(Tensor::scalar(mean), Op::Mean(a.0), rg)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate into every
    /// reachable leaf that records one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::Diff(format!(
                "backward needs a scalar loss, got {}x{}",
                shape.0, shape.1
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let mut send = |target: usize, t: Tensor| {
            if !nodes[target].requires_grad {
                return;
            }
            match &mut adj[target] {
                Some(acc) => acc.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let val = |n: usize| &nodes[n].value;
        let map = |t: &Tensor, f: &dyn Fn(usize, f64) -> f64| {
            let data = t.data().iter().enumerate().map(|(k, v)| f(k, *v)).collect();
            Tensor::from_vec(t.rows(), t.cols(), data).expect("same length")
        };

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                if nodes[*a].requires_grad {
                    send(*a, matmul_nt(g, y));
                }
                if nodes[*b].requires_grad {
                    send(*b, matmul_tn(x, g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, g.scaled(-1.0));
            }
            Op::Mul(a, b) => {
                let (x, y) = (val(*a), val(*b));
                send(*a, map(g, &|k, gv| gv * y.data()[k]));
                send(*b, map(g, &|k, gv| gv * x.data()[k]));
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone());
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, gv) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                send(*b, db);
            }
            Op::Scale(a, factor) => send(*a, g.scaled(*factor)),
            Op::AddScalar(a) => send(*a, g.clone()),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = val(p).cols();
                    let mut part = Tensor::zeros(g.rows(), cols);
                    for r in 0..g.rows() {
                        part.row_mut(r)
                            .copy_from_slice(&g.row(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    send(p, part);
                }
            }
            Op::Tanh(a) => {
                let y = &nodes[i].value;
                send(*a, map(g, &|k, gv| gv * (1.0 - y.data()[k] * y.data()[k])));
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                send(
                    *a,
                    map(g, &|k, gv| if x.data()[k] > 0.0 { gv } else { gv * slope }),
                );
            }
            Op::Relu(a) => {
                let x = val(*a);
                send(*a, map(g, &|k, gv| if x.data()[k] > 0.0 { gv } else { 0.0 }));
            }
            Op::Ln(a) => {
                let x = val(*a);
                send(*a, map(g, &|k, gv| gv / x.data()[k]));
            }
            Op::Gather(a, index) => {
                let x = val(*a);
                let mut da = Tensor::zeros(x.rows(), x.cols());
                for (r, &src) in index.iter().enumerate() {
                    for (d, gv) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += gv;
                    }
                }
                send(*a, da);
            }
            Op::SoftmaxRow(a) => {
                let y = &nodes[i].value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = super::tensor::dot(g.row(r), y.row(r));
                    for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(y.row(r)).zip(g.row(r)) {
                        *d = yv * (gv - inner);
                    }
                }
                send(*a, dx);
            }
            Op::SegmentSoftmax(a, segment) => {
                let y = nodes[i].value.data();
                let segs = segment.iter().copied().max().map_or(0, |m| m + 1);
                let mut inner = vec![0.0; segs];
                for (k, &s) in segment.iter().enumerate() {
                    inner[s] += g.data()[k] * y[k];
                }
                let data = segment
                    .iter()
                    .enumerate()
                    .map(|(k, &s)| y[k] * (g.data()[k] - inner[s]))
                    .collect();
                send(
                    *a,
                    Tensor::from_vec(y.len(), 1, data).expect("column"),
                );
            }
            Op::ScatterWeightedSum {
                values,
                weights,
                index,
            } => {
                let (v, w) = (val(*values), val(*weights));
                if nodes[*values].requires_grad {
                    let mut dv = Tensor::zeros(v.rows(), v.cols());
                    for (e, &dst) in index.iter().enumerate() {
                        let weight = w.data()[e];
                        for (d, gv) in dv.row_mut(e).iter_mut().zip(g.row(dst)) {
                            *d = weight * gv;
                        }
                    }
                    send(*values, dv);
                }
                if nodes[*weights].requires_grad {
                    let data = index
                        .iter()
                        .enumerate()
                        .map(|(e, &dst)| super::tensor::dot(g.row(dst), v.row(e)))
                        .collect();
                    send(
                        *weights,
                        Tensor::from_vec(index.len(), 1, data).expect("column"),
                    );
                }
            }
            Op::L1NormRow(a) => {
                let x = val(*a);
                let cols = x.cols();
                send(
                    *a,
                    map(x, &|k, xv| {
                        let sign = if xv > 0.0 {
                            1.0
                        } else if xv < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        sign * g.data()[k / cols]
                    }),
                );
            }
            Op::CosineDistance(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let mut da = Tensor::zeros(x.rows(), x.cols());
                let mut db = Tensor::zeros(y.rows(), y.cols());
                for r in 0..x.rows() {
                    let (u, v) = (x.row(r), y.row(r));
                    let nu = super::tensor::norm2(u);
                    let nv = super::tensor::norm2(v);
                    let s = super::tensor::dot(u, v) / (nu * nv);
                    let gr = g.data()[r];
                    for c in 0..u.len() {
                        // d(1 - s)/du = -(v/(|u||v|) - s·u/|u|²)
                        da.row_mut(r)[c] = -gr * (v[c] / (nu * nv) - s * u[c] / (nu * nu));
                        db.row_mut(r)[c] = -gr * (u[c] / (nu * nv) - s * v[c] / (nv * nv));
                    }
                }
                send(*a, da);
                send(*b, db);
            }
            Op::Sum(a) => {
                let x = val(*a);
                send(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let x = val(*a);
                let n = x.len().max(1) as f64;
                send(*a, Tensor::filled(x.rows(), x.cols(), g.data()[0] / n));
            }
        }
    }
}

/// `a · b` without recording.
pub fn matmul_plain(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor::zeros(m, n);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g · bᵀ`.
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n, k) = (g.rows(), g.cols(), b.rows());
    let mut out = Tensor::zeros(m, k);
    for i in 0..m {
        let grow = g.row(i);
        for p in 0..k {
            out.data_mut()[i * k + p] = super::tensor::dot(grow, &b.data()[p * n..(p + 1) * n]);
        }
    }
    out
}

/// `aᵀ · g`.
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), g.cols());
    let mut out = Tensor::zeros(k, n);
    let od = out.data_mut();
    for i in 0..m {
        let grow = g.row(i);
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in od[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn segment_softmax_plain(logits: &[f64], segment: &[usize]) -> Vec<f64> {
    let segs = segment.iter().copied().max().map_or(0, |m| m + 1);
    let mut max = vec![f64::NEG_INFINITY; segs];
    for (x, &s) in logits.iter().zip(segment) {
        max[s] = max[s].max(*x);
    }
    let mut total = vec![0.0; segs];
    let mut out: Vec<f64> = logits
        .iter()
        .zip(segment)
        .map(|(x, &s)| {
            let e = (x - max[s]).exp();
            total[s] += e;
            e
        })
        .collect();
    for (o, &s) in out.iter_mut().zip(segment) {
        *o /= total[s];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tanh_forward_and_derivative() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.0));
        let y = g.tanh(x);
        assert_eq!(g.value(y).item().unwrap(), 0.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item().unwrap(), 1.0);
    }

    #[test]
    fn tanh_derivative_matches_central_difference() {
        // Oracle: central difference at step 1e-5, computed independently.
        let h = 1e-5;
        let fd = ((0.5f64 + h).tanh() - (0.5f64 - h).tanh()) / (2.0 * h);
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(0.5));
        let y = g.tanh(x);
        g.backward(y).unwrap();
        let analytic = g.grad(x).unwrap().item().unwrap();
        assert_abs_diff_eq!(analytic, 0.786_447_732_965_927, epsilon = 1e-12);
        assert!((analytic - fd).abs() < 1e-7);
    }

    #[test]
    fn l1_norm_forward_and_subgradient() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[1.0, -2.0, 0.5]));
        let n = g.l1_norm_row(x);
        assert_eq!(g.value(n).item().unwrap(), 3.5);

        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[2.0, -3.0, 0.0]));
        let n = g.l1_norm_row(x);
        g.backward(n).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, -1.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.input(Tensor::row_vector(&[1.0, 2.0]));
        let y = g.tanh(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.scale(x, 2.0);
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item().unwrap(), 4.0);
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        assert!(matches!(g.matmul(a, b), Err(Error::Shape { .. })));
        let c = g.constant(Tensor::zeros(3, 2));
        assert!(g.add(a, c).is_err());
        assert!(g.gather(a, &[5]).is_err());
    }

    #[test]
    fn cosine_distance_zero_vector_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row_vector(&[0.0, 0.0]));
        let b = g.constant(Tensor::row_vector(&[1.0, 0.0]));
        assert!(matches!(g.cosine_distance(a, b), Err(Error::ZeroNorm)));
    }

    #[test]
    fn constants_collect_no_gradient() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.input(Tensor::scalar(5.0));
        let c = g.mul(a, b).unwrap();
        g.backward(c).unwrap();
        assert!(g.grad(a).is_none());
        assert_eq!(g.grad(b).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn segment_softmax_normalises_each_group() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(5, 1, vec![0.3, -1.0, 2.0, 0.0, 0.0]).unwrap());
        let y = g.segment_softmax(x, &[0, 0, 1, 1, 1]).unwrap();
        let v = g.value(y).data();
        assert_abs_diff_eq!(v[0] + v[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2] + v[3] + v[4], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[3], v[4], epsilon = 0.0);
    }
}
