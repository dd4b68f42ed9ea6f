//! Relation-aware GNN encoder.
//!
//! Each layer composes a message `a_{e'} − MLP_comp(a_r)` per neighbour,
//! weights messages with a softmax over `MLP_att(a_e ∘ m)` within each
//! entity's neighbourhood, and updates `a_e ← tanh(W(Σ α·m + a_e) + b)`.
//! Relations are updated by their own per-layer MLP.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{uniform, Activation, Graph, Linear, Mlp, ParamId, Params, Tensor, Var};
use crate::error::{Error, Result};
use crate::kgdata::{EntityId, InitialVectors, MultiKg};

/// Edge list over the union of all KGs, in global entity rows.
///
/// Edge `i` carries a message from `neighbor[i]` to `center[i]` through
/// `relation[i]`; edges are sorted by center and no edge crosses KGs.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub entity_count: usize,
    pub center: Vec<usize>,
    pub neighbor: Vec<usize>,
    pub relation: Vec<usize>,
    /// `1 / |N(center)|` per edge, used when attention is disabled.
    pub uniform_weight: Vec<f64>,
}

impl Topology {
    pub fn from_multikg(multikg: &MultiKg) -> Self {
        let offsets = multikg.offsets();
        let mut edges = Vec::new();
        for (k, kg) in multikg.kgs.iter().enumerate() {
            for e in 0..kg.entity_count() {
                for (n, r) in kg.neighbor_set(EntityId(e)) {
                    edges.push((offsets[k] + e, offsets[k] + n.0, r.0));
                }
            }
        }
        Self::from_edges(multikg.total_entities(), edges)
    }

    /// Builds from `(center, neighbor, relation)` triples; duplicates merge.
    pub fn from_edges(entity_count: usize, mut edges: Vec<(usize, usize, usize)>) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut degree = vec![0usize; entity_count];
        for &(c, _, _) in &edges {
            degree[c] += 1;
        }
        Topology {
            entity_count,
            center: edges.iter().map(|e| e.0).collect(),
            neighbor: edges.iter().map(|e| e.1).collect(),
            relation: edges.iter().map(|e| e.2).collect(),
            uniform_weight: edges.iter().map(|e| 1.0 / degree[e.0] as f64).collect(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.center.len()
    }
}

/// Parameters of one encoder layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    /// Entity-relation composition, `n → n → n`.
    pub comp: Mlp,
    /// Relation update, `n → n`.
    pub rel: Mlp,
    /// Attention logit, `2n → 1`.
    pub att: Mlp,
    /// Linear part of the entity update.
    pub update: Linear,
    pub update_activation: Activation,
}

impl EncoderLayer {
    fn new<R: Rng>(params: &mut Params, rng: &mut R, name: &str, n: usize) -> Self {
        EncoderLayer {
            comp: Mlp::new(
                params,
                rng,
                &format!("{name}.comp"),
                &[n, n, n],
                &[Activation::LeakyRelu, Activation::Identity],
            ),
            rel: Mlp::new(params, rng, &format!("{name}.rel"), &[n, n], &[Activation::Identity]),
            att: Mlp::new(params, rng, &format!("{name}.att"), &[2 * n, 1], &[Activation::Identity]),
            update: Linear::new(params, rng, &format!("{name}.update"), n, n),
            update_activation: Activation::Tanh,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.comp.param_ids();
        ids.extend(self.rel.param_ids());
        ids.extend(self.att.param_ids());
        ids.extend(self.update.param_ids());
        ids
    }

    /// Row-wise message `neighbor − MLP_comp(relation)`.
    pub fn message(
        &self,
        g: &mut Graph,
        params: &Params,
        neighbors: Var,
        relations: Var,
        trainable: bool,
    ) -> Result<Var> {
        let composed = self.comp.forward(g, params, relations, trainable)?;
        g.sub(neighbors, composed)
    }

    /// Attention weights: softmax of `MLP_att(center ∘ message)` within each
    /// group of `segment`. Rows of `centers` and `messages` are aligned.
    pub fn attention(
        &self,
        g: &mut Graph,
        params: &Params,
        centers: Var,
        messages: Var,
        segment: &[usize],
        trainable: bool,
    ) -> Result<Var> {
        let joined = g.concat(&[centers, messages])?;
        let logits = self.att.forward(g, params, joined, trainable)?;
        g.segment_softmax(logits, segment)
    }

    /// One propagation step over `topo`; returns the next entity and
    /// relation tables.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &Params,
        topo: &Topology,
        entities: Var,
        relations: Var,
        relation_aware: bool,
        trainable: bool,
    ) -> Result<(Var, Var)> {
        let n_rows = g.value(entities).rows();
        if n_rows != topo.entity_count {
            return Err(Error::shape(
                "layer_forward",
                format!("{n_rows} entity rows for a {}-entity topology", topo.entity_count),
            ));
        }
        let aggregated = if topo.edge_count() == 0 {
            g.constant(Tensor::zeros(n_rows, g.value(entities).cols()))
        } else {
            let neigh = g.gather(entities, &topo.neighbor)?;
            let (messages, weights) = if relation_aware {
                // MLP_comp is applied once per relation, then gathered per edge.
                let composed = self.comp.forward(g, params, relations, trainable)?;
                let per_edge = g.gather(composed, &topo.relation)?;
                let messages = g.sub(neigh, per_edge)?;
                let centers = g.gather(entities, &topo.center)?;
                let w = self.attention(g, params, centers, messages, &topo.center, trainable)?;
                (messages, w)
            } else {
                let w = Tensor::from_vec(topo.edge_count(), 1, topo.uniform_weight.clone())?;
                (neigh, g.constant(w))
            };
            g.scatter_weighted_sum(messages, weights, &topo.center, n_rows)?
        };
        let pre = g.add(aggregated, entities)?;
        let lin = self.update.forward(g, params, pre, trainable)?;
        let next_entities = self.update_activation.apply(g, lin);
        let next_relations = self.rel.forward(g, params, relations, trainable)?;
        Ok((next_entities, next_relations))
    }
}

/// Per-layer tables as graph nodes; index `k` holds layer `k` for `0..=K`.
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub entities: Vec<Var>,
    pub relations: Vec<Var>,
}

impl LayerVars {
    pub fn depth(&self) -> usize {
        self.entities.len() - 1
    }

    pub fn materialize(&self, g: &Graph) -> LayerEmbeddings {
        LayerEmbeddings {
            entities: self.entities.iter().map(|&v| g.value(v).clone()).collect(),
            relations: self.relations.iter().map(|&v| g.value(v).clone()).collect(),
        }
    }
}

/// Per-layer entity (`|E_total| × n`) and relation (`|R| × n`) tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEmbeddings {
    pub entities: Vec<Tensor>,
    pub relations: Vec<Tensor>,
}

impl LayerEmbeddings {
    pub fn depth(&self) -> usize {
        self.entities.len() - 1
    }
}

/// Hook applied to `(entities, relations)` at layer `k` before they feed
/// layer `k + 1`.
pub type FusionHook<'a> = dyn FnMut(&mut Graph, usize, Var, Var) -> Result<(Var, Var)> + 'a;

/// A relation-aware GNN with its own input tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub dim: usize,
    pub entities: ParamId,
    pub relations: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub relation_aware: bool,
}

impl Encoder {
    /// Input tables are `U[-1/√n, 1/√n]` except rows covered by `initial`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        name: &str,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        depth: usize,
        initial: Option<&InitialVectors>,
    ) -> Result<Self> {
        Self::with_bound(params, rng, name, entity_count, relation_count, dim, depth, initial, 1.0 / (dim as f64).sqrt())
    }

    /// As [`Encoder::new`] with input tables drawn from `U[-bound, bound]`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_bound<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        name: &str,
        entity_count: usize,
        relation_count: usize,
        dim: usize,
        depth: usize,
        initial: Option<&InitialVectors>,
        bound: f64,
    ) -> Result<Self> {
        let mut ent = uniform(rng, entity_count, dim, bound);
        let mut rel = uniform(rng, relation_count, dim, bound);
        if let Some(init) = initial {
            if init.dim != dim {
                return Err(Error::Data(format!(
                    "initial vectors have dimension {}, model dimension is {dim}",
                    init.dim
                )));
            }
            for (table, rows) in [(&mut ent, &init.entities), (&mut rel, &init.relations)] {
                for (r, v) in rows.iter().enumerate() {
                    if let Some(v) = v {
                        table.row_mut(r).copy_from_slice(v);
                    }
                }
            }
        }
        let entities = params.add(format!("{name}.entities"), ent);
        let relations = params.add(format!("{name}.relations"), rel);
        let layers = (0..depth)
            .map(|k| EncoderLayer::new(params, rng, &format!("{name}.layer{k}"), dim))
            .collect();
        Ok(Encoder {
            dim,
            entities,
            relations,
            layers,
            relation_aware: true,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.entities, self.relations];
        ids.extend(self.layers.iter().flat_map(EncoderLayer::param_ids));
        ids
    }

    /// Runs every layer. With a hook, layer `k`'s tables are replaced by the
    /// hook's output (for every `k` in `0..=K`) before propagation continues.
    pub fn encode(
        &self,
        g: &mut Graph,
        params: &Params,
        topo: &Topology,
        trainable: bool,
        mut fusion: Option<&mut FusionHook<'_>>,
    ) -> Result<LayerVars> {
        let mut ent = g.param(params, self.entities, trainable);
        let mut rel = g.param(params, self.relations, trainable);
        if let Some(hook) = fusion.as_mut() {
            (ent, rel) = hook(g, 0, ent, rel)?;
        }
        let mut out = LayerVars {
            entities: vec![ent],
            relations: vec![rel],
        };
        for (k, layer) in self.layers.iter().enumerate() {
            (ent, rel) = layer.forward(g, params, topo, ent, rel, self.relation_aware, trainable)?;
            if let Some(hook) = fusion.as_mut() {
                (ent, rel) = hook(g, k + 1, ent, rel)?;
            }
            out.entities.push(ent);
            out.relations.push(rel);
        }
        Ok(out)
    }

    /// Forward pass without gradients.
    pub fn embed(&self, params: &Params, topo: &Topology) -> Result<LayerEmbeddings> {
        let mut g = Graph::new();
        let vars = self.encode(&mut g, params, topo, false, None)?;
        Ok(vars.materialize(&g))
    }
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::diff::{grad_check, Tensor};
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;

    fn encoder(params: &mut Params, entities: usize, relations: usize, n: usize, k: usize) -> Encoder {
        let mut rng = stream_rng(5, "test", 0);
        Encoder::new(params, &mut rng, "enc", entities, relations, n, k, None).unwrap()
    }

    fn assign_identity(params: &mut Params, lin: &Linear) {
        lin.assign(params, Tensor::eye(lin.in_dim), Tensor::zeros(1, lin.out_dim))
            .unwrap();
    }

    #[test]
    fn message_with_zero_composition_is_the_neighbor() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 2, 1, 2, 1);
        enc.layers[0].comp.zero_out(&mut params);
        let mut g = Graph::new();
        let nb = g.constant(Tensor::row_vector(&[1.0, 2.0]));
        let rel = g.constant(Tensor::row_vector(&[0.3, -0.7]));
        let m = enc.layers[0].message(&mut g, &params, nb, rel, false).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 2.0]);
    }

    #[test]
    fn message_subtracts_composed_relation() {
        // MLP_comp forced to output [0.5, 0.5]: zero weights, bias 0.5 on the
        // output layer (first layer zero so LeakyReLU sees 0).
        let mut params = Params::new();
        let enc = encoder(&mut params, 2, 1, 2, 1);
        let comp = &enc.layers[0].comp;
        comp.zero_out(&mut params);
        comp.layers[1]
            .assign(&mut params, Tensor::zeros(2, 2), Tensor::row_vector(&[0.5, 0.5]))
            .unwrap();
        let mut g = Graph::new();
        let nb = g.constant(Tensor::row_vector(&[1.0, 2.0]));
        let rel = g.constant(Tensor::row_vector(&[9.0, -9.0]));
        let m = enc.layers[0].message(&mut g, &params, nb, rel, false).unwrap();
        assert_eq!(g.value(m).data(), &[0.5, 1.5]);
    }

    #[test]
    fn equal_relations_give_equal_messages() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 2, 1, 3, 1);
        let mut g = Graph::new();
        let nb = g.constant(Tensor::from_rows(&[vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]).unwrap());
        let rel = g.constant(Tensor::from_rows(&[vec![0.5, -0.5, 1.0], vec![0.5, -0.5, 1.0]]).unwrap());
        let m = enc.layers[0].message(&mut g, &params, nb, rel, false).unwrap();
        assert_eq!(g.value(m).row(0), g.value(m).row(1));
    }

    #[test]
    fn attention_cases() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 2, 1, 2, 1);
        let layer = &enc.layers[0];

        let mut g = Graph::new();
        let c = g.constant(Tensor::row_vector(&[0.3, 0.1]));
        let m = g.constant(Tensor::row_vector(&[-0.2, 0.4]));
        let w = layer.attention(&mut g, &params, c, m, &[0], false).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);

        let mut g = Graph::new();
        let c = g.constant(Tensor::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1]]).unwrap());
        let m = g.constant(Tensor::from_rows(&[vec![-0.2, 0.4], vec![-0.2, 0.4]]).unwrap());
        let w = layer.attention(&mut g, &params, c, m, &[0, 0], false).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5]);

        // Logits (0, ln 3): the attention MLP reads the last message coordinate
        // scaled by ln 3; messages carry 0 and 1 there.
        let w_att = Tensor::from_vec(4, 1, vec![0.0, 0.0, 0.0, 3f64.ln()]).unwrap();
        layer.att.layers[0]
            .assign(&mut params, w_att, Tensor::zeros(1, 1))
            .unwrap();
        let mut g = Graph::new();
        let c = g.constant(Tensor::from_rows(&[vec![0.3, 0.1], vec![0.3, 0.1]]).unwrap());
        let m = g.constant(Tensor::from_rows(&[vec![5.0, 0.0], vec![-2.0, 1.0]]).unwrap());
        let w = layer.attention(&mut g, &params, c, m, &[0, 0], false).unwrap();
        assert_abs_diff_eq!(g.value(w).data()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(w).data()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn isolated_entity_only_sees_itself() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 3, 1, 4, 1);
        let topo = Topology::from_edges(3, vec![(0, 1, 0), (1, 0, 0)]);
        let mut g = Graph::new();
        let ent = g.param(&params, enc.entities, false);
        let rel = g.param(&params, enc.relations, false);
        let (next, _) = enc.layers[0]
            .forward(&mut g, &params, &topo, ent, rel, true, false)
            .unwrap();
        // Oracle: tanh(a_2 · W + b) by hand.
        let a2 = params.get(enc.entities).row(2).to_vec();
        let w = params.get(enc.layers[0].update.weight);
        let b = params.get(enc.layers[0].update.bias);
        for j in 0..4 {
            let mut acc = b.data()[j];
            for i in 0..4 {
                acc += a2[i] * w.get(i, j);
            }
            assert_abs_diff_eq!(g.value(next).get(2, j), acc.tanh(), epsilon = 1e-14);
        }
    }

    #[test]
    fn identity_update_sums_neighbor_and_self() {
        let mut params = Params::new();
        let mut enc = encoder(&mut params, 2, 1, 2, 1);
        enc.layers[0].comp.zero_out(&mut params);
        assign_identity(&mut params, &enc.layers[0].update);
        enc.layers[0].update_activation = Activation::Identity;
        assign_identity(&mut params, &enc.layers[0].rel.layers[0]);
        params.set(enc.entities, Tensor::from_rows(&[vec![1.0, 2.0], vec![0.5, -1.0]]).unwrap());
        let topo = Topology::from_edges(2, vec![(0, 1, 0)]);
        let mut g = Graph::new();
        let ent = g.param(&params, enc.entities, false);
        let rel = g.param(&params, enc.relations, false);
        let (next, next_rel) = enc.layers[0]
            .forward(&mut g, &params, &topo, ent, rel, true, false)
            .unwrap();
        assert_eq!(g.value(next).row(0), &[1.5, 1.0]);
        assert_eq!(g.value(next_rel), params.get(enc.relations));
    }

    #[test]
    fn zero_depth_returns_input_tables() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 3, 2, 4, 0);
        let topo = Topology::from_edges(3, vec![(0, 1, 0)]);
        let emb = enc.embed(&params, &topo).unwrap();
        assert_eq!(emb.depth(), 0);
        assert_eq!(&emb.entities[0], params.get(enc.entities));
        assert_eq!(&emb.relations[0], params.get(enc.relations));
    }

    #[test]
    fn chain_with_zero_mlps_matches_hand_iteration() {
        let n = 3;
        let mut params = Params::new();
        let enc = encoder(&mut params, 3, 1, n, 2);
        for l in &enc.layers {
            l.comp.zero_out(&mut params);
            l.rel.zero_out(&mut params);
            l.att.zero_out(&mut params);
        }
        // chain 0 - 1 - 2 through relation 0
        let topo = Topology::from_edges(3, vec![(0, 1, 0), (1, 0, 0), (1, 2, 0), (2, 1, 0)]);
        let emb = enc.embed(&params, &topo).unwrap();

        // Oracle: zero attention logits give uniform weights and zero
        // composition leaves messages equal to neighbours.
        let neigh: [&[usize]; 3] = [&[1], &[0, 2], &[1]];
        let mut cur: Vec<Vec<f64>> = (0..3).map(|r| params.get(enc.entities).row(r).to_vec()).collect();
        for (k, layer) in enc.layers.iter().enumerate() {
            let w = params.get(layer.update.weight);
            let b = params.get(layer.update.bias);
            let next: Vec<Vec<f64>> = (0..3)
                .map(|e| {
                    let mut pre = cur[e].clone();
                    for &nb in neigh[e] {
                        for j in 0..n {
                            pre[j] += cur[nb][j] / neigh[e].len() as f64;
                        }
                    }
                    (0..n)
                        .map(|j| {
                            let mut acc = b.data()[j];
                            for i in 0..n {
                                acc += pre[i] * w.get(i, j);
                            }
                            acc.tanh()
                        })
                        .collect()
                })
                .collect();
            for e in 0..3 {
                for j in 0..n {
                    assert_abs_diff_eq!(emb.entities[k + 1].get(e, j), next[e][j], epsilon = 1e-12);
                }
            }
            cur = next;
        }
    }

    #[test]
    fn second_half_projection_hook_is_a_no_op() {
        let n = 3;
        let mut params = Params::new();
        let enc = encoder(&mut params, 4, 2, n, 2);
        let topo = Topology::from_edges(4, vec![(0, 1, 0), (1, 0, 0), (2, 3, 1), (3, 2, 1), (1, 2, 1)]);
        let plain = enc.embed(&params, &topo).unwrap();

        // [c ∘ a] · [0; I] = a
        let mut proj = Tensor::zeros(2 * n, n);
        for i in 0..n {
            proj.set(n + i, i, 1.0);
        }
        let mut hook = |g: &mut Graph, _k: usize, e: Var, r: Var| -> Result<(Var, Var)> {
            let p = g.constant(proj.clone());
            let ce = g.constant(Tensor::filled(4, n, 7.0));
            let cr = g.constant(Tensor::filled(2, n, -3.0));
            let je = g.concat(&[ce, e])?;
            let jr = g.concat(&[cr, r])?;
            Ok((g.matmul(je, p)?, g.matmul(jr, p)?))
        };
        let mut g = Graph::new();
        let vars = enc.encode(&mut g, &params, &topo, false, Some(&mut hook)).unwrap();
        assert_eq!(vars.materialize(&g), plain);
    }

    #[test]
    fn attention_sums_to_one_per_entity() {
        let mut params = Params::new();
        let enc = encoder(&mut params, 5, 3, 4, 1);
        let topo = Topology::from_edges(
            5,
            vec![(0, 1, 0), (0, 2, 1), (0, 3, 2), (1, 0, 0), (2, 0, 1), (2, 4, 2), (4, 2, 2)],
        );
        let mut g = Graph::new();
        let ent = g.param(&params, enc.entities, false);
        let centers = g.gather(ent, &topo.center).unwrap();
        let neigh = g.gather(ent, &topo.neighbor).unwrap();
        let w = enc.layers[0]
            .attention(&mut g, &params, centers, neigh, &topo.center, false)
            .unwrap();
        let mut sums = [0.0; 5];
        for (i, &c) in topo.center.iter().enumerate() {
            sums[c] += g.value(w).data()[i];
        }
        for (e, s) in sums.iter().enumerate() {
            if e != 3 {
                assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn full_encoder_gradient_check() {
        let n = 3;
        let mut params = Params::new();
        let enc = encoder(&mut params, 6, 2, n, 2);
        let topo = Topology::from_edges(
            6,
            vec![(0, 1, 0), (1, 0, 0), (1, 2, 1), (2, 1, 1), (3, 4, 0), (4, 3, 0), (4, 5, 1), (5, 4, 1), (2, 0, 0), (0, 2, 0)],
        );
        let input = params.get(enc.entities).clone();
        let err = grad_check(
            |g, x| {
                let rel = g.param(&params, enc.relations, false);
                let mut e = x;
                let mut r = rel;
                for l in &enc.layers {
                    (e, r) = l.forward(g, &params, &topo, e, r, true, false)?;
                }
                let sq = g.mul(e, e)?;
                Ok(g.sum(sq))
            },
            &input,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}
