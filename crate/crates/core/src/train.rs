//! Alternating two-optimizer training with per-epoch seed enlargement and
//! triple transfer, model selection on validation MRR, and checkpoints.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::alignment::{alignment_loss, build_alignment_matrix, nearest_negatives, AlignmentNet, FusionParams, HeadParams};
use crate::completion::{completion_loss, sample_negatives, Key};
use crate::diff::{Adam, Graph, ParamId, Params, Tensor};
use crate::entr::{enlarge_seeds, matrix_entropy, seed_budget, transfer_triples, EntropyState};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_kgc};
use crate::kgdata::{MultiKg, SeedSet, TransferredTriple};
use crate::rgnn::{Encoder, LayerEmbeddings, Topology};
use crate::rng::stream_rng;

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Plain neighbour averaging instead of relation-aware messages.
    NoRaGnn,
    /// One encoder shared by both components.
    OneGnn,
    NoSir,
    NoEntr,
    NoAlign,
    NoComple,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoRaGnn,
        Ablation::OneGnn,
        Ablation::NoSir,
        Ablation::NoEntr,
        Ablation::NoAlign,
        Ablation::NoComple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoRaGnn => "no_ra_gnn",
            Ablation::OneGnn => "one_gnn",
            Ablation::NoSir => "no_sir",
            Ablation::NoEntr => "no_entr",
            Ablation::NoAlign => "no_align",
            Ablation::NoComple => "no_comple",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How `fit` picks the returned checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Highest validation completion MRR; earlier epoch on ties.
    #[default]
    ValidMrr,
    LastEpoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// GNN depth `K`.
    pub layers: usize,
    /// Embedding dimension `n`.
    pub dim: usize,
    pub lr_completion: f64,
    pub lr_alignment: f64,
    pub beta: f64,
    pub margin_completion: f64,
    pub margin_alignment: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub alignment_negatives: usize,
    /// Initialise tables from `vectors.tsv` when present.
    pub surface_info: bool,
    pub ablations: Vec<Ablation>,
    pub rng_seed: u64,
    #[serde(default = "default_seed_fraction")]
    pub seed_train_fraction: f64,
    /// Run enlargement and transfer every this many epochs.
    #[serde(default = "default_period")]
    pub entr_period: usize,
    #[serde(default = "default_true")]
    pub transferred_as_positives: bool,
    #[serde(default)]
    pub selection: Selection,
    /// Bound of the uniform input-table initialisation; `1/√dim` if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_bound: Option<f64>,
}

fn default_seed_fraction() -> f64 {
    0.3
}

fn default_period() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            layers: 2,
            dim: 128,
            lr_completion: 1e-3,
            lr_alignment: 1e-3,
            beta: 0.2,
            margin_completion: 5.0,
            margin_alignment: 0.5,
            epochs: 30,
            negatives_per_positive: 5,
            alignment_negatives: 5,
            surface_info: false,
            ablations: Vec::new(),
            rng_seed: 0,
            seed_train_fraction: default_seed_fraction(),
            entr_period: default_period(),
            transferred_as_positives: true,
            selection: Selection::ValidMrr,
            init_bound: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        for (name, v) in [("lr_completion", self.lr_completion), ("lr_alignment", self.lr_alignment)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]".into());
        }
        for (name, v) in [("margin_completion", self.margin_completion), ("margin_alignment", self.margin_alignment)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if self.negatives_per_positive == 0 {
            return bad("negatives_per_positive must be at least 1".into());
        }
        if self.alignment_negatives == 0 {
            return bad("alignment_negatives must be at least 1".into());
        }
        if self.init_bound.is_some_and(|b| !(b > 0.0 && b.is_finite())) {
            return bad("init_bound must be positive".into());
        }
        if self.entr_period == 0 {
            return bad("entr_period must be at least 1".into());
        }
        if !(self.seed_train_fraction > 0.0 && self.seed_train_fraction < 1.0) {
            return bad("seed_train_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    fn sir_active(&self) -> bool {
        !self.has(Ablation::NoSir) && !self.has(Ablation::NoComple) && !self.has(Ablation::OneGnn)
    }

    fn entr_active(&self) -> bool {
        !self.has(Ablation::NoEntr) && !self.has(Ablation::NoAlign)
    }
}

/// Parameters and structure of both components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: Params,
    pub completion: Encoder,
    pub alignment: AlignmentNet,
    pub one_gnn: bool,
}

impl Model {
    pub fn new(multikg: &MultiKg, config: &TrainConfig) -> Result<Self> {
        let mut rng = stream_rng(config.rng_seed, "init", 0);
        let mut params = Params::new();
        let initial = if config.surface_info {
            multikg.initial_vectors.as_ref()
        } else {
            None
        };
        let (e, r, n, k) = (multikg.total_entities(), multikg.relation_count(), config.dim, config.layers);
        let bound = config.init_bound.unwrap_or(1.0 / (n as f64).sqrt());
        let mut completion = Encoder::with_bound(&mut params, &mut rng, "completion", e, r, n, k, initial, bound)?;
        let mut encoder = Encoder::with_bound(&mut params, &mut rng, "alignment", e, r, n, k, initial, bound)?;
        let relation_aware = !config.has(Ablation::NoRaGnn);
        completion.relation_aware = relation_aware;
        encoder.relation_aware = relation_aware;
        let fusion = FusionParams::new(&mut params, &mut rng, n, k);
        let heads = HeadParams::new(&mut params, &mut rng, n, k);
        Ok(Model {
            params,
            completion,
            alignment: AlignmentNet { encoder, fusion, heads },
            one_gnn: config.has(Ablation::OneGnn),
        })
    }

    /// Parameters touched by the completion loss.
    pub fn completion_param_ids(&self) -> Vec<ParamId> {
        self.completion.param_ids()
    }

    /// Parameters touched by the alignment loss.
    pub fn alignment_param_ids(&self) -> Vec<ParamId> {
        let mut ids = if self.one_gnn {
            self.completion.param_ids()
        } else {
            self.alignment.encoder.param_ids()
        };
        ids.extend(self.alignment.fusion.param_ids());
        ids.extend(self.alignment.heads.param_ids());
        ids
    }

    fn alignment_encoder(&self) -> &Encoder {
        if self.one_gnn {
            &self.completion
        } else {
            &self.alignment.encoder
        }
    }

    pub fn completion_embeddings(&self, topo: &Topology) -> Result<LayerEmbeddings> {
        self.completion.embed(&self.params, topo)
    }

    /// Final alignment entity embeddings without gradients.
    pub fn alignment_finals(&self, topo: &Topology, sir: bool) -> Result<Tensor> {
        let comp = if sir { Some(self.completion_embeddings(topo)?) } else { None };
        let mut g = Graph::new();
        let out = self
            .alignment
            .forward(&mut g, &self.params, self.alignment_encoder(), topo, comp.as_ref(), false)?;
        Ok(g.value(out.entities).clone())
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_completion: Option<f64>,
    pub loss_alignment: Option<f64>,
    /// Seed budget summed over KG pairs.
    pub budget: Option<usize>,
    /// Transferred triples held across all KGs after the epoch.
    pub transferred: usize,
    pub valid_mrr: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tloss_completion\tloss_alignment\tq\ttransferred\tvalid_mrr";

    pub fn line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}",
            self.epoch,
            opt(self.loss_completion),
            opt(self.loss_alignment),
            self.budget.map_or("-".to_string(), |q| q.to_string()),
            self.transferred,
            self.valid_mrr
        )
    }
}

/// Everything needed to resume or evaluate a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub config: TrainConfig,
    pub model: Model,
    pub adam_completion: Adam,
    pub adam_alignment: Adam,
    pub entropy: Vec<Option<EntropyState>>,
    pub seeds: Vec<SeedSet>,
    pub transferred: Vec<Vec<TransferredTriple>>,
    pub epoch: usize,
    pub valid_mrr: f64,
    pub vocab_hash: String,
    pub history: Vec<EpochLog>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("unsupported checkpoint format {}", ckpt.format)));
        }
        Ok(ckpt)
    }
}

/// A run in progress.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub adam_completion: Adam,
    pub adam_alignment: Adam,
    pub multikg: MultiKg,
    /// Current seed set per KG pair: given training seeds plus enlarged ones.
    pub seeds: Vec<SeedSet>,
    pub entropy: Vec<Option<EntropyState>>,
    pub topology: Topology,
    pub epoch: usize,
    pub valid_mrr: f64,
    pub history: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(multikg: MultiKg, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(&multikg, &config)?;
        let seeds = multikg.alignments.iter().map(|a| a.train.clone()).collect();
        let topology = Topology::from_multikg(&multikg);
        let mut state = TrainState {
            adam_completion: Adam::new(config.lr_completion),
            adam_alignment: Adam::new(config.lr_alignment),
            entropy: vec![None; multikg.alignments.len()],
            config,
            model,
            multikg,
            seeds,
            topology,
            epoch: 0,
            valid_mrr: f64::NAN,
            history: Vec::new(),
        };
        if state.config.entr_active() {
            let finals = state.finals()?;
            for p in 0..state.seeds.len() {
                let h = matrix_entropy(&state.pair_matrix(&finals, p)?);
                state.entropy[p] = Some(EntropyState { h_tilde: h, h_current: h });
            }
        }
        Ok(state)
    }

    pub fn from_checkpoint(mut multikg: MultiKg, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.vocab_hash != multikg.vocab_hash() || ckpt.transferred.len() != multikg.kgs.len() {
            return Err(Error::CheckpointMismatch);
        }
        for (kg, t) in multikg.kgs.iter_mut().zip(ckpt.transferred) {
            kg.set_transferred(t);
        }
        let topology = Topology::from_multikg(&multikg);
        Ok(TrainState {
            config: ckpt.config,
            model: ckpt.model,
            adam_completion: ckpt.adam_completion,
            adam_alignment: ckpt.adam_alignment,
            multikg,
            seeds: ckpt.seeds,
            entropy: ckpt.entropy,
            topology,
            epoch: ckpt.epoch,
            valid_mrr: ckpt.valid_mrr,
            history: ckpt.history,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT,
            config: self.config.clone(),
            model: self.model.clone(),
            adam_completion: self.adam_completion.clone(),
            adam_alignment: self.adam_alignment.clone(),
            entropy: self.entropy.clone(),
            seeds: self.seeds.clone(),
            transferred: self.multikg.kgs.iter().map(|k| k.transferred().to_vec()).collect(),
            epoch: self.epoch,
            valid_mrr: self.valid_mrr,
            vocab_hash: self.multikg.vocab_hash(),
            history: self.history.clone(),
        }
    }

    fn seed_rows(&self, set: &SeedSet) -> Vec<(usize, usize)> {
        let off = self.multikg.offsets();
        let (a, b) = set.kg_pair;
        set.pairs.iter().map(|p| (off[a] + p.left.0, off[b] + p.right.0)).collect()
    }

    fn all_seed_rows(&self) -> Vec<(usize, usize)> {
        self.seeds.iter().flat_map(|s| self.seed_rows(s)).collect()
    }

    pub fn completion_embeddings(&self) -> Result<LayerEmbeddings> {
        self.model.completion_embeddings(&self.topology)
    }

    /// Final alignment entity embeddings for the current parameters.
    pub fn finals(&self) -> Result<Tensor> {
        self.model.alignment_finals(&self.topology, self.config.sir_active())
    }

    fn pair_matrix(&self, finals: &Tensor, pair: usize) -> Result<Tensor> {
        let (a, b) = self.seeds[pair].kg_pair;
        let off = self.multikg.offsets();
        let rows = |k: usize| (off[k]..off[k] + self.multikg.kgs[k].entity_count()).collect::<Vec<_>>();
        let m = build_alignment_matrix((a, b), &finals.select_rows(&rows(a)), &finals.select_rows(&rows(b)))?;
        Ok(m.values)
    }

    /// Step 1: one Adam update of the completion encoder on `L_c`.
    pub fn completion_step(&mut self, epoch: usize) -> Result<f64> {
        let off = self.multikg.offsets();
        let mut rng = stream_rng(self.config.rng_seed, "negatives", epoch as u64);
        let mut pairs = Vec::new();
        for (k, kg) in self.multikg.kgs.iter().enumerate() {
            let o = off[k];
            let glob = |t: (usize, usize, usize)| (o + t.0, t.1, o + t.2);
            let known: HashSet<Key> = kg.triples().iter().map(|t| glob(t.key())).collect();
            let mut positives: Vec<Key> = kg.triples().iter().map(|t| glob(t.key())).collect();
            if self.config.transferred_as_positives {
                positives.extend(kg.transferred().iter().map(|t| glob(t.triple.key())));
            }
            let range = o..o + kg.entity_count();
            pairs.extend(sample_negatives(&positives, &known, range, self.config.negatives_per_positive, &mut rng)?);
        }
        let seeds = self.all_seed_rows();
        let mut g = Graph::new();
        let layers = self.model.completion.encode(&mut g, &self.model.params, &self.topology, true, None)?;
        let loss = completion_loss(&mut g, &layers, &pairs, &seeds, self.config.margin_completion)?;
        let value = g.value(loss.total).item()?;
        if !value.is_finite() {
            return Err(Error::Train(format!("non-finite completion loss at epoch {epoch}")));
        }
        g.backward(loss.total)?;
        self.adam_completion.step(&mut self.model.params, &g.param_grads())?;
        Ok(value)
    }

    /// Step 2: one Adam update of the alignment side on `L_a`, with the
    /// completion tables held fixed.
    pub fn alignment_step(&mut self, epoch: usize) -> Result<f64> {
        let completion = if self.config.sir_active() {
            Some(self.completion_embeddings()?)
        } else {
            None
        };
        let model = &self.model;
        let mut g = Graph::new();
        let out = model.alignment.forward(
            &mut g,
            &model.params,
            model.alignment_encoder(),
            &self.topology,
            completion.as_ref(),
            true,
        )?;
        let finals = g.value(out.entities).clone();
        let off = self.multikg.offsets();
        let mut total = None;
        for set in &self.seeds {
            let (a, b) = set.kg_pair;
            let range = |k: usize| off[k]..off[k] + self.multikg.kgs[k].entity_count();
            let negatives = nearest_negatives(
                &self.seed_rows(set),
                &finals,
                range(a),
                range(b),
                self.config.alignment_negatives,
            )?;
            let l = alignment_loss(&mut g, out.entities, &negatives, self.config.margin_alignment)?;
            total = Some(match total {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        let Some(loss) = total else {
            return Ok(0.0);
        };
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(Error::Train(format!("non-finite alignment loss at epoch {epoch}")));
        }
        g.backward(loss)?;
        self.adam_alignment.step(&mut self.model.params, &g.param_grads())?;
        Ok(value)
    }

    /// Step 3: entropy budget, seed enlargement, and triple transfer.
    /// Returns the summed budget and the number of newly transferred triples.
    pub fn entr_step(&mut self, epoch: usize) -> Result<(usize, usize)> {
        let finals = self.finals()?;
        let mut budget = 0;
        let mut next = Vec::with_capacity(self.seeds.len());
        for p in 0..self.seeds.len() {
            let matrix = self.pair_matrix(&finals, p)?;
            let h = matrix_entropy(&matrix);
            let state = self.entropy[p].as_mut().ok_or(Error::DegenerateEntropy)?;
            state.h_current = h;
            let q = seed_budget(state.h_tilde, h, self.config.beta, matrix.rows(), matrix.cols())?;
            budget += q;
            next.push(enlarge_seeds(&matrix, q, &self.multikg.alignments[p].train));
        }
        self.seeds = next;
        let added = transfer_triples(&mut self.multikg, &self.seeds, epoch);
        self.topology = Topology::from_multikg(&self.multikg);
        Ok((budget, added))
    }

    /// Mean validation completion MRR over KGs.
    pub fn validation_mrr(&self) -> Result<f64> {
        let emb = self.completion_embeddings()?;
        let mut total = 0.0;
        for (k, split) in self.multikg.kgc_splits.iter().enumerate() {
            if split.valid.is_empty() {
                return Err(Error::Train(format!("empty validation split for kg {}", self.multikg.kgs[k].id)));
            }
            let ranks = evaluate_kgc(&self.multikg, &emb, k, &split.valid);
            total += aggregate(&ranks, &[1])?.mrr;
        }
        Ok(total / self.multikg.kgc_splits.len() as f64)
    }

    /// Runs one epoch and records its log line.
    pub fn train_epoch(&mut self) -> Result<&EpochLog> {
        let epoch = self.epoch + 1;
        let cfg = &self.config;
        let (do_c, do_a) = (!cfg.has(Ablation::NoComple), !cfg.has(Ablation::NoAlign));
        let do_entr = cfg.entr_active() && epoch.is_multiple_of(cfg.entr_period);
        let loss_completion = if do_c { Some(self.completion_step(epoch)?) } else { None };
        let loss_alignment = if do_a { Some(self.alignment_step(epoch)?) } else { None };
        let budget = if do_entr { Some(self.entr_step(epoch)?.0) } else { None };
        self.epoch = epoch;
        self.valid_mrr = self.validation_mrr()?;
        let log = EpochLog {
            epoch,
            loss_completion,
            loss_alignment,
            budget,
            transferred: self.multikg.kgs.iter().map(|k| k.transferred().len()).sum(),
            valid_mrr: self.valid_mrr,
        };
        debug!("{}", log.line());
        self.history.push(log);
        Ok(self.history.last().expect("just pushed"))
    }

    /// Records the untrained model's validation MRR as epoch 0.
    pub fn evaluate_initial(&mut self) -> Result<()> {
        self.valid_mrr = self.validation_mrr()?;
        self.history = vec![EpochLog {
            epoch: 0,
            loss_completion: None,
            loss_alignment: None,
            budget: None,
            transferred: self.multikg.kgs.iter().map(|k| k.transferred().len()).sum(),
            valid_mrr: self.valid_mrr,
        }];
        Ok(())
    }
}

/// Result of [`fit`]: the selected checkpoint and the full metrics log.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochLog>,
}

/// Trains for `config.epochs` epochs from a fresh state.
pub fn fit(multikg: MultiKg, config: TrainConfig) -> Result<FitOutcome> {
    let mut state = TrainState::new(multikg, config)?;
    state.evaluate_initial()?;
    fit_from(&mut state)
}

/// Continues `state` up to `config.epochs` epochs.
pub fn fit_from(state: &mut TrainState) -> Result<FitOutcome> {
    let mut best = state.checkpoint();
    while state.epoch < state.config.epochs {
        let log = state.train_epoch()?;
        info!("{}", log.line());
        let better = match state.config.selection {
            Selection::ValidMrr => state.valid_mrr > best.valid_mrr || best.valid_mrr.is_nan(),
            Selection::LastEpoch => true,
        };
        if better {
            best = state.checkpoint();
        }
    }
    Ok(FitOutcome {
        best,
        history: state.history.clone(),
    })
}

/// Renders a metrics log, one line per epoch, with the ablation flags in a
/// comment header.
pub fn metrics_log(config: &TrainConfig, history: &[EpochLog]) -> String {
    let flags: Vec<&str> = config.ablations.iter().map(|a| a.name()).collect();
    let mut s = format!(
        "# ablations: {}\n{}\n",
        if flags.is_empty() { "none".to_string() } else { flags.join(",") },
        EpochLog::HEADER
    );
    for l in history {
        s.push_str(&l.line());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::load_dataset;
    use crate::synth::{generate, SynthSpec};
    use tempfile::TempDir;

    fn toy(missing: f64, seed: u64) -> (TempDir, MultiKg) {
        let dir = TempDir::new().unwrap();
        generate(&SynthSpec::new(50, 3, 4.0, missing, 0.3, seed))
            .unwrap()
            .write(dir.path())
            .unwrap();
        let (m, _) = load_dataset(dir.path(), 0.3, seed, false).unwrap();
        (dir, m)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            layers: 2,
            dim: 8,
            epochs: 3,
            margin_alignment: 0.5,
            margin_completion: 2.0,
            lr_completion: 1e-2,
            lr_alignment: 1e-2,
            alignment_negatives: 2,
            negatives_per_positive: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn missing_field_is_named() {
        let mut text = TrainConfig::default().to_toml();
        text = text.lines().filter(|l| !l.starts_with("beta")).collect::<Vec<_>>().join("\n");
        let err = TrainConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("beta"), "{err}");
        let back = TrainConfig::from_toml(&TrainConfig::default().to_toml()).unwrap();
        assert_eq!(back, TrainConfig::default());
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.name()).unwrap(), a);
        }
        assert!(Ablation::parse("no_such").is_err());
    }

    #[test]
    fn steps_freeze_the_other_component() {
        let (_d, m) = toy(0.2, 1);
        let mut st = TrainState::new(m, small()).unwrap();
        let snapshot = |st: &TrainState, ids: &[ParamId]| -> Vec<Tensor> {
            ids.iter().map(|&i| st.model.params.get(i).clone()).collect()
        };
        let a_ids = st.model.alignment_param_ids();
        let c_ids = st.model.completion_param_ids();
        let a0 = snapshot(&st, &a_ids);
        let c0 = snapshot(&st, &c_ids);
        st.completion_step(1).unwrap();
        assert_eq!(snapshot(&st, &a_ids), a0);
        assert_ne!(snapshot(&st, &c_ids), c0);
        let c1 = snapshot(&st, &c_ids);
        st.alignment_step(1).unwrap();
        assert_eq!(snapshot(&st, &c_ids), c1);
        assert_ne!(snapshot(&st, &a_ids), a0);
    }

    #[test]
    fn runs_are_deterministic() {
        let (_d, m) = toy(0.2, 2);
        let a = fit(m.clone(), small()).unwrap();
        let b = fit(m, small()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (_d, m) = toy(0.0, 3);
        let cfg = TrainConfig { epochs: 0, ..small() };
        let out = fit(m, cfg).unwrap();
        assert_eq!(out.best.epoch, 0);
        assert_eq!(out.history.len(), 1);
        assert!(out.best.valid_mrr > 0.0);
    }

    #[test]
    fn ablations_skip_steps() {
        let (_d, m) = toy(0.2, 4);
        let run = |ab: Vec<Ablation>| {
            let out = fit(m.clone(), TrainConfig { ablations: ab, epochs: 1, ..small() }).unwrap();
            out.history[1].clone()
        };
        let l = run(vec![Ablation::NoAlign]);
        assert!(l.loss_alignment.is_none() && l.budget.is_none() && l.loss_completion.is_some());
        let l = run(vec![Ablation::NoComple]);
        assert!(l.loss_completion.is_none() && l.loss_alignment.is_some());
        let l = run(vec![Ablation::NoEntr]);
        assert!(l.budget.is_none() && l.transferred == 0);
        run(vec![Ablation::OneGnn, Ablation::NoRaGnn, Ablation::NoSir]);
    }

    #[test]
    fn entr_off_leaves_seeds_and_triples() {
        let (_d, m) = toy(0.2, 5);
        let mut st = TrainState::new(m, TrainConfig { ablations: vec![Ablation::NoEntr], ..small() }).unwrap();
        let seeds = st.seeds.clone();
        let kgs = st.multikg.kgs.clone();
        for _ in 0..2 {
            st.train_epoch().unwrap();
        }
        assert_eq!(st.seeds, seeds);
        assert_eq!(st.multikg.kgs, kgs);
    }

    #[test]
    fn completion_loss_decreases_on_memorisable_triples() {
        let (_d, m) = toy(0.0, 6);
        let cfg = TrainConfig {
            ablations: vec![Ablation::NoAlign],
            negatives_per_positive: 1,
            ..small()
        };
        let mut st = TrainState::new(m, cfg).unwrap();
        let first = st.completion_step(1).unwrap();
        let mut last = first;
        for e in 2..=30 {
            last = st.completion_step(e).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn checkpoint_round_trip_continues_bitwise() {
        let (dir, m) = toy(0.2, 7);
        let mut st = TrainState::new(m, small()).unwrap();
        st.evaluate_initial().unwrap();
        st.train_epoch().unwrap();
        let path = dir.path().join("ckpt.json");
        st.checkpoint().save(&path).unwrap();
        let (fresh, _) = load_dataset(dir.path(), 0.3, 7, false).unwrap();
        let mut resumed = TrainState::from_checkpoint(fresh, Checkpoint::load(&path).unwrap()).unwrap();
        st.train_epoch().unwrap();
        resumed.train_epoch().unwrap();
        assert_eq!(st.checkpoint(), resumed.checkpoint());
    }

    #[test]
    fn checkpoint_rejects_other_data() {
        let (_d, m) = toy(0.2, 8);
        let (_d2, other) = toy(0.2, 9);
        let st = TrainState::new(m, small()).unwrap();
        let err = TrainState::from_checkpoint(other, st.checkpoint()).unwrap_err();
        assert_eq!(err.to_string(), "checkpoint/data mismatch");
    }
}
