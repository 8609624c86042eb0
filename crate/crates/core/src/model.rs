//! Model parameters, the three-part training objective, the training loop
//! and inference scoring.

use std::collections::HashMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{
    build_normalized_adjacency, heterogeneous_propagate, homogeneous_aggregate,
    NormalizedAdjacency, DEFAULT_LEAKY_SLOPE,
};
use crate::check::{finite_difference_check, FdReport};
use crate::diffusion::{
    generate_negatives, diffusion_loss_tape, predict_noise_tape, time_embedding, DenoiserIds,
    DenoiserParams, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::graph::HeteroGraph;
use crate::metapath::{build_metapaths, MetaPathRelations};
use crate::optim::{AdamConfig, AdamState};
use crate::params::ParamStore;
use crate::rng;
use crate::tape::{Tape, TensorId};

pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegCombine {
    Weighted,
    Sum,
    Average,
}

impl FromStr for NegCombine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weighted" => Ok(Self::Weighted),
            "sum" => Ok(Self::Sum),
            "average" => Ok(Self::Average),
            other => Err(Error::Config(format!(
                "unknown negative combination '{other}' (weighted|sum|average)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginVariant {
    Simple,
    Corrected,
}

impl FromStr for MarginVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Self::Simple),
            "corrected" => Ok(Self::Corrected),
            other => Err(Error::Config(format!(
                "unknown margin variant '{other}' (simple|corrected)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub dim: usize,
    pub learning_rate: f64,
    pub tau: usize,
    pub steps: usize,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub weights: [f64; 4],
    pub epochs: usize,
    pub seed: u64,
    pub dropout_rate: f64,
    pub per_drug_negatives: usize,
    pub leaky_slope: f64,
    pub use_diffusion: bool,
    pub use_homogeneous: bool,
    pub use_heterogeneous: bool,
    pub neg_combine: NegCombine,
    pub margin_variant: MarginVariant,
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 400,
            dim: 128,
            learning_rate: 0.001,
            tau: 30,
            steps: 100,
            alpha_start: 0.9999,
            alpha_end: 0.98,
            weights: [0.9, 0.8, 0.7, 0.6],
            epochs: 100,
            seed: 0,
            dropout_rate: 0.1,
            per_drug_negatives: 2,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            use_diffusion: true,
            use_homogeneous: true,
            use_heterogeneous: true,
            neg_combine: NegCombine::Weighted,
            margin_variant: MarginVariant::Simple,
            margin: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding dim {} must be even and >= 2",
                self.dim
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.tau == 0 {
            return Err(Error::Config("neighbor threshold tau must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} not in [0,1)",
                self.dropout_rate
            )));
        }
        if self.per_drug_negatives == 0 {
            return Err(Error::Config("per-drug negative count must be >= 1".into()));
        }
        if self.margin <= 0.0 && self.margin_variant == MarginVariant::Corrected {
            return Err(Error::Config("corrected margin must be positive".into()));
        }
        if self.weights.windows(2).any(|w| w[0] <= w[1]) || self.weights[3] <= 0.0 {
            return Err(Error::Config(format!(
                "sample weights {:?} must be positive and strictly decreasing",
                self.weights
            )));
        }
        // validates the alpha endpoints and the step count
        NoiseSchedule::build(self.steps, self.alpha_start, self.alpha_end)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_diffusion: f64,
    pub l_ce: f64,
    pub l_margin: f64,
    pub l_total: f64,
}

/// All learned parameters, stored by name. Names are stable: they define the
/// checkpoint layout and the gradient-check grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub dim: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub trained: bool,
}

impl ModelParams {
    pub fn init(n_a: usize, n_b: usize, cfg: &TrainConfig) -> Result<Self> {
        let d = cfg.dim;
        let mut store = ParamStore::new();
        let uniform = |label: &str, n: usize, bound: f64| -> Vec<f64> {
            let mut r = rng::derived_rng(cfg.seed, label);
            (0..n).map(|_| r.random_range(-bound..bound)).collect()
        };
        let eb = 1.0 / (d as f64).sqrt();
        store.add("embed.a", n_a, d, uniform("init/embed.a", n_a * d, eb))?;
        store.add("embed.b", n_b, d, uniform("init/embed.b", n_b * d, eb))?;
        let ab = 1.0 / ((2 * d) as f64).sqrt();
        store.add("attn.a", 2 * d, 1, uniform("init/attn.a", 2 * d, ab))?;
        store.add("attn.b", 2 * d, 1, uniform("init/attn.b", 2 * d, ab))?;
        let den = DenoiserParams::init(d, &mut rng::derived_rng(cfg.seed, "init/denoiser"));
        store.add("denoiser.w1", 3 * d, d, den.w1)?;
        store.add("denoiser.b1", 1, d, den.b1)?;
        store.add("denoiser.w2", d, d, den.w2)?;
        store.add("denoiser.b2", 1, d, den.b2)?;
        for mlp in ["mlp1", "mlp2"] {
            let b1 = 1.0 / ((2 * d) as f64).sqrt();
            let b2 = 1.0 / (d as f64).sqrt();
            store.add(
                &format!("{mlp}.w1"),
                2 * d,
                d,
                uniform(&format!("init/{mlp}.w1"), 2 * d * d, b1),
            )?;
            store.add(&format!("{mlp}.b1"), 1, d, vec![0.0; d])?;
            store.add(
                &format!("{mlp}.w2"),
                d,
                1,
                uniform(&format!("init/{mlp}.w2"), d, b2),
            )?;
            store.add(&format!("{mlp}.b2"), 1, 1, vec![0.0])?;
        }
        Ok(Self {
            store,
            dim: d,
            n_a,
            n_b,
            trained: false,
        })
    }

    /// Rebuild a model from a loaded parameter store.
    pub fn from_store(store: ParamStore, trained: bool) -> Result<Self> {
        let ea = store
            .get("embed.a")
            .ok_or_else(|| Error::Checkpoint("missing embed.a block".into()))?;
        let eb = store
            .get("embed.b")
            .ok_or_else(|| Error::Checkpoint("missing embed.b block".into()))?;
        if ea.cols != eb.cols {
            return Err(Error::Checkpoint("embedding width disagreement".into()));
        }
        let (dim, n_a, n_b) = (ea.cols, ea.rows, eb.rows);
        Ok(Self {
            store,
            dim,
            n_a,
            n_b,
            trained,
        })
    }

    pub fn denoiser(&self) -> DenoiserParams {
        DenoiserParams {
            dim: self.dim,
            w1: self.store.get("denoiser.w1").unwrap().values.clone(),
            b1: self.store.get("denoiser.b1").unwrap().values.clone(),
            w2: self.store.get("denoiser.w2").unwrap().values.clone(),
            b2: self.store.get("denoiser.b2").unwrap().values.clone(),
        }
    }
}

/// Graph-derived structures shared across batches of one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub relations: Option<MetaPathRelations>,
    pub adj: Option<NormalizedAdjacency>,
}

impl Prepared {
    pub fn build(graph: &HeteroGraph, cfg: &TrainConfig) -> Result<Self> {
        let relations = if cfg.use_homogeneous {
            Some(build_metapaths(graph, cfg.tau, cfg.seed)?)
        } else {
            None
        };
        let adj = if cfg.use_heterogeneous {
            Some(build_normalized_adjacency(graph)?)
        } else {
            None
        };
        Ok(Self { relations, adj })
    }
}

/// For each side-A node, `per_node` side-B indices sampled uniformly without
/// replacement from its unlinked targets. Nodes linked to every target
/// contribute an empty list.
pub fn sample_real_negatives(
    graph: &HeteroGraph,
    per_node: usize,
    seed: u64,
) -> Vec<Vec<usize>> {
    let n_b = graph.n_b();
    let adj = graph.adjacency_a();
    let mut rng = rng::derived_rng(seed, "train/real-negatives");
    let mut out = Vec::with_capacity(graph.n_a());
    for linked in &adj {
        let avail = n_b - linked.len();
        if avail == 0 {
            out.push(Vec::new());
            continue;
        }
        let take = per_node.min(avail);
        let mut chosen: Vec<usize> = if linked.len() * 2 < n_b {
            // sparse side: rejection sampling
            let mut set = std::collections::BTreeSet::new();
            while set.len() < take {
                let g = rng.random_range(0..n_b);
                if !linked.contains(&g) {
                    set.insert(g);
                }
            }
            set.into_iter().collect()
        } else {
            let unlinked: Vec<usize> = (0..n_b).filter(|g| !linked.contains(g)).collect();
            let mut idx = rand::seq::index::sample(&mut rng, unlinked.len(), take).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| unlinked[i]).collect()
        };
        chosen.sort_unstable();
        out.push(chosen);
    }
    out
}

fn param_id(ids: &HashMap<String, TensorId>, name: &str) -> TensorId {
    *ids.get(name).unwrap_or_else(|| panic!("missing param {name}"))
}

fn denoiser_ids(ids: &HashMap<String, TensorId>) -> DenoiserIds {
    DenoiserIds {
        w1: param_id(ids, "denoiser.w1"),
        b1: param_id(ids, "denoiser.b1"),
        w2: param_id(ids, "denoiser.w2"),
        b2: param_id(ids, "denoiser.b2"),
    }
}

/// Shared embedding pipeline: optional attention aggregation over meta-path
/// neighbors, then optional normalized heterogeneous propagation.
pub fn propagate_tape(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    prep: &Prepared,
    cfg: &TrainConfig,
    training: bool,
    prop_seed: u64,
) -> Result<(TensorId, TensorId)> {
    let mut h_a = param_id(ids, "embed.a");
    let mut h_b = param_id(ids, "embed.b");
    if let Some(rel) = &prep.relations {
        h_a = homogeneous_aggregate(tape, h_a, &rel.neighbors_a, param_id(ids, "attn.a"), cfg.leaky_slope)?;
        h_b = homogeneous_aggregate(tape, h_b, &rel.neighbors_b, param_id(ids, "attn.b"), cfg.leaky_slope)?;
    }
    if let Some(adj) = &prep.adj {
        let rate = if training { cfg.dropout_rate } else { 0.0 };
        let (a, b) = heterogeneous_propagate(tape, adj, h_a, h_b, rate, training, prop_seed)?;
        h_a = a;
        h_b = b;
    }
    Ok((h_a, h_b))
}

/// Two-layer scorer on concatenated pair embeddings: [B x 1] logits.
pub fn scorer_tape(
    tape: &mut Tape,
    ids: &HashMap<String, TensorId>,
    prefix: &str,
    left: TensorId,
    right: TensorId,
) -> Result<TensorId> {
    let cat = tape.concat_cols(left, right)?;
    let h = tape.matmul(cat, param_id(ids, &format!("{prefix}.w1")))?;
    let h = tape.add_row_broadcast(h, param_id(ids, &format!("{prefix}.b1")))?;
    let h = tape.relu(h);
    let out = tape.matmul(h, param_id(ids, &format!("{prefix}.w2")))?;
    tape.add_row_broadcast(out, param_id(ids, &format!("{prefix}.b2")))
}

/// Plain (non-tape) scorer on one pair, for inference and hand checks.
pub fn score_pair(store: &ParamStore, prefix: &str, e_l: &[f64], e_r: &[f64]) -> Result<f64> {
    let get = |suffix: &str| {
        store
            .get(&format!("{prefix}.{suffix}"))
            .ok_or_else(|| Error::Lookup(format!("no parameter {prefix}.{suffix}")))
    };
    let (w1, b1, w2, b2) = (get("w1")?, get("b1")?, get("w2")?, get("b2")?);
    let d_in = e_l.len() + e_r.len();
    if w1.rows != d_in {
        return Err(Error::Dimension(format!(
            "scorer {prefix} expects input width {}, got {d_in}",
            w1.rows
        )));
    }
    let hidden_w = w1.cols;
    let mut hidden = b1.values.clone();
    for (i, &x) in e_l.iter().chain(e_r.iter()).enumerate() {
        for j in 0..hidden_w {
            hidden[j] += x * w1.values[i * hidden_w + j];
        }
    }
    let mut out = b2.values[0];
    for (j, h) in hidden.iter().enumerate() {
        out += h.max(0.0) * w2.values[j];
    }
    Ok(out)
}

/// Mean over aligned pairs of -log sig(pos) - log(1 - sig(neg)), with log
/// arguments clamped to >= 1e-12.
pub fn ce_loss_tape(tape: &mut Tape, pos: TensorId, neg: TensorId) -> Result<TensorId> {
    let (b, c) = tape.shape(pos);
    if b == 0 {
        return Err(Error::Contract("cross-entropy on empty batch".into()));
    }
    if c != 1 || tape.shape(neg) != (b, 1) {
        return Err(Error::Dimension("cross-entropy expects aligned [B x 1] logits".into()));
    }
    let sp = tape.sigmoid(pos);
    let sp = tape.clamp_min(sp, LOG_CLAMP);
    let lp = tape.log(sp);
    let flipped = tape.scale(neg, -1.0); // 1 - sig(x) = sig(-x)
    let sn = tape.sigmoid(flipped);
    let sn = tape.clamp_min(sn, LOG_CLAMP);
    let ln = tape.log(sn);
    let both = tape.add(lp, ln)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -1.0))
}

/// Margin ranking loss over aligned positive/negative scores.
pub fn margin_loss_tape(
    tape: &mut Tape,
    pos: TensorId,
    neg: TensorId,
    variant: MarginVariant,
    margin: f64,
) -> Result<TensorId> {
    let (b, c) = tape.shape(pos);
    if b == 0 {
        return Err(Error::Contract("margin loss on empty batch".into()));
    }
    if c != 1 || tape.shape(neg) != (b, 1) {
        return Err(Error::Dimension("margin loss expects aligned [B x 1] scores".into()));
    }
    let hinge_arg = match variant {
        // printed form: penalizes positives scoring above the negatives
        MarginVariant::Simple => tape.sub(pos, neg)?,
        MarginVariant::Corrected => {
            let gap = tape.sub(neg, pos)?;
            let m = tape.constant(b, 1, vec![margin; b])?;
            tape.add(gap, m)?
        }
    };
    let h = tape.relu(hinge_arg);
    Ok(tape.mean(h))
}

/// Differentiable reverse-process generation for a batch of conditioning
/// embeddings: full trajectory from pure noise, fractional-step states
/// combined per `combine`. Returns [B x d] negative embeddings.
pub fn generate_negatives_tape(
    tape: &mut Tape,
    den: &DenoiserIds,
    e_d0: TensorId,
    schedule: &NoiseSchedule,
    combine: NegCombine,
    weights: [f64; 4],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TensorId> {
    let (b, d) = tape.shape(e_d0);
    if b == 0 {
        return Err(Error::Contract("negative generation on empty batch".into()));
    }
    let t_max = schedule.steps;
    let targets = schedule.sample_steps();
    let mut sampled: HashMap<usize, TensorId> = HashMap::new();
    let mut state = tape.constant(b, d, rng::standard_normal(rng, b * d))?;
    if targets.contains(&t_max) {
        sampled.insert(t_max, state);
    }
    for t in (1..=t_max).rev() {
        let pe_row = time_embedding(t, d)?;
        let pe = tape.constant(b, d, pe_row.repeat(b))?;
        let eps_hat = predict_noise_tape(tape, den, state, e_d0, pe)?;
        let a = schedule.alpha(t);
        let ab = schedule.alpha_bar(t);
        let coef = (1.0 - ab) / (1.0 - ab).sqrt();
        let scaled_eps = tape.scale(eps_hat, coef);
        let centered = tape.sub(state, scaled_eps)?;
        let mean = tape.scale(centered, 1.0 / a.sqrt());
        let sigma = schedule.sigma2(t).sqrt();
        state = if sigma > 0.0 {
            let z: Vec<f64> = rng::standard_normal(rng, b * d)
                .into_iter()
                .map(|v| sigma * v)
                .collect();
            let noise = tape.constant(b, d, z)?;
            tape.add(mean, noise)?
        } else {
            mean
        };
        if targets.contains(&(t - 1)) {
            sampled.insert(t - 1, state);
        }
    }
    let coeffs: [f64; 4] = match combine {
        NegCombine::Weighted => weights,
        NegCombine::Sum => [1.0; 4],
        NegCombine::Average => [0.25; 4],
    };
    let mut acc: Option<TensorId> = None;
    for (i, &t) in targets.iter().enumerate() {
        let term = tape.scale(sampled[&t], coeffs[i]);
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(acc.unwrap())
}

pub struct BatchOutput {
    pub tape: Tape,
    pub loss: TensorId,
    pub ids: HashMap<String, TensorId>,
    pub report: LossReport,
}

/// Forward pass and total loss for one batch of positive edges. All
/// randomness derives from (config seed, epoch, batch index), so replaying
/// the same batch is bit-identical.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    store: &ParamStore,
    prep: &Prepared,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    batch: &[(usize, usize)],
    real_negs: &[Vec<usize>],
    round_robin: &mut [usize],
    epoch: usize,
    batch_idx: usize,
    training: bool,
) -> Result<BatchOutput> {
    if batch.is_empty() {
        return Err(Error::Contract("empty training batch".into()));
    }
    let mut tape = Tape::new();
    let ids = store.register_all(&mut tape)?;
    let prop_seed = rng::derive_seed(cfg.seed, &format!("train/prop/{epoch}/{batch_idx}"));
    let (h_a, h_b) = propagate_tape(&mut tape, &ids, prep, cfg, training, prop_seed)?;

    let drugs: Vec<usize> = batch.iter().map(|&(a, _)| a).collect();
    let genes: Vec<usize> = batch.iter().map(|&(_, b)| b).collect();
    let e_d = tape.gather_rows(h_a, drugs.clone())?;
    let e_g = tape.gather_rows(h_b, genes)?;

    // pair each positive with one of its drug's pre-generated real
    // negatives, round-robin; drugs with no unlinked target drop out
    let mut ce_drugs = Vec::new();
    let mut ce_genes = Vec::new();
    let mut ce_neg_genes = Vec::new();
    for &(a, b) in batch {
        if real_negs[a].is_empty() {
            continue;
        }
        let k = round_robin[a] % real_negs[a].len();
        round_robin[a] += 1;
        ce_drugs.push(a);
        ce_genes.push(b);
        ce_neg_genes.push(real_negs[a][k]);
    }
    if ce_drugs.is_empty() {
        return Err(Error::Contract(
            "no real negatives available for any drug in this batch".into(),
        ));
    }
    let ce_d = tape.gather_rows(h_a, ce_drugs)?;
    let ce_g_pos = tape.gather_rows(h_b, ce_genes)?;
    let ce_g_neg = tape.gather_rows(h_b, ce_neg_genes)?;
    let pos1 = scorer_tape(&mut tape, &ids, "mlp1", ce_d, ce_g_pos)?;
    let neg1 = scorer_tape(&mut tape, &ids, "mlp1", ce_d, ce_g_neg)?;
    let l_ce = ce_loss_tape(&mut tape, pos1, neg1)?;

    let (l_diff, l_margin) = if cfg.use_diffusion {
        let den = denoiser_ids(&ids);
        let mut diff_rng =
            rng::derived_rng(cfg.seed, &format!("train/diffloss/{epoch}/{batch_idx}"));
        let l_diff = diffusion_loss_tape(&mut tape, &den, e_g, e_d, schedule, &mut diff_rng)?;
        let mut gen_rng = rng::derived_rng(cfg.seed, &format!("train/gen/{epoch}/{batch_idx}"));
        let e_neg = generate_negatives_tape(
            &mut tape,
            &den,
            e_d,
            schedule,
            cfg.neg_combine,
            cfg.weights,
            &mut gen_rng,
        )?;
        let pos2 = scorer_tape(&mut tape, &ids, "mlp2", e_d, e_g)?;
        let neg2 = scorer_tape(&mut tape, &ids, "mlp2", e_d, e_neg)?;
        let l_margin =
            margin_loss_tape(&mut tape, pos2, neg2, cfg.margin_variant, cfg.margin)?;
        (l_diff, l_margin)
    } else {
        let z1 = tape.constant(1, 1, vec![0.0])?;
        let z2 = tape.constant(1, 1, vec![0.0])?;
        (z1, z2)
    };

    let partial = tape.add(l_diff, l_ce)?;
    let loss = tape.add(partial, l_margin)?;
    let report = LossReport {
        l_diffusion: tape.scalar(l_diff),
        l_ce: tape.scalar(l_ce),
        l_margin: tape.scalar(l_margin),
        l_total: tape.scalar(loss),
    };
    Ok(BatchOutput {
        tape,
        loss,
        ids,
        report,
    })
}

/// Per-epoch progress handed to the training callback.
pub struct EpochState<'a> {
    pub epoch: usize,
    pub report: &'a LossReport,
    pub model: &'a ModelParams,
}

/// Train with an observer: the callback runs after every epoch and returns
/// whether to continue. Epoch reports average the batch losses.
pub fn train_with(
    cfg: &TrainConfig,
    graph: &HeteroGraph,
    mut on_epoch: impl FnMut(&EpochState) -> bool,
) -> Result<(ModelParams, Vec<LossReport>)> {
    cfg.validate()?;
    if graph.edges().is_empty() {
        return Err(Error::Contract("cannot train on a graph with no edges".into()));
    }
    let schedule = NoiseSchedule::build(cfg.steps, cfg.alpha_start, cfg.alpha_end)?;
    let prep = Prepared::build(graph, cfg)?;
    let mut model = ModelParams::init(graph.n_a(), graph.n_b(), cfg)?;
    let real_negs = sample_real_negatives(graph, cfg.per_drug_negatives, cfg.seed);
    let mut round_robin = vec![0usize; graph.n_a()];
    let mut adam = AdamState::new();
    let adam_cfg = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut history = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut edges = graph.edges().to_vec();
        let mut shuffle_rng = rng::derived_rng(cfg.seed, &format!("train/shuffle/{epoch}"));
        edges.shuffle(&mut shuffle_rng);
        let (mut sd, mut sc, mut sm) = (0.0, 0.0, 0.0);
        let mut n_batches = 0usize;
        for (batch_idx, chunk) in edges.chunks(cfg.batch_size).enumerate() {
            let mut out = batch_loss(
                &model.store,
                &prep,
                cfg,
                &schedule,
                chunk,
                &real_negs,
                &mut round_robin,
                epoch,
                batch_idx,
                true,
            )?;
            if !out.report.l_total.is_finite() {
                return Err(Error::Verification(format!(
                    "non-finite loss at epoch {epoch} batch {batch_idx}: {:?}",
                    out.report
                )));
            }
            let gm = out.tape.backward(out.loss)?;
            let grads: HashMap<String, Vec<f64>> = out
                .ids
                .iter()
                .map(|(name, &id)| (name.clone(), gm.get(id).unwrap().to_vec()))
                .collect();
            adam.step(&mut model.store, &grads, &adam_cfg)?;
            sd += out.report.l_diffusion;
            sc += out.report.l_ce;
            sm += out.report.l_margin;
            n_batches += 1;
        }
        let n = n_batches as f64;
        let (ld, lc, lm) = (sd / n, sc / n, sm / n);
        let report = LossReport {
            l_diffusion: ld,
            l_ce: lc,
            l_margin: lm,
            l_total: ld + lc + lm,
        };
        history.push(report);
        model.trained = true;
        let go_on = on_epoch(&EpochState {
            epoch,
            report: &history[epoch],
            model: &model,
        });
        if !go_on {
            break;
        }
    }
    Ok((model, history))
}

pub fn train(cfg: &TrainConfig, graph: &HeteroGraph) -> Result<(ModelParams, Vec<LossReport>)> {
    train_with(cfg, graph, |_| true)
}

/// Evaluation-mode embeddings (no dropout) as plain row-major matrices.
pub fn propagate_plain(
    model: &ModelParams,
    prep: &Prepared,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let ids = model.store.register_all(&mut tape)?;
    let (h_a, h_b) = propagate_tape(&mut tape, &ids, prep, cfg, false, 0)?;
    Ok((tape.value(h_a).to_vec(), tape.value(h_b).to_vec()))
}

/// Inference scores for a list of pairs: Score = MLP2(e_d, e_g) -
/// MLP2(e_d, e_neg) + MLP1(e_d, e_g), with the diffusion negative generated
/// once per distinct drug from the given seed. With diffusion disabled the
/// score reduces to the MLP1 term.
pub fn score_pairs(
    model: &ModelParams,
    prep: &Prepared,
    cfg: &TrainConfig,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<f64>> {
    if !model.trained {
        return Err(Error::Contract("model has not been trained".into()));
    }
    for &(a, b) in pairs {
        if a >= model.n_a || b >= model.n_b {
            return Err(Error::Lookup(format!(
                "pair ({a},{b}) outside {}x{}",
                model.n_a, model.n_b
            )));
        }
    }
    let d = model.dim;
    let (ha, hb) = propagate_plain(model, prep, cfg)?;
    let denoiser = model.denoiser();
    let schedule = NoiseSchedule::build(cfg.steps, cfg.alpha_start, cfg.alpha_end)?;
    let mut neg_cache: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut scores = Vec::with_capacity(pairs.len());
    for &(a, b) in pairs {
        let e_d = &ha[a * d..(a + 1) * d];
        let e_g = &hb[b * d..(b + 1) * d];
        let s1 = score_pair(&model.store, "mlp1", e_d, e_g)?;
        if !cfg.use_diffusion {
            scores.push(s1);
            continue;
        }
        if !neg_cache.contains_key(&a) {
            // one noise stream per run, shared across drugs: negatives then
            // differ only through the conditioning embedding, so the score's
            // subtracted term varies smoothly with e_d instead of injecting
            // independent per-drug sampling noise
            let mut r = rng::derived_rng(seed, "predict/negative");
            let bundle = generate_negatives(&denoiser, e_d, &schedule, cfg.weights, d, &mut r)?;
            let neg = match cfg.neg_combine {
                NegCombine::Weighted => bundle.combined,
                NegCombine::Sum => {
                    (0..d).map(|j| bundle.sampled.iter().map(|s| s[j]).sum()).collect()
                }
                NegCombine::Average => (0..d)
                    .map(|j| bundle.sampled.iter().map(|s| s[j]).sum::<f64>() / 4.0)
                    .collect(),
            };
            neg_cache.insert(a, neg);
        }
        let e_neg = &neg_cache[&a];
        let s2_pos = score_pair(&model.store, "mlp2", e_d, e_g)?;
        let s2_neg = score_pair(&model.store, "mlp2", e_d, e_neg)?;
        scores.push(s2_pos - s2_neg + s1);
    }
    Ok(scores)
}

pub fn predict_score(
    model: &ModelParams,
    prep: &Prepared,
    cfg: &TrainConfig,
    drug: usize,
    gene: usize,
    seed: u64,
) -> Result<f64> {
    Ok(score_pairs(model, prep, cfg, &[(drug, gene)], seed)?[0])
}

/// Small dense fixture for full-model gradient checking: 3 + 3 nodes, each
/// side-A node leaving one target unlinked.
pub fn gradcheck_fixture() -> HeteroGraph {
    HeteroGraph::from_indexed_edges(3, 3, &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 0)])
        .unwrap()
}

pub fn gradcheck_config(seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 8,
        steps: 4,
        tau: 2,
        batch_size: 16,
        epochs: 1,
        seed,
        ..TrainConfig::default()
    }
}

/// Full-model finite-difference check of the total batch loss on the small
/// fixture: every parameter group's analytic gradient against central
/// differences. `flip_sign` negates one group's analytic gradient, a
/// mutation hook proving the check can fail.
pub fn gradcheck_report(seed: u64, flip_sign: Option<&str>) -> Result<FdReport> {
    let cfg = gradcheck_config(seed);
    let graph = gradcheck_fixture();
    let prep = Prepared::build(&graph, &cfg)?;
    let schedule = NoiseSchedule::build(cfg.steps, cfg.alpha_start, cfg.alpha_end)?;
    let model = ModelParams::init(graph.n_a(), graph.n_b(), &cfg)?;
    let real_negs = sample_real_negatives(&graph, cfg.per_drug_negatives, cfg.seed);
    let batch = graph.edges().to_vec();

    let eval = |store: &ParamStore| -> f64 {
        let mut rr = vec![0usize; graph.n_a()];
        let out = batch_loss(
            store, &prep, &cfg, &schedule, &batch, &real_negs, &mut rr, 0, 0, true,
        )
        .expect("fixture batch must evaluate");
        out.report.l_total
    };

    let mut rr = vec![0usize; graph.n_a()];
    let mut out = batch_loss(
        &model.store,
        &prep,
        &cfg,
        &schedule,
        &batch,
        &real_negs,
        &mut rr,
        0,
        0,
        true,
    )?;
    let gm = out.tape.backward(out.loss)?;
    let mut analytic: HashMap<String, Vec<f64>> = out
        .ids
        .iter()
        .map(|(name, &id)| (name.clone(), gm.get(id).unwrap().to_vec()))
        .collect();
    if let Some(group) = flip_sign {
        let g = analytic
            .get_mut(group)
            .ok_or_else(|| Error::Lookup(format!("no parameter group {group}")))?;
        for v in g.iter_mut() {
            *v = -*v;
        }
    }
    let mut store = model.store.clone();
    Ok(finite_difference_check(&mut store, &analytic, 1e-5, eval))
}
