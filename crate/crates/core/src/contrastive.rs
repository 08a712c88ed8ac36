//! Meta-contrastive training of the query encoder, model encoder and
//! accuracy surrogate over the zoo's dataset tasks.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffmath::{adam_step, AdamConfig, Parameter, Tape, Tensor, Var};
use crate::encoders::{EmbeddingMode, EncoderConfig, ModelEncoder, QueryEncoder, EMBED_DIM};
use crate::error::{Error, Result};
use crate::layers::Module;
use crate::predictor::{surrogate_loss, Ablation, Predictor, DEFAULT_DROPOUT};
use crate::seed;
use crate::synth::evaluate_network;
use crate::zoo::{DatasetRecord, ModelZoo, NetworkRecord};

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegAggregation {
    Sum,
    #[default]
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Hinge on positives against in-batch negatives, both directions.
    #[default]
    Contrastive,
    /// `1 - cos(q, m+)` only: no negatives.
    CosineRegression,
    /// Surrogate squared error only.
    SurrogateOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub margin: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub neg_aggregation: NegAggregation,
    pub objective: Objective,
    pub rng_seed: u64,
    pub embed_dim: usize,
    pub functional_dim: usize,
    pub noise_batch: usize,
    pub noise_seed: u64,
    pub hidden_width: usize,
    pub mode: EmbeddingMode,
    /// Training probe instances drawn per class from the train split.
    pub probes_per_class: usize,
    /// Fraction of each dataset's networks withheld from training.
    pub holdout_fraction: f64,
    /// Embed networks through their unfitted heads.
    pub generic_models: bool,
    pub dropout_p: f64,
    /// Apply dropout to the surrogate while training.
    pub train_dropout: bool,
    /// Also fit the surrogate on one mismatched (query, network) pair per
    /// task, labelled with that network's accuracy on the query dataset.
    pub cross_pairs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 140,
            margin: 0.5,
            lambda: 1.0,
            lr: 1e-2,
            epochs: 200,
            neg_aggregation: NegAggregation::Mean,
            objective: Objective::Contrastive,
            rng_seed: crate::synth::DEFAULT_SEED,
            embed_dim: EMBED_DIM,
            functional_dim: 64,
            noise_batch: 8,
            noise_seed: 0x5eed,
            hidden_width: 0,
            mode: EmbeddingMode::Full,
            probes_per_class: 10,
            holdout_fraction: 0.2,
            generic_models: false,
            dropout_p: DEFAULT_DROPOUT,
            train_dropout: false,
            cross_pairs: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("train config: {m}")));
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.lambda >= 0.0) {
            return bad("lambda must be non-negative");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.embed_dim == 0 || self.functional_dim == 0 || self.noise_batch == 0 {
            return bad("dimensions must be positive");
        }
        if self.probes_per_class == 0 {
            return bad("probes_per_class must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must be in [0, 1)");
        }
        Ok(())
    }

    pub fn encoder_config(&self, feature_dim: usize) -> EncoderConfig {
        EncoderConfig {
            feature_dim,
            embed_dim: self.embed_dim,
            functional_dim: self.functional_dim,
            noise_batch: self.noise_batch,
            noise_seed: self.noise_seed,
            hidden_width: self.hidden_width,
            init_seed: seed::derive(self.rng_seed, "encoder-init", &[]),
            mode: self.mode,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

/// Trained encoders plus surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct TansModel {
    pub config: TrainConfig,
    pub feature_dim: usize,
    pub query: QueryEncoder,
    pub model: ModelEncoder,
    pub predictor: Predictor,
}

impl TansModel {
    pub fn new(config: TrainConfig, feature_dim: usize) -> Result<Self> {
        config.validate()?;
        let enc = config.encoder_config(feature_dim);
        Ok(Self {
            query: QueryEncoder::new(&enc),
            model: ModelEncoder::new(&enc),
            predictor: Predictor::new(
                config.embed_dim,
                config.dropout_p,
                seed::derive(config.rng_seed, "predictor-init", &[]),
            ),
            feature_dim,
            config,
        })
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut p = self.query.parameters();
        p.extend(self.model.parameters());
        p.extend(self.predictor.parameters());
        p
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut p = self.query.parameters_mut();
        p.extend(self.model.parameters_mut());
        p.extend(self.predictor.parameters_mut());
        p
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    fn split_vars<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var], &'a [Var]) {
        let a = self.query.parameters().len();
        let b = a + self.model.parameters().len();
        (&vars[..a], &vars[a..b], &vars[b..])
    }

    pub fn encode_query(&self, probe: &[Vec<f64>]) -> Result<Vec<f64>> {
        crate::encoders::encode_query(probe, &self.query)
    }

    /// Model-encoder input honoring the `generic_models` switch.
    pub fn model_input(&self, net: &NetworkRecord) -> Result<Vec<f64>> {
        if self.config.generic_models {
            self.model.input_for_generic(net)
        } else {
            self.model.input_for(net)
        }
    }

    pub fn encode_network(&self, net: &NetworkRecord) -> Result<Vec<f64>> {
        let input = self.model_input(net)?;
        Ok(self.model.embed_inputs(&[input])?.remove(0))
    }
}

/// One (dataset, positive network) pair inside a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub probe: Vec<Vec<f64>>,
    pub model_input: Vec<f64>,
    pub accuracy: f64,
}

/// Surrogate-only pair of batch rows: task `query`'s probe with task
/// `model`'s network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossPair {
    pub query: usize,
    pub model: usize,
    pub accuracy: f64,
}

fn gather_rows(tape: &mut Tape, x: Var, rows: &[usize]) -> Result<Var> {
    let d = tape.value(x).shape()[1];
    let idx = rows.iter().flat_map(|&r| (r * d)..(r * d + d)).collect();
    tape.gather(x, idx, vec![rows.len(), d])
}

/// Per-component means of a batch objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub l_m: f64,
    pub l_q: f64,
    pub l_s: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub parts: LossParts,
}

/// `max(0, margin - pos + agg(negs))` row by row: `b x 1` and `b x n` in,
/// `b x 1` out.
pub fn hinge(
    tape: &mut Tape,
    pos: Var,
    negs: Var,
    margin: f64,
    agg: NegAggregation,
) -> Result<Var> {
    let n = tape.value(negs).cols();
    if n == 0 {
        return Err(Error::invalid(
            "contrastive loss needs at least one negative",
        ));
    }
    let mut a = tape.row_sum(negs);
    if agg == NegAggregation::Mean {
        a = tape.scale(a, 1.0 / n as f64);
    }
    let d = tape.sub(a, pos)?;
    let d = tape.offset(d, margin);
    Ok(tape.relu(d))
}

/// Query-anchored loss on the tape. `q`, `m_pos` are `1 x d`, `m_negs` is
/// `n x d`.
pub fn loss_m_var(
    tape: &mut Tape,
    q: Var,
    m_pos: Var,
    m_negs: Var,
    margin: f64,
    agg: NegAggregation,
) -> Result<Var> {
    let pos = tape.cosine(q, m_pos)?;
    let negs = tape.cosine(q, m_negs)?;
    hinge(tape, pos, negs, margin, agg)
}

/// Model-anchored mirror of [`loss_m_var`].
pub fn loss_q_var(
    tape: &mut Tape,
    m: Var,
    q_pos: Var,
    q_negs: Var,
    margin: f64,
    agg: NegAggregation,
) -> Result<Var> {
    loss_m_var(tape, m, q_pos, q_negs, margin, agg)
}

fn eval_loss(
    anchor: &[f64],
    pos: &[f64],
    negs: &[Vec<f64>],
    margin: f64,
    agg: NegAggregation,
) -> Result<f64> {
    if negs.is_empty() {
        return Err(Error::invalid(
            "contrastive loss needs at least one negative",
        ));
    }
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::row(anchor.to_vec()));
    let p = tape.leaf(Tensor::row(pos.to_vec()));
    let n = tape.leaf(Tensor::from_rows(negs)?);
    let l = loss_m_var(&mut tape, a, p, n, margin, agg)?;
    Ok(tape.value(l).item())
}

pub fn loss_m(
    q: &[f64],
    m_pos: &[f64],
    m_negs: &[Vec<f64>],
    margin: f64,
    agg: NegAggregation,
) -> Result<f64> {
    eval_loss(q, m_pos, m_negs, margin, agg)
}

pub fn loss_q(
    m: &[f64],
    q_pos: &[f64],
    q_negs: &[Vec<f64>],
    margin: f64,
    agg: NegAggregation,
) -> Result<f64> {
    eval_loss(m, q_pos, q_negs, margin, agg)
}

/// Hinge from precomputed similarities.
pub fn hinge_value(pos: f64, negs: &[f64], margin: f64, agg: NegAggregation) -> f64 {
    let s: f64 = negs.iter().sum();
    let a = match agg {
        NegAggregation::Sum => s,
        NegAggregation::Mean => s / negs.len() as f64,
    };
    (margin - pos + a).max(0.0)
}

/// Batch objective on the tape; `vars` are bound in [`TansModel::parameters`]
/// order. Returns the scalar total and the component means.
pub fn batch_objective(
    tape: &mut Tape,
    model: &TansModel,
    vars: &[Var],
    tasks: &[Task],
    cross: &[CrossPair],
    mask: Option<Tensor>,
) -> Result<(Var, LossParts)> {
    let cfg = &model.config;
    let b = tasks.len();
    if b < 2 && cfg.objective == Objective::Contrastive {
        return Err(Error::invalid(
            "a contrastive batch needs at least two tasks",
        ));
    }
    if b == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let (qv, mv, pv) = model.split_vars(vars);
    let rows = tasks
        .iter()
        .map(|t| model.query.forward(tape, qv, &t.probe))
        .collect::<Result<Vec<_>>>()?;
    let q = tape.stack_rows(&rows)?;
    let inputs: Vec<Vec<f64>> = tasks.iter().map(|t| t.model_input.clone()).collect();
    let m = model.model.forward(tape, mv, &inputs)?;

    if let Some(c) = cross.iter().find(|c| c.query >= b || c.model >= b) {
        return Err(Error::invalid(format!(
            "cross pair {c:?} outside a batch of {b}"
        )));
    }
    let (pq, pm) = if cross.is_empty() {
        (q, m)
    } else {
        let qr: Vec<usize> = (0..b).chain(cross.iter().map(|c| c.query)).collect();
        let mr: Vec<usize> = (0..b).chain(cross.iter().map(|c| c.model)).collect();
        (gather_rows(tape, q, &qr)?, gather_rows(tape, m, &mr)?)
    };
    let pred = model.predictor.forward(tape, pv, pq, pm, mask)?;
    let target = tape.constant(Tensor::new(
        vec![b + cross.len(), 1],
        tasks
            .iter()
            .map(|t| t.accuracy)
            .chain(cross.iter().map(|c| c.accuracy))
            .collect(),
    )?);
    let ls = surrogate_loss(tape, pred, target)?;

    let zero = || Tensor::zeros(&[b, 1]);
    let (lm, lq) = match cfg.objective {
        Objective::Contrastive => {
            let s = tape.cosine(q, m)?;
            let pos = tape.gather(s, (0..b).map(|i| i * b + i).collect(), vec![b, 1])?;
            let off = |f: &dyn Fn(usize, usize) -> usize| -> Vec<usize> {
                (0..b)
                    .flat_map(|i| (0..b).filter(move |&j| j != i).map(move |j| (i, j)))
                    .map(|(i, j)| f(i, j))
                    .collect()
            };
            let negs_m = tape.gather(s, off(&|i, j| i * b + j), vec![b, b - 1])?;
            let negs_q = tape.gather(s, off(&|i, j| j * b + i), vec![b, b - 1])?;
            let lm = hinge(tape, pos, negs_m, cfg.margin, cfg.neg_aggregation)?;
            let lq = hinge(tape, pos, negs_q, cfg.margin, cfg.neg_aggregation)?;
            (lm, lq)
        }
        Objective::CosineRegression => {
            let s = tape.cosine(q, m)?;
            let pos = tape.gather(s, (0..b).map(|i| i * b + i).collect(), vec![b, 1])?;
            let neg = tape.scale(pos, -1.0);
            let lm = tape.offset(neg, 1.0);
            (lm, tape.constant(zero()))
        }
        Objective::SurrogateOnly => (tape.constant(zero()), tape.constant(zero())),
    };
    let sum = tape.add(lm, lq)?;
    let total = if cross.is_empty() {
        let ls_w = tape.scale(ls, cfg.lambda);
        let per_task = tape.add(sum, ls_w)?;
        tape.mean(per_task)
    } else {
        let contrast = tape.mean(sum);
        let ls_mean = tape.mean(ls);
        let ls_w = tape.scale(ls_mean, cfg.lambda);
        tape.add(contrast, ls_w)?
    };
    let mean_of = |v: Var, t: &Tape| {
        let d = t.value(v).data();
        d.iter().sum::<f64>() / d.len() as f64
    };
    let parts = LossParts {
        l_m: mean_of(lm, tape),
        l_q: mean_of(lq, tape),
        l_s: mean_of(ls, tape),
        total: tape.value(total).item(),
    };
    Ok((total, parts))
}

/// Result of [`meta_train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TansModel,
    pub trace: Vec<EpochLoss>,
    /// Network ids withheld from training.
    pub holdout: BTreeSet<String>,
}

/// Network ids withheld per dataset: `round(fraction * n)` of each dataset's
/// entries, never all of them.
pub fn holdout_split(zoo: &ModelZoo, fraction: f64, rng_seed: u64) -> BTreeSet<String> {
    let mut by_ds: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in &zoo.entries {
        by_ds.entry(&e.dataset_id).or_default().push(&e.network_id);
    }
    let mut out = BTreeSet::new();
    for (ds, mut nets) in by_ds {
        nets.sort_unstable();
        let n_hold = ((fraction * nets.len() as f64).round() as usize).min(nets.len() - 1);
        let mut rng = seed::rng(seed::derive_str(rng_seed, "holdout", ds), "holdout", &[]);
        nets.shuffle(&mut rng);
        out.extend(nets[..n_hold].iter().map(|s| s.to_string()));
    }
    out
}

/// `per_class` random train-split instances from each class.
pub fn sample_probe(ds: &DatasetRecord, per_class: usize, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.class_count];
    for &i in &ds.train {
        by_class[ds.labels[i]].push(i);
    }
    let mut out = Vec::new();
    for idx in &by_class {
        for &i in idx.choose_multiple(rng, per_class.min(idx.len())) {
            out.push(ds.features[i].clone());
        }
    }
    out
}

fn feature_dim_of(zoo: &ModelZoo) -> Result<usize> {
    let dims: BTreeSet<usize> = zoo.datasets.values().map(|d| d.feature_dim).collect();
    match dims.len() {
        1 => Ok(*dims.iter().next().expect("one")),
        0 => Err(Error::invalid("zoo has no datasets")),
        _ => Err(Error::invalid("datasets disagree on feature dimension")),
    }
}

/// Train all parameters with Adam. An epoch presents every training network
/// once as a positive; each step draws one network per dataset.
pub fn meta_train(zoo: &ModelZoo, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let feature_dim = feature_dim_of(zoo)?;
    let mut model = TansModel::new(cfg.clone(), feature_dim)?;
    let holdout = holdout_split(zoo, cfg.holdout_fraction, cfg.rng_seed);

    let mut by_ds: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut nets: Vec<&NetworkRecord> = Vec::new();
    for e in &zoo.entries {
        if holdout.contains(&e.network_id) {
            continue;
        }
        let net = zoo.network(&e.network_id)?;
        inputs.push(model.model_input(net)?);
        nets.push(net);
        by_ds
            .entry(e.dataset_id.clone())
            .or_default()
            .push((inputs.len() - 1, e.accuracy));
    }
    let need = if cfg.objective == Objective::Contrastive {
        2
    } else {
        1
    };
    if by_ds.len() < need {
        return Err(Error::invalid(format!(
            "training needs at least {need} datasets with entries, zoo has {}",
            by_ds.len()
        )));
    }
    let datasets: Vec<(&DatasetRecord, &Vec<(usize, f64)>)> = by_ds
        .iter()
        .map(|(id, v)| Ok((zoo.dataset(id)?, v)))
        .collect::<Result<_>>()?;
    // accuracy of every training network on every dataset, row-major by dataset
    let cross_acc: Vec<f64> = if cfg.cross_pairs {
        datasets
            .par_iter()
            .flat_map_iter(|(ds, _)| nets.iter().map(|n| evaluate_network(n, ds)))
            .collect()
    } else {
        Vec::new()
    };
    let steps_per_epoch = datasets.iter().map(|d| d.1.len()).max().unwrap_or(0);
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut t = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = seed::rng(cfg.rng_seed, "epoch", &[epoch as u64]);
        let perms: Vec<Vec<usize>> = datasets
            .iter()
            .map(|(_, v)| {
                let mut p: Vec<usize> = (0..v.len()).collect();
                p.shuffle(&mut rng);
                p
            })
            .collect();
        let mut acc = LossParts::default();
        let mut n_batches = 0usize;
        for step in 0..steps_per_epoch {
            let mut order: Vec<usize> = (0..datasets.len()).collect();
            order.shuffle(&mut rng);
            for chunk in batch_chunks(&order, cfg.batch_size) {
                let mut rows = Vec::with_capacity(chunk.len());
                let tasks: Vec<Task> = chunk
                    .iter()
                    .map(|&k| {
                        let (ds, entries) = datasets[k];
                        let (row, accuracy) = entries[perms[k][step % entries.len()]];
                        rows.push(row);
                        Task {
                            probe: sample_probe(ds, cfg.probes_per_class, &mut rng),
                            model_input: inputs[row].clone(),
                            accuracy,
                        }
                    })
                    .collect();
                let b = tasks.len();
                let cross: Vec<CrossPair> = if cfg.cross_pairs && b > 1 {
                    (0..b)
                        .map(|i| {
                            let j = (i + rng.random_range(1..b)) % b;
                            CrossPair {
                                query: i,
                                model: j,
                                accuracy: cross_acc[chunk[i] * nets.len() + rows[j]],
                            }
                        })
                        .collect()
                } else {
                    Vec::new()
                };
                let mask = cfg
                    .train_dropout
                    .then(|| model.predictor.dropout_mask(b + cross.len(), &mut rng));
                let mut tape = Tape::new();
                let vars = model.bind(&mut tape);
                let (total, parts) =
                    batch_objective(&mut tape, &model, &vars, &tasks, &cross, mask)?;
                if !parts.total.is_finite() || parts.total > DIVERGENCE_LIMIT {
                    return Err(Error::Divergence(format!(
                        "loss {} at epoch {epoch}, step {step}",
                        parts.total
                    )));
                }
                let grads = tape.backward(total);
                let mut params = model.parameters_mut();
                for (p, &v) in params.iter_mut().zip(&vars) {
                    p.zero_grad();
                    grads.accumulate(v, p);
                }
                t += 1;
                adam_step(&mut params, adam, t);
                acc.l_m += parts.l_m;
                acc.l_q += parts.l_q;
                acc.l_s += parts.l_s;
                acc.total += parts.total;
                n_batches += 1;
            }
        }
        let k = n_batches.max(1) as f64;
        let parts = LossParts {
            l_m: acc.l_m / k,
            l_q: acc.l_q / k,
            l_s: acc.l_s / k,
            total: acc.total / k,
        };
        debug!("epoch {epoch}: {parts:?}");
        trace.push(EpochLoss { epoch, parts });
    }
    if let Some(last) = trace.last() {
        info!(
            "trained {} epochs, final loss {:.5}",
            cfg.epochs, last.parts.total
        );
    }
    Ok(TrainOutcome {
        model,
        trace,
        holdout,
    })
}

/// Held-out surrogate error with both single-half ablations and the
/// constant-mean baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurrogateMetrics {
    pub mse: f64,
    pub mse_no_query: f64,
    pub mse_no_model: f64,
    /// Error of always predicting the mean training accuracy.
    pub baseline_mse: f64,
    pub samples: usize,
}

/// Evaluate on the entries whose network is in `held_out`; the remaining
/// entries define the baseline mean.
pub fn evaluate_surrogate(
    model: &TansModel,
    zoo: &ModelZoo,
    held_out: &BTreeSet<String>,
) -> Result<SurrogateMetrics> {
    let (test, train): (Vec<_>, Vec<_>) = zoo
        .entries
        .iter()
        .partition(|e| held_out.contains(&e.network_id));
    if test.is_empty() || train.is_empty() {
        return Err(Error::invalid(
            "surrogate evaluation needs both held-out and training entries",
        ));
    }
    let mut queries: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut samples = Vec::with_capacity(test.len());
    for e in &test {
        if !queries.contains_key(e.dataset_id.as_str()) {
            let q = model.encode_query(&zoo.dataset(&e.dataset_id)?.probe_set())?;
            queries.insert(&e.dataset_id, q);
        }
        let m = model.encode_network(zoo.network(&e.network_id)?)?;
        samples.push((queries[e.dataset_id.as_str()].clone(), m, e.accuracy));
    }
    let mean = train.iter().map(|e| e.accuracy).sum::<f64>() / train.len() as f64;
    let baseline_mse = test
        .iter()
        .map(|e| (e.accuracy - mean).powi(2))
        .sum::<f64>()
        / test.len() as f64;
    let p = &model.predictor;
    Ok(SurrogateMetrics {
        mse: p.mse(&samples, Ablation::None)?,
        mse_no_query: p.mse(&samples, Ablation::NoQuery)?,
        mse_no_model: p.mse(&samples, Ablation::NoModel)?,
        baseline_mse,
        samples: samples.len(),
    })
}

/// Split `order` into batches of at most `size`, folding a trailing singleton
/// into the previous batch.
fn batch_chunks(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(|c| c.to_vec()).collect();
    if out.len() > 1 && out.last().is_some_and(|c| c.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}
