//! Desk-scale model zoo generator.
//!
//! Datasets are Gaussian class clusters with per-dataset centers, separations
//! and diagonal covariances. Networks are small ReLU MLPs whose hidden layers
//! are random features seeded from `(topology, dataset)`; only the output head
//! is fitted, by closed-form ridge regression onto one-hot labels. Latency is
//! an affine function of the multiply-accumulate count, not a timing.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::zoo::{
    normalize_resources, to_f32_exact, DatasetRecord, ModelZoo, NetworkRecord, TopologyDescriptor,
    ZooEntry,
};

/// Alias: the synthetic network is stored directly as a zoo record.
pub type SynthNetwork = NetworkRecord;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_datasets: usize,
    pub classes_min: usize,
    pub classes_max: usize,
    pub instances_per_class_min: usize,
    pub instances_per_class_max: usize,
    pub feature_dim: usize,
    pub networks_per_dataset: usize,
    pub rng_seed: u64,
    /// Seconds per multiply-accumulate.
    pub latency_per_mac: f64,
    /// Fixed per-call overhead in seconds.
    pub latency_base: f64,
    /// Std-dev of each dataset's center.
    pub dataset_spread: f64,
    /// Std-dev of class offsets around the dataset center.
    pub class_separation: f64,
    pub ridge_lambda: f64,
    pub probes_per_class: usize,
    pub validation_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_datasets: 20,
            classes_min: 2,
            classes_max: 5,
            instances_per_class_min: 50,
            instances_per_class_max: 100,
            feature_dim: 16,
            networks_per_dataset: 10,
            rng_seed: DEFAULT_SEED,
            latency_per_mac: 1e-8,
            latency_base: 1e-5,
            dataset_spread: 0.3,
            class_separation: 1.0,
            ridge_lambda: 1e-1,
            probes_per_class: 10,
            validation_fraction: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_datasets", self.n_datasets),
            ("classes_min", self.classes_min),
            ("instances_per_class_min", self.instances_per_class_min),
            ("networks_per_dataset", self.networks_per_dataset),
            ("probes_per_class", self.probes_per_class),
        ];
        if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{k} must be >= 1")));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim must be >= 2"));
        }
        if self.classes_min < 2 || self.classes_max < self.classes_min {
            return Err(Error::invalid("need 2 <= classes_min <= classes_max"));
        }
        if self.instances_per_class_max < self.instances_per_class_min {
            return Err(Error::invalid("instances_per_class_max < min"));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::invalid("validation_fraction must be in (0, 1)"));
        }
        if !(self.latency_per_mac > 0.0) || self.latency_base < 0.0 {
            return Err(Error::invalid("latency coefficients must be positive"));
        }
        Ok(())
    }

    pub fn dataset_id(&self, k: usize) -> String {
        format!("d{k:0w$}", w = id_width(self.n_datasets))
    }

    pub fn network_id(&self, k: usize, j: usize) -> String {
        format!(
            "{}-m{j:0w$}",
            self.dataset_id(k),
            w = id_width(self.networks_per_dataset)
        )
    }
}

fn id_width(n: usize) -> usize {
    let mut w = 1;
    let mut m = n.saturating_sub(1);
    while m >= 10 {
        w += 1;
        m /= 10;
    }
    w.max(2)
}

fn normal(rng: &mut seed::Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Generate dataset `k`. Pure function of `(cfg, k)`.
pub fn gen_dataset(cfg: &SynthConfig, k: usize) -> DatasetRecord {
    let mut rng = seed::rng(cfg.rng_seed, "dataset", &[k as u64]);
    let f = cfg.feature_dim;
    let classes = rng.random_range(cfg.classes_min..=cfg.classes_max);
    let center: Vec<f64> = (0..f)
        .map(|_| cfg.dataset_spread * normal(&mut rng))
        .collect();
    let sep = cfg.class_separation * rng.random_range(0.5..1.5);
    let scales: Vec<f64> = (0..f).map(|_| rng.random_range(0.5..1.5)).collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut probe = Vec::new();
    for c in 0..classes {
        let mean: Vec<f64> = center.iter().map(|m| m + sep * normal(&mut rng)).collect();
        let n = rng.random_range(cfg.instances_per_class_min..=cfg.instances_per_class_max);
        let start = features.len();
        for _ in 0..n {
            let x = (0..f)
                .map(|j| to_f32_exact(mean[j] + scales[j] * normal(&mut rng)))
                .collect();
            features.push(x);
            labels.push(c);
        }
        let mut idx: Vec<usize> = (start..start + n).collect();
        idx.shuffle(&mut rng);
        let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
        let (val, tr) = idx.split_at(n_val);
        probe.extend(val.iter().take(cfg.probes_per_class).copied());
        validation.extend_from_slice(val);
        train.extend_from_slice(tr);
    }
    train.sort_unstable();
    validation.sort_unstable();
    DatasetRecord {
        id: cfg.dataset_id(k),
        class_count: classes,
        feature_dim: f,
        features,
        labels,
        train,
        validation,
        probe,
    }
}

/// Hidden widths implied by a descriptor.
///
/// The layer count is `max(1, (sum(depths) - 5) / 4)`; hidden layer `j` takes
/// its width `4 * kernel + 2 * expansion` from an evenly spaced active slot.
pub fn hidden_widths(topology: &TopologyDescriptor) -> Vec<usize> {
    let layers = (topology.total_depth().saturating_sub(5) / 4).max(1);
    let active = topology.active_slots();
    (0..layers)
        .map(|j| {
            let s = active[j * active.len() / layers];
            4 * topology.kernels()[s] as usize + 2 * topology.expansions()[s] as usize
        })
        .collect()
}

pub fn count_params(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum()
}

pub fn count_macs(widths: &[usize]) -> u64 {
    widths.windows(2).map(|w| (w[0] * w[1]) as u64).sum()
}

/// Simulated per-forward latency: `latency_per_mac * macs + latency_base`.
pub fn measure_latency(net: &NetworkRecord, cfg: &SynthConfig) -> f64 {
    cfg.latency_per_mac * net.macs as f64 + cfg.latency_base
}

/// Seed for a network's random layers, keyed by descriptor and dataset.
pub fn network_seed(cfg_seed: u64, topology: &TopologyDescriptor, dataset_id: &str) -> u64 {
    let parts: Vec<u64> = topology.flatten().iter().map(|&v| v as u64).collect();
    let base = seed::derive(cfg_seed, "network", &parts);
    seed::derive_str(base, "dataset", dataset_id)
}

/// Random initialization for every layer: He-scaled weights, small biases.
fn init_parameters(widths: &[usize], init_seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(init_seed, "init", &[]);
    let mut out = Vec::with_capacity(count_params(widths) as usize);
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        out.extend((0..fan_in * fan_out).map(|_| to_f32_exact(std * normal(&mut rng))));
        out.extend((0..fan_out).map(|_| to_f32_exact(0.1 * normal(&mut rng))));
    }
    out
}

impl NetworkRecord {
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }

    /// Activations after every hidden layer except the output: returns the last
    /// hidden representation (or the input when there are no hidden layers).
    pub fn hidden(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut off = 0;
        let n_layers = self.widths.len() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let (i, o) = (w[0], w[1]);
            if l + 1 == n_layers {
                break;
            }
            h = affine(&self.parameters[off..off + i * o + o], &h, i, o);
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            off += i * o + o;
        }
        h
    }

    /// Output logits for one input vector.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden(x);
        let (i, o) = (self.widths[self.widths.len() - 2], self.output_dim());
        let off = self.parameters.len() - (i * o + o);
        affine(&self.parameters[off..], &h, i, o)
    }

    /// Same hidden layers, output head replaced by its unfitted random
    /// initialization. Used when a network must be embedded without reference
    /// to the dataset it was fitted on.
    pub fn generic(&self) -> NetworkRecord {
        let init = init_parameters(&self.widths, self.init_seed);
        let (i, o) = (self.widths[self.widths.len() - 2], self.output_dim());
        let head = i * o + o;
        let mut p = self.parameters.clone();
        let n = p.len();
        p[n - head..].copy_from_slice(&init[n - head..]);
        NetworkRecord {
            parameters: p,
            ..self.clone()
        }
    }
}

fn affine(p: &[f64], x: &[f64], i: usize, o: usize) -> Vec<f64> {
    let mut y = p[i * o..i * o + o].to_vec();
    for (k, &xk) in x.iter().enumerate().take(i) {
        let row = &p[k * o..(k + 1) * o];
        for (yj, wj) in y.iter_mut().zip(row) {
            *yj += xk * wj;
        }
    }
    y
}

/// Build and fit a network for `dataset`.
pub fn pretrain_network(
    id: &str,
    topology: &TopologyDescriptor,
    dataset: &DatasetRecord,
    cfg: &SynthConfig,
) -> Result<SynthNetwork> {
    let mut widths = vec![dataset.feature_dim];
    widths.extend(hidden_widths(topology));
    widths.push(dataset.class_count);
    let init_seed = network_seed(cfg.rng_seed, topology, &dataset.id);
    let mut net = NetworkRecord {
        id: id.to_string(),
        source_dataset_id: dataset.id.clone(),
        topology: topology.clone(),
        param_count: count_params(&widths),
        macs: count_macs(&widths),
        parameters: init_parameters(&widths, init_seed),
        widths,
        latency: 0.0,
        init_seed,
    };
    net.latency = measure_latency(&net, cfg);
    fit_head(&mut net, dataset, cfg.ridge_lambda)?;
    Ok(net)
}

/// Closed-form ridge fit of the output layer onto one-hot training labels.
pub fn fit_head(net: &mut NetworkRecord, dataset: &DatasetRecord, lambda: f64) -> Result<()> {
    let h_dim = net.widths[net.widths.len() - 2];
    let c = net.output_dim();
    let n = dataset.train.len();
    if n == 0 {
        return Err(Error::invalid(format!(
            "dataset {} has no training split",
            dataset.id
        )));
    }
    let mut h = DMatrix::<f64>::zeros(n, h_dim + 1);
    let mut y = DMatrix::<f64>::zeros(n, c);
    for (r, &i) in dataset.train.iter().enumerate() {
        let hid = net.hidden(&dataset.features[i]);
        for (j, v) in hid.iter().enumerate() {
            h[(r, j)] = *v;
        }
        h[(r, h_dim)] = 1.0;
        if dataset.labels[i] < c {
            y[(r, dataset.labels[i])] = 1.0;
        }
    }
    let hth = h.transpose() * &h;
    let hty = h.transpose() * &y;
    let solve = |lam: f64| {
        let a = &hth + DMatrix::<f64>::identity(h_dim + 1, h_dim + 1) * lam;
        a.cholesky().map(|ch| ch.solve(&hty))
    };
    let beta = match solve(lambda) {
        Some(b) if b.iter().all(|v| v.is_finite()) => b,
        _ => {
            log::warn!(
                "ridge system for {} is singular at lambda={lambda}; retrying with {}",
                net.id,
                lambda * 100.0
            );
            solve(lambda * 100.0)
                .filter(|b| b.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Divergence(format!("ridge fit failed for {}", net.id)))?
        }
    };
    let head = h_dim * c + c;
    let off = net.parameters.len() - head;
    for k in 0..h_dim {
        for j in 0..c {
            net.parameters[off + k * c + j] = to_f32_exact(beta[(k, j)]);
        }
    }
    for j in 0..c {
        net.parameters[off + h_dim * c + j] = to_f32_exact(beta[(h_dim, j)]);
    }
    Ok(())
}

/// Index of the largest logit; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of validation instances classified correctly.
pub fn evaluate_network(net: &NetworkRecord, dataset: &DatasetRecord) -> f64 {
    if dataset.validation.is_empty() {
        return 0.0;
    }
    let correct = dataset
        .validation
        .iter()
        .filter(|&&i| argmax(&net.forward(&dataset.features[i])) == dataset.labels[i])
        .count();
    correct as f64 / dataset.validation.len() as f64
}

pub fn topology_for(cfg: &SynthConfig, k: usize, j: usize) -> TopologyDescriptor {
    let mut rng = seed::rng(cfg.rng_seed, "topology", &[k as u64, j as u64]);
    TopologyDescriptor::sample(&mut rng)
}

/// Every `(dataset, network)` pair trained and evaluated, then normalized.
pub fn build_full_zoo(cfg: &SynthConfig) -> Result<ModelZoo> {
    cfg.validate()?;
    let per_dataset: Vec<Result<(DatasetRecord, Vec<(NetworkRecord, f64)>)>> = (0..cfg.n_datasets)
        .into_par_iter()
        .map(|k| {
            let ds = gen_dataset(cfg, k);
            let nets = (0..cfg.networks_per_dataset)
                .map(|j| {
                    let topo = topology_for(cfg, k, j);
                    let net = pretrain_network(&cfg.network_id(k, j), &topo, &ds, cfg)?;
                    let acc = evaluate_network(&net, &ds);
                    Ok((net, acc))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((ds, nets))
        })
        .collect();

    let mut zoo = ModelZoo::default();
    for item in per_dataset {
        let (ds, nets) = item?;
        for (net, acc) in nets {
            zoo.entries.push(ZooEntry {
                dataset_id: ds.id.clone(),
                network_id: net.id.clone(),
                accuracy: acc,
                norm_latency: 0.0,
                norm_params: 0.0,
            });
            zoo.networks.insert(net.id.clone(), net);
        }
        zoo.datasets.insert(ds.id.clone(), ds);
    }
    normalize_resources(zoo)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            n_datasets: 3,
            networks_per_dataset: 2,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_sizes_and_split() {
        let cfg = SynthConfig {
            classes_min: 2,
            classes_max: 2,
            instances_per_class_min: 50,
            instances_per_class_max: 50,
            ..Default::default()
        };
        let d = gen_dataset(&cfg, 0);
        assert_eq!(d.features.len(), 100);
        assert_eq!(d.train.len(), 80);
        assert_eq!(d.validation.len(), 20);
        assert_eq!(d.probe.len(), 20);
        d.validate().unwrap();
        assert_eq!(gen_dataset(&cfg, 0), d);
        assert_ne!(gen_dataset(&cfg, 1), d);
    }

    #[test]
    fn single_layer_param_count_and_latency_scaling() {
        assert_eq!(count_params(&[4, 2]), 10);
        let cfg = SynthConfig::default();
        let t = topology_for(&cfg, 0, 0);
        let mk = |widths: Vec<usize>| NetworkRecord {
            id: "x".into(),
            source_dataset_id: "d".into(),
            topology: t.clone(),
            param_count: count_params(&widths),
            macs: count_macs(&widths),
            parameters: vec![0.0; count_params(&widths) as usize],
            widths,
            latency: 1.0,
            init_seed: 0,
        };
        let a = measure_latency(&mk(vec![4, 8]), &cfg) - cfg.latency_base;
        let b = measure_latency(&mk(vec![4, 16]), &cfg) - cfg.latency_base;
        assert!((b - 2.0 * a).abs() < 1e-18);
    }

    #[test]
    fn param_count_matches_independent_sum() {
        let cfg = SynthConfig::default();
        let ds = gen_dataset(&cfg, 0);
        for j in 0..10 {
            let t = topology_for(&cfg, 5, j);
            let net = pretrain_network("n", &t, &ds, &cfg).unwrap();
            // oracle: walk layers explicitly
            let mut total = 0u64;
            let mut prev = ds.feature_dim as u64;
            for h in hidden_widths(&t) {
                total += prev * h as u64 + h as u64;
                prev = h as u64;
            }
            total += prev * ds.class_count as u64 + ds.class_count as u64;
            assert_eq!(net.param_count, total);
            assert_eq!(net.parameters.len() as u64, total);
        }
    }

    #[test]
    fn hidden_layers_follow_descriptor() {
        let cfg = SynthConfig::default();
        for j in 0..20 {
            let t = topology_for(&cfg, 0, j);
            let w = hidden_widths(&t);
            let expect = ((t.total_depth() - 5) / 4).max(1);
            assert_eq!(w.len(), expect);
            assert!(w.iter().all(|&x| (18..=40).contains(&x)));
        }
    }

    #[test]
    fn pretraining_is_deterministic_and_fits_separable_data() {
        let cfg = SynthConfig {
            classes_min: 2,
            classes_max: 2,
            class_separation: 6.0,
            ..Default::default()
        };
        let ds = gen_dataset(&cfg, 0);
        let t = topology_for(&cfg, 0, 0);
        let a = pretrain_network("a", &t, &ds, &cfg).unwrap();
        let b = pretrain_network("a", &t, &ds, &cfg).unwrap();
        assert_eq!(a, b);
        let train_acc = ds
            .train
            .iter()
            .filter(|&&i| argmax(&a.forward(&ds.features[i])) == ds.labels[i])
            .count() as f64
            / ds.train.len() as f64;
        assert!(train_acc > 0.9, "train accuracy {train_acc}");
    }

    #[test]
    fn constant_logits_predict_class_zero() {
        let cfg = SynthConfig::default();
        let ds = gen_dataset(&cfg, 2);
        let t = topology_for(&cfg, 2, 0);
        let mut net = pretrain_network("n", &t, &ds, &cfg).unwrap();
        net.parameters.iter_mut().for_each(|p| *p = 0.0);
        let freq0 = ds.validation.iter().filter(|&&i| ds.labels[i] == 0).count() as f64
            / ds.validation.len() as f64;
        assert_eq!(evaluate_network(&net, &ds), freq0);
    }

    #[test]
    fn evaluation_matches_loop_oracle() {
        let cfg = SynthConfig::default();
        let ds = gen_dataset(&cfg, 3);
        for j in 0..5 {
            let t = topology_for(&cfg, 3, j);
            let net = pretrain_network("n", &t, &ds, &cfg).unwrap();
            // independent forward: layer by layer with explicit index math
            let mut correct = 0;
            for &i in &ds.validation {
                let mut act = ds.features[i].clone();
                let mut off = 0;
                let layers = net.widths.len() - 1;
                for l in 0..layers {
                    let (fi, fo) = (net.widths[l], net.widths[l + 1]);
                    let mut next = vec![0.0; fo];
                    for o in 0..fo {
                        let mut s = net.parameters[off + fi * fo + o];
                        for k in 0..fi {
                            s += act[k] * net.parameters[off + k * fo + o];
                        }
                        next[o] = if l + 1 < layers { s.max(0.0) } else { s };
                    }
                    off += fi * fo + fo;
                    act = next;
                }
                let mut best = 0;
                for c in 1..act.len() {
                    if act[c] > act[best] {
                        best = c;
                    }
                }
                if best == ds.labels[i] {
                    correct += 1;
                }
            }
            let oracle = correct as f64 / ds.validation.len() as f64;
            assert_eq!(evaluate_network(&net, &ds), oracle);
        }
    }

    fn chance_band(acc: f64, classes: usize, n: usize) -> bool {
        let p = 1.0 / classes as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        (acc - p).abs() <= 3.0 * sigma
    }

    #[test]
    fn zero_separation_gives_chance_accuracy() {
        let cfg = SynthConfig {
            class_separation: 0.0,
            classes_min: 3,
            classes_max: 3,
            instances_per_class_min: 400,
            instances_per_class_max: 400,
            ..Default::default()
        };
        let ds = gen_dataset(&cfg, 0);
        let t = topology_for(&cfg, 0, 0);
        let net = pretrain_network("n", &t, &ds, &cfg).unwrap();
        let acc = evaluate_network(&net, &ds);
        assert!(chance_band(acc, 3, ds.validation.len()), "acc {acc}");
    }

    #[test]
    fn shuffled_labels_give_chance_accuracy() {
        let cfg = SynthConfig {
            classes_min: 2,
            classes_max: 2,
            instances_per_class_min: 500,
            instances_per_class_max: 500,
            ..Default::default()
        };
        let mut ds = gen_dataset(&cfg, 1);
        let mut rng = seed::rng(0, "shuffle", &[]);
        ds.labels.shuffle(&mut rng);
        let t = topology_for(&cfg, 1, 0);
        let net = pretrain_network("n", &t, &ds, &cfg).unwrap();
        let acc = evaluate_network(&net, &ds);
        assert!(chance_band(acc, 2, ds.validation.len()), "acc {acc}");
    }

    #[test]
    fn full_zoo_shape_and_determinism() {
        let cfg = small_cfg();
        let z = build_full_zoo(&cfg).unwrap();
        assert_eq!(z.entries.len(), 6);
        assert!(z.entries.iter().all(|e| (0.0..=1.0).contains(&e.accuracy)));
        z.validate().unwrap();
        assert_eq!(build_full_zoo(&cfg).unwrap(), z);
    }

    #[test]
    fn generic_network_keeps_hidden_layers() {
        let cfg = small_cfg();
        let z = build_full_zoo(&cfg).unwrap();
        let net = z.networks.values().next().unwrap();
        let g = net.generic();
        let x = vec![0.3; net.input_dim()];
        assert_eq!(net.hidden(&x), g.hidden(&x));
        assert_ne!(net.forward(&x), g.forward(&x));
    }

    #[test]
    fn networks_score_best_on_their_own_dataset() {
        // sign test over 20 (dataset, foreign dataset) pairs
        let cfg = SynthConfig {
            n_datasets: 10,
            networks_per_dataset: 2,
            ..Default::default()
        };
        let z = build_full_zoo(&cfg).unwrap();
        let ids = z.dataset_ids();
        let mut wins = 0;
        let mut trials = 0;
        for (a, da) in ids.iter().enumerate() {
            for off in [1, 2] {
                let db = &ids[(a + off) % ids.len()];
                let own: Vec<&NetworkRecord> = z
                    .networks
                    .values()
                    .filter(|n| &n.source_dataset_id == da)
                    .collect();
                let foreign: Vec<&NetworkRecord> = z
                    .networks
                    .values()
                    .filter(|n| &n.source_dataset_id == db)
                    .collect();
                let ds = &z.datasets[da];
                let mean = |v: &[&NetworkRecord]| {
                    v.iter().map(|n| evaluate_network(n, ds)).sum::<f64>() / v.len() as f64
                };
                trials += 1;
                if mean(&own) > mean(&foreign) {
                    wins += 1;
                }
            }
        }
        // one-sided sign test: P(X >= 15 | n=20, p=0.5) ~ 0.021
        assert_eq!(trials, 20);
        assert!(wins >= 15, "wins {wins}/20");
    }
}
