//! Greedy model-zoo construction by expected hypervolume improvement.
//!
//! Each (dataset, network) pair is a point in normalized
//! (accuracy, latency, parameters) space. A dataset's score `g_D` is the
//! hypervolume dominated by its evaluated points; construction repeatedly
//! adds the unevaluated pair whose sampled accuracy is expected to grow
//! that volume the most.

use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{meta_train, Objective, TansModel, TrainConfig};
use crate::error::{Error, Result};
use crate::seed;
use crate::synth::evaluate_network;
use crate::zoo::{ModelZoo, ZooEntry};

/// A point with every coordinate maximized, inside the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParetoPoint(pub [f64; 3]);

impl ParetoPoint {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        let p = [a, b, c];
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "pareto point {p:?} outside the unit cube"
            )));
        }
        Ok(Self(p))
    }
}

/// How normalized latency and parameter counts enter the objective space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HvOrientation {
    /// `1 - x`, so cheaper models score higher.
    #[default]
    InvX,
    /// Normalized values used as they are.
    Raw,
}

impl HvOrientation {
    pub fn point(self, accuracy: f64, norm_latency: f64, norm_params: f64) -> Result<ParetoPoint> {
        match self {
            HvOrientation::InvX => {
                ParetoPoint::new(accuracy, 1.0 - norm_latency, 1.0 - norm_params)
            }
            HvOrientation::Raw => ParetoPoint::new(accuracy, norm_latency, norm_params),
        }
    }

    pub fn entry_point(self, e: &ZooEntry) -> Result<ParetoPoint> {
        self.point(e.accuracy, e.norm_latency, e.norm_params)
    }
}

/// Area of the union of `[0, x] x [0, y]` rectangles.
fn area_2d(pts: &mut [(f64, f64)]) -> f64 {
    pts.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut y_max = 0.0;
    for &(x, y) in pts.iter() {
        if y > y_max {
            area += x * (y - y_max);
            y_max = y;
        }
    }
    area
}

/// Non-dominated points in canonical order: `z`, then `x`, then `y`, all
/// descending. Dominated and repeated points are dropped, so they cannot
/// perturb the sweep's rounding.
fn pareto_front(points: &[ParetoPoint]) -> Vec<[f64; 3]> {
    let mut pts: Vec<[f64; 3]> = points.iter().map(|p| p.0).collect();
    pts.sort_by(|a, b| {
        b[2].total_cmp(&a[2])
            .then(b[0].total_cmp(&a[0]))
            .then(b[1].total_cmp(&a[1]))
    });
    pts.dedup();
    let mut front: Vec<[f64; 3]> = Vec::with_capacity(pts.len());
    for p in pts {
        if !front
            .iter()
            .any(|q| q[0] >= p[0] && q[1] >= p[1] && q[2] >= p[2])
        {
            front.push(p);
        }
    }
    front
}

/// Volume of the union of boxes `[0, p]`, reference point at the origin.
/// Sweeps the third coordinate in descending slabs and measures each slab's
/// 2-D cross-section.
pub fn hypervolume(points: &[ParetoPoint]) -> f64 {
    let pts = pareto_front(points);
    let mut volume = 0.0;
    let mut i = 0;
    let mut section: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    while i < pts.len() {
        let z = pts[i][2];
        while i < pts.len() && pts[i][2] == z {
            section.push((pts[i][0], pts[i][1]));
            i += 1;
        }
        let next = pts.get(i).map_or(0.0, |p| p[2]);
        if z > next {
            volume += area_2d(&mut section) * (z - next);
        }
    }
    volume
}

/// Hypervolume of one dataset's entries.
pub fn g_d(entries: &[ZooEntry], dataset_id: &str, orientation: HvOrientation) -> Result<f64> {
    let pts = entries
        .iter()
        .filter(|e| e.dataset_id == dataset_id)
        .map(|e| orientation.entry_point(e))
        .collect::<Result<Vec<_>>>()?;
    Ok(hypervolume(&pts))
}

/// `sum_D g_D` over every dataset present in `entries`.
pub fn total_hypervolume(entries: &[ZooEntry], orientation: HvOrientation) -> Result<f64> {
    let ids: BTreeSet<&str> = entries.iter().map(|e| e.dataset_id.as_str()).collect();
    ids.into_iter().map(|d| g_d(entries, d, orientation)).sum()
}

/// Mean hypervolume gain over accuracy samples for a candidate with fixed
/// resource coordinates.
pub fn expected_gain(
    current: &[ParetoPoint],
    norm_latency: f64,
    norm_params: f64,
    samples: &[f64],
    orientation: HvOrientation,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("no accuracy samples"));
    }
    let base = hypervolume(current);
    let mut with: Vec<ParetoPoint> = current.to_vec();
    with.push(orientation.point(0.0, norm_latency, norm_params)?);
    let last = with.len() - 1;
    let mut total = 0.0;
    for &s in samples {
        with[last] = orientation.point(s.clamp(0.0, 1.0), norm_latency, norm_params)?;
        total += (hypervolume(&with) - base).max(0.0);
    }
    Ok(total / samples.len() as f64)
}

/// Source of accuracy samples for unevaluated pairs.
pub trait AccuracySampler: Sync {
    fn samples(&self, pair: &ZooEntry, n: usize, mc_seed: u64) -> Result<Vec<f64>>;
}

/// Seed for sample `i` of `pair`.
pub fn mc_sample_seed(mc_seed: u64, pair_id: &str, i: usize) -> u64 {
    seed::derive(
        seed::derive_str(mc_seed, "mc", pair_id),
        "sample",
        &[i as u64],
    )
}

/// Expected improvement of `sum_D g_D` from adding `pair`.
pub fn f_zoo(
    pair: &ZooEntry,
    state: &[ZooEntry],
    sampler: &dyn AccuracySampler,
    n_samples: usize,
    mc_seed: u64,
    orientation: HvOrientation,
) -> Result<f64> {
    let current = state
        .iter()
        .filter(|e| e.dataset_id == pair.dataset_id)
        .map(|e| orientation.entry_point(e))
        .collect::<Result<Vec<_>>>()?;
    let samples = sampler.samples(pair, n_samples, mc_seed)?;
    expected_gain(
        &current,
        pair.norm_latency,
        pair.norm_params,
        &samples,
        orientation,
    )
}

/// MC-dropout samples from a trained surrogate. Hidden activations are
/// cached per pair; only the dropout head is re-evaluated per sample.
pub struct SurrogateSampler {
    model: TansModel,
    hidden: BTreeMap<String, Vec<f64>>,
}

impl SurrogateSampler {
    pub fn new(model: TansModel, universe: &ModelZoo) -> Result<Self> {
        let queries: BTreeMap<&str, Vec<f64>> = universe
            .datasets
            .values()
            .map(|d| Ok((d.id.as_str(), model.encode_query(&d.probe_set())?)))
            .collect::<Result<_>>()?;
        let hidden = universe
            .entries
            .par_iter()
            .map(|e| {
                let m = model.encode_network(universe.network(&e.network_id)?)?;
                let q = &queries[e.dataset_id.as_str()];
                Ok((e.pair_id(), model.predictor.hidden_units(q, &m)?))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { model, hidden })
    }
}

impl AccuracySampler for SurrogateSampler {
    fn samples(&self, pair: &ZooEntry, n: usize, mc_seed: u64) -> Result<Vec<f64>> {
        let id = pair.pair_id();
        let h = self
            .hidden
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("pair {id} unknown to the sampler")))?;
        let seeds: Vec<u64> = (0..n).map(|i| mc_sample_seed(mc_seed, &id, i)).collect();
        Ok(self.model.predictor.dropout_samples(h, &seeds))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Greedy,
    Random,
    LargestParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuilderConfig {
    /// Seed pairs; `None` means `max(n_datasets, ceil(0.05 * n_pairs))`.
    pub n_init: Option<usize>,
    pub retrain_every: usize,
    pub mc_samples: usize,
    /// Candidates scored per step; `None` scores every remaining pair.
    pub candidate_pool_size: Option<usize>,
    /// Total evaluated pairs, seeds included; `None` means half the universe.
    pub budget: Option<usize>,
    pub rng_seed: u64,
    pub strategy: Strategy,
    pub hv_orientation: HvOrientation,
    pub surrogate_epochs: usize,
}

impl Default for BuilderConfig {
    fn default() -> Self {
        Self {
            n_init: None,
            retrain_every: 64,
            mc_samples: 10,
            candidate_pool_size: None,
            budget: None,
            rng_seed: crate::synth::DEFAULT_SEED,
            strategy: Strategy::Greedy,
            hv_orientation: HvOrientation::InvX,
            surrogate_epochs: 100,
        }
    }
}

impl BuilderConfig {
    pub fn resolved_n_init(&self, n_datasets: usize, n_pairs: usize) -> usize {
        self.n_init
            .unwrap_or_else(|| n_datasets.max((0.05 * n_pairs as f64).ceil() as usize))
    }

    pub fn resolved_budget(&self, n_pairs: usize) -> usize {
        self.budget.unwrap_or(n_pairs / 2)
    }

    /// Surrogate training settings used during construction.
    pub fn surrogate_config(&self) -> TrainConfig {
        TrainConfig {
            objective: Objective::SurrogateOnly,
            generic_models: true,
            train_dropout: true,
            cross_pairs: false,
            holdout_fraction: 0.0,
            epochs: self.surrogate_epochs,
            rng_seed: seed::derive(self.rng_seed, "surrogate", &[]),
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    /// Pair added at this iteration; empty for the seed set.
    pub pair_id: String,
    pub total_hypervolume: f64,
}

#[derive(Debug, Clone)]
pub struct Construction {
    pub zoo: ModelZoo,
    pub trace: Vec<TracePoint>,
}

/// Stratified seed set: one random pair per dataset, then uniform draws.
fn seed_pairs(universe: &ModelZoo, n_init: usize, rng: &mut seed::Rng) -> Vec<usize> {
    let mut by_ds: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in universe.entries.iter().enumerate() {
        by_ds.entry(&e.dataset_id).or_default().push(i);
    }
    let mut chosen: Vec<usize> = by_ds
        .values()
        .take(n_init)
        .map(|v| *v.choose(rng).expect("non-empty"))
        .collect();
    let taken: BTreeSet<usize> = chosen.iter().copied().collect();
    let mut rest: Vec<usize> = (0..universe.entries.len())
        .filter(|i| !taken.contains(i))
        .collect();
    rest.shuffle(rng);
    chosen.extend(rest.into_iter().take(n_init.saturating_sub(chosen.len())));
    chosen
}

fn sub_zoo(universe: &ModelZoo, entries: Vec<ZooEntry>) -> Result<ModelZoo> {
    let mut zoo = ModelZoo {
        normalization_stats: universe.normalization_stats,
        ..ModelZoo::default()
    };
    for e in &entries {
        let ds = universe.dataset(&e.dataset_id)?;
        let net = universe.network(&e.network_id)?;
        zoo.datasets
            .entry(ds.id.clone())
            .or_insert_with(|| ds.clone());
        zoo.networks
            .entry(net.id.clone())
            .or_insert_with(|| net.clone());
    }
    zoo.entries = entries;
    Ok(zoo)
}

/// Evaluate a universe pair afresh.
fn evaluate_pair(universe: &ModelZoo, e: &ZooEntry) -> Result<ZooEntry> {
    let acc = evaluate_network(
        universe.network(&e.network_id)?,
        universe.dataset(&e.dataset_id)?,
    );
    Ok(ZooEntry {
        accuracy: acc,
        ..e.clone()
    })
}

/// Build a zoo of `budget` pairs from `universe`, whose entries list every
/// candidate pair with normalized resources.
pub fn construct_zoo(universe: &ModelZoo, cfg: &BuilderConfig) -> Result<Construction> {
    let n_pairs = universe.entries.len();
    let n_init = cfg.resolved_n_init(universe.datasets.len(), n_pairs);
    let budget = cfg.resolved_budget(n_pairs);
    if cfg.retrain_every == 0 || cfg.mc_samples == 0 || n_init == 0 {
        return Err(Error::invalid("builder settings must be positive"));
    }
    if cfg.candidate_pool_size == Some(0) {
        return Err(Error::invalid("candidate_pool_size must be positive"));
    }
    if budget > n_pairs {
        return Err(Error::invalid(format!(
            "budget {budget} exceeds the {n_pairs} available pairs"
        )));
    }
    if budget < n_init {
        return Err(Error::invalid(format!(
            "budget {budget} is smaller than the {n_init} seed pairs"
        )));
    }
    let orientation = cfg.hv_orientation;
    let mut rng = seed::rng(cfg.rng_seed, "construct", &[]);
    let seeds = seed_pairs(universe, n_init, &mut rng);
    let mut selected: Vec<ZooEntry> = seeds
        .iter()
        .map(|&i| evaluate_pair(universe, &universe.entries[i]))
        .collect::<Result<_>>()?;
    let mut remaining: BTreeMap<String, usize> = (0..n_pairs)
        .filter(|i| !seeds.contains(i))
        .map(|i| (universe.entries[i].pair_id(), i))
        .collect();
    let mut trace = vec![TracePoint {
        iteration: 0,
        pair_id: String::new(),
        total_hypervolume: total_hypervolume(&selected, orientation)?,
    }];

    let mut sampler: Option<SurrogateSampler> = None;
    let mut pick_rng = seed::rng(cfg.rng_seed, "pick", &[]);
    for t in 0..budget - n_init {
        let mut pool: Vec<&String> = remaining.keys().collect();
        if let Some(k) = cfg.candidate_pool_size {
            if k < pool.len() {
                pool = pool.choose_multiple(&mut pick_rng, k).copied().collect();
                pool.sort();
            }
        }
        let chosen: String = match cfg.strategy {
            Strategy::Random => (*pool.choose(&mut pick_rng).expect("non-empty pool")).clone(),
            Strategy::LargestParam => pool
                .iter()
                .max_by(|a, b| {
                    let pa = universe.network(&universe.entries[remaining[**a]].network_id);
                    let pb = universe.network(&universe.entries[remaining[**b]].network_id);
                    let (pa, pb) = (
                        pa.map_or(0, |n| n.param_count),
                        pb.map_or(0, |n| n.param_count),
                    );
                    pa.cmp(&pb).then(b.cmp(a))
                })
                .map(|s| (*s).clone())
                .expect("non-empty pool"),
            Strategy::Greedy => {
                if t % cfg.retrain_every == 0 {
                    let current = sub_zoo(universe, selected.clone())?;
                    let trained = meta_train(&current, &cfg.surrogate_config())?;
                    sampler = Some(SurrogateSampler::new(trained.model, universe)?);
                    debug!("surrogate retrained at step {t}");
                }
                let s = sampler.as_ref().expect("trained above");
                let mc_seed = seed::derive(cfg.rng_seed, "mc", &[t as u64]);
                let scores = pool
                    .par_iter()
                    .map(|id| {
                        let e = &universe.entries[remaining[*id]];
                        f_zoo(e, &selected, s, cfg.mc_samples, mc_seed, orientation)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let best = scores
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, &v)| if v > scores[b] { i } else { b });
                pool[best].clone()
            }
        };
        let idx = remaining.remove(&chosen).expect("chosen from remaining");
        selected.push(evaluate_pair(universe, &universe.entries[idx])?);
        trace.push(TracePoint {
            iteration: t + 1,
            pair_id: chosen,
            total_hypervolume: total_hypervolume(&selected, orientation)?,
        });
    }
    info!(
        "constructed {} pairs, total hypervolume {:.5}",
        selected.len(),
        trace.last().map_or(0.0, |p| p.total_hypervolume)
    );
    Ok(Construction {
        zoo: sub_zoo(universe, selected)?,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_full_zoo, SynthConfig};
    use rand::Rng;

    fn p(a: f64, b: f64, c: f64) -> ParetoPoint {
        ParetoPoint::new(a, b, c).unwrap()
    }

    #[test]
    fn hypervolume_examples() {
        assert_eq!(hypervolume(&[]), 0.0);
        assert!((hypervolume(&[p(0.5, 0.5, 0.5)]) - 0.125).abs() < 1e-15);
        assert_eq!(
            hypervolume(&[p(1.0, 1.0, 1.0), p(0.3, 0.9, 0.2), p(0.5, 0.5, 0.5)]),
            1.0
        );
        // inclusion-exclusion for two boxes
        let v = hypervolume(&[p(0.8, 0.2, 0.5), p(0.3, 0.9, 0.6)]);
        let expect = 0.8 * 0.2 * 0.5 + 0.3 * 0.9 * 0.6 - 0.3 * 0.2 * 0.5;
        assert!((v - expect).abs() < 1e-15);
        assert!(ParetoPoint::new(1.1, 0.0, 0.0).is_err());
        assert!(ParetoPoint::new(0.5, -0.1, 0.0).is_err());
    }

    fn brute_force(points: &[ParetoPoint]) -> f64 {
        // exact union volume on the grid induced by the coordinates
        let mut axes: Vec<Vec<f64>> = (0..3)
            .map(|k| {
                let mut v: Vec<f64> = points.iter().map(|p| p.0[k]).collect();
                v.push(0.0);
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let (xs, ys, zs) = (axes.remove(0), axes.remove(0), axes.remove(0));
        let mut vol = 0.0;
        for i in 1..xs.len() {
            for j in 1..ys.len() {
                for k in 1..zs.len() {
                    let covered = points
                        .iter()
                        .any(|p| p.0[0] >= xs[i] && p.0[1] >= ys[j] && p.0[2] >= zs[k]);
                    if covered {
                        vol += (xs[i] - xs[i - 1]) * (ys[j] - ys[j - 1]) * (zs[k] - zs[k - 1]);
                    }
                }
            }
        }
        vol
    }

    #[test]
    fn matches_grid_oracle() {
        let mut rng = seed::rng(2, "hv", &[]);
        for _ in 0..100 {
            let n = rng.random_range(1..12);
            let pts: Vec<ParetoPoint> = (0..n)
                .map(|_| p(rng.random(), rng.random(), rng.random()))
                .collect();
            assert!((hypervolume(&pts) - brute_force(&pts)).abs() < 1e-12);
        }
    }

    fn entry(ds: &str, net: &str, a: f64, l: f64, q: f64) -> ZooEntry {
        ZooEntry {
            dataset_id: ds.into(),
            network_id: net.into(),
            accuracy: a,
            norm_latency: l,
            norm_params: q,
        }
    }

    #[test]
    fn g_d_properties() {
        let o = HvOrientation::InvX;
        let mut es = vec![entry("a", "n1", 0.8, 0.2, 0.3)];
        assert_eq!(g_d(&es, "b", o).unwrap(), 0.0);
        let base = g_d(&es, "a", o).unwrap();
        assert!((base - 0.8 * 0.8 * 0.7).abs() < 1e-15);
        es.push(entry("a", "n2", 0.5, 0.5, 0.5));
        assert_eq!(g_d(&es, "a", o).unwrap(), base);
        es.push(entry("a", "n3", 0.9, 0.9, 0.1));
        assert!(g_d(&es, "a", o).unwrap() >= base);
        let raw = g_d(&es, "a", HvOrientation::Raw).unwrap();
        assert!(raw > 0.0);
    }

    struct Fixed(f64);

    impl AccuracySampler for Fixed {
        fn samples(&self, _pair: &ZooEntry, n: usize, _s: u64) -> Result<Vec<f64>> {
            Ok(vec![self.0; n])
        }
    }

    #[test]
    fn f_zoo_properties() {
        let o = HvOrientation::InvX;
        let state = vec![entry("a", "n1", 0.9, 0.1, 0.1)];
        let dominated = entry("a", "n2", 0.0, 0.5, 0.5);
        assert_eq!(
            f_zoo(&dominated, &state, &Fixed(0.8), 10, 1, o).unwrap(),
            0.0
        );
        let cand = entry("a", "n3", 0.0, 0.0, 0.0);
        let truth = {
            let mut s = state.clone();
            s.push(entry("a", "n3", 0.7, 0.0, 0.0));
            g_d(&s, "a", o).unwrap() - g_d(&state, "a", o).unwrap()
        };
        let got = f_zoo(&cand, &state, &Fixed(0.7), 1, 1, o).unwrap();
        assert!((got - truth).abs() < 1e-15);
        let mut last = 0.0;
        for a in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let v = f_zoo(&cand, &state, &Fixed(a), 3, 1, o).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    fn universe() -> ModelZoo {
        build_full_zoo(&SynthConfig {
            n_datasets: 4,
            networks_per_dataset: 4,
            instances_per_class_min: 20,
            instances_per_class_max: 25,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn budget_equal_to_seed_set() {
        let u = universe();
        let cfg = BuilderConfig {
            n_init: Some(5),
            budget: Some(5),
            ..Default::default()
        };
        let c = construct_zoo(&u, &cfg).unwrap();
        assert_eq!(c.zoo.len(), 5);
        assert_eq!(c.trace.len(), 1);
        let ds: BTreeSet<_> = c.zoo.entries.iter().map(|e| &e.dataset_id).collect();
        assert_eq!(ds.len(), 4);
        assert!(construct_zoo(
            &u,
            &BuilderConfig {
                budget: Some(17),
                ..Default::default()
            }
        )
        .is_err());
    }

    #[test]
    fn greedy_trace_monotone_and_deterministic() {
        let u = universe();
        let cfg = BuilderConfig {
            budget: Some(10),
            retrain_every: 3,
            surrogate_epochs: 3,
            ..Default::default()
        };
        let a = construct_zoo(&u, &cfg).unwrap();
        assert_eq!(a.zoo.len(), 10);
        assert!(a
            .trace
            .windows(2)
            .all(|w| w[1].total_hypervolume >= w[0].total_hypervolume));
        let b = construct_zoo(&u, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        for s in [Strategy::Random, Strategy::LargestParam] {
            let c = construct_zoo(
                &u,
                &BuilderConfig {
                    strategy: s,
                    ..cfg.clone()
                },
            )
            .unwrap();
            assert_eq!(c.zoo.len(), 10);
            let ids: BTreeSet<_> = c.zoo.entries.iter().map(ZooEntry::pair_id).collect();
            assert_eq!(ids.len(), 10);
        }
    }
}
