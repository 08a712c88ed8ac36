//! Precomputed model embeddings, query-time ranking with constraint filters
//! and surrogate rerank, evaluation metrics and baseline rankers.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::{TansModel, TrainConfig};
use crate::diffmath::{cosine, Tensor};
use crate::error::{Error, Result};
use crate::predictor::{rerank_topk, PredictMode};
use crate::seed;
use crate::synth::evaluate_network;
use crate::zoo::{to_f32_exact, Constraints, DatasetRecord, ModelZoo};

pub const INDEX_MAGIC: &[u8; 4] = b"TANS";
pub const INDEX_VERSION: u32 = 1;
pub const RERANK_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResources {
    pub params: u64,
    pub flops: u64,
    pub latency: f64,
    pub source_dataset_id: String,
}

#[derive(Debug)]
pub struct EmbeddingIndex {
    pub model_ids: Vec<String>,
    /// Unit rows, f32-representable.
    pub embeddings: Vec<Vec<f64>>,
    pub resources: Vec<ModelResources>,
    pub model: TansModel,
    pub fingerprint: [u8; 32],
    query_passes: AtomicU64,
}

impl Clone for EmbeddingIndex {
    fn clone(&self) -> Self {
        Self {
            model_ids: self.model_ids.clone(),
            embeddings: self.embeddings.clone(),
            resources: self.resources.clone(),
            model: self.model.clone(),
            fingerprint: self.fingerprint,
            query_passes: AtomicU64::new(self.query_passes()),
        }
    }
}

impl PartialEq for EmbeddingIndex {
    fn eq(&self, o: &Self) -> bool {
        self.model_ids == o.model_ids
            && self.embeddings == o.embeddings
            && self.resources == o.resources
            && self.model == o.model
            && self.fingerprint == o.fingerprint
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub model_id: String,
    pub similarity: f64,
    pub predicted_accuracy: Option<f64>,
    pub meets_constraints: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub candidates: Vec<Candidate>,
    /// Set when no indexed model satisfies the constraints.
    pub no_feasible_model: bool,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.model_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.model_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings
            .first()
            .map_or(self.model.config.embed_dim, Vec::len)
    }

    /// Number of query-encoder forward passes made through this index.
    pub fn query_passes(&self) -> u64 {
        self.query_passes.load(Ordering::Relaxed)
    }

    pub fn position(&self, model_id: &str) -> Option<usize> {
        self.model_ids
            .binary_search_by(|m| m.as_str().cmp(model_id))
            .ok()
    }

    pub fn encode_query(&self, probe: &[Vec<f64>]) -> Result<Vec<f64>> {
        let q = self.model.encode_query(probe)?;
        self.query_passes.fetch_add(1, Ordering::Relaxed);
        Ok(q)
    }

    /// Cosine scores against every row, in index order.
    pub fn scores(&self, q: &[f64]) -> Vec<f64> {
        self.embeddings.par_iter().map(|m| cosine(q, m)).collect()
    }

    pub fn retrieve(
        &self,
        probe: &[Vec<f64>],
        k: usize,
        constraints: &Constraints,
        rerank: bool,
    ) -> Result<RetrievalResult> {
        if k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let q = self.encode_query(probe)?;
        self.retrieve_encoded(&q, k, constraints, rerank)
    }

    /// As [`retrieve`](Self::retrieve) with a precomputed query embedding.
    pub fn retrieve_encoded(
        &self,
        q: &[f64],
        k: usize,
        constraints: &Constraints,
        rerank: bool,
    ) -> Result<RetrievalResult> {
        if k < 1 {
            return Err(Error::invalid("k must be at least 1"));
        }
        constraints.validate()?;
        let scores = self.scores(q);
        let mut order: Vec<usize> = (0..self.len())
            .filter(|&i| {
                let r = &self.resources[i];
                constraints.admits(r.params, r.flops, r.latency)
            })
            .collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        order.truncate(k);
        let mut candidates: Vec<Candidate> = order
            .iter()
            .map(|&i| Candidate {
                model_id: self.model_ids[i].clone(),
                similarity: scores[i],
                predicted_accuracy: None,
                meets_constraints: true,
            })
            .collect();
        if rerank && !candidates.is_empty() {
            let kk = k.min(RERANK_K).min(candidates.len());
            let qs = vec![q.to_vec(); kk];
            let ms: Vec<Vec<f64>> = order[..kk]
                .iter()
                .map(|&i| self.embeddings[i].clone())
                .collect();
            let preds = self
                .model
                .predictor
                .predict_batch(&qs, &ms, PredictMode::Deterministic)?;
            for (c, p) in candidates.iter_mut().zip(preds) {
                c.predicted_accuracy = Some(p);
            }
            rerank_topk(&mut candidates, kk, |c| c.predicted_accuracy.unwrap_or(0.0))?;
        }
        Ok(RetrievalResult {
            no_feasible_model: candidates.is_empty(),
            candidates,
        })
    }

    pub fn predict(&self, probe: &[Vec<f64>], model_id: &str) -> Result<f64> {
        let i = self.position(model_id).ok_or(Error::DanglingReference {
            kind: "network",
            id: model_id.to_string(),
        })?;
        let q = self.encode_query(probe)?;
        self.model
            .predictor
            .predict(&q, &self.embeddings[i], PredictMode::Deterministic)
    }
}

/// Embed every network of `zoo`, rows ordered by network id.
pub fn build_index(zoo: &ModelZoo, model: &TansModel) -> Result<EmbeddingIndex> {
    let nets: Vec<_> = zoo.networks.values().collect();
    let embeddings = nets
        .par_iter()
        .map(|n| {
            let e = model.encode_network(n)?;
            Ok(e.into_iter().map(to_f32_exact).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let resources = nets
        .iter()
        .map(|n| ModelResources {
            params: n.param_count,
            flops: n.macs,
            latency: n.latency,
            source_dataset_id: n.source_dataset_id.clone(),
        })
        .collect();
    Ok(EmbeddingIndex {
        model_ids: nets.iter().map(|n| n.id.clone()).collect(),
        embeddings,
        resources,
        fingerprint: model.config.fingerprint(),
        model: model.clone(),
        query_passes: AtomicU64::new(0),
    })
}

#[derive(Serialize, Deserialize)]
struct IndexMeta {
    config: TrainConfig,
    feature_dim: usize,
    nonlinearity: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend(b);
    }
    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.rows() as u32);
        self.u32(t.cols() as u32);
        for &v in t.data() {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::IndexFormat(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|e| Error::IndexFormat(format!("invalid utf-8: {e}")))
    }
    fn tensor(&mut self) -> Result<Tensor> {
        let r = self.u32()? as usize;
        let c = self.u32()? as usize;
        let data = (0..r * c).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(vec![r, c], data).map_err(|e| Error::IndexFormat(e.to_string()))
    }
}

pub fn index_to_bytes(index: &EmbeddingIndex) -> Vec<u8> {
    let cfg = &index.model.config;
    let mut w = Writer(Vec::new());
    w.0.extend(INDEX_MAGIC);
    w.u32(INDEX_VERSION);
    w.u32(index.len() as u32);
    w.u32(index.dim() as u32);
    w.u64(cfg.noise_seed);
    w.u64(cfg.rng_seed);
    w.0.extend(index.fingerprint);
    let meta = IndexMeta {
        config: cfg.clone(),
        feature_dim: index.model.feature_dim,
        nonlinearity: "relu".into(),
    };
    w.bytes(&serde_json::to_vec(&meta).expect("meta serializes"));
    for id in &index.model_ids {
        w.bytes(id.as_bytes());
    }
    for r in &index.resources {
        w.u64(r.params);
        w.u64(r.flops);
        w.f64(r.latency);
        w.bytes(r.source_dataset_id.as_bytes());
    }
    for row in &index.embeddings {
        for &v in row {
            w.0.extend((v as f32).to_le_bytes());
        }
    }
    let params = index.model.parameters();
    w.u32(params.len() as u32);
    for p in params {
        w.tensor(&p.value);
    }
    let noise = &index.model.model.noise;
    w.tensor(&Tensor::from_rows(noise).expect("rectangular noise"));
    w.0
}

pub fn index_from_bytes(buf: &[u8]) -> Result<EmbeddingIndex> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != INDEX_MAGIC {
        return Err(Error::IndexFormat("bad magic".into()));
    }
    let version = r.u32()?;
    if version != INDEX_VERSION {
        return Err(Error::IndexFormat(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let noise_seed = r.u64()?;
    let rng_seed = r.u64()?;
    let fingerprint: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let meta: IndexMeta = serde_json::from_slice(r.bytes()?)
        .map_err(|e| Error::IndexFormat(format!("metadata: {e}")))?;
    if meta.config.fingerprint() != fingerprint {
        return Err(Error::IndexFormat("config fingerprint mismatch".into()));
    }
    if meta.config.noise_seed != noise_seed || meta.config.rng_seed != rng_seed {
        return Err(Error::IndexFormat(
            "header seeds disagree with config".into(),
        ));
    }
    let model_ids = (0..n).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    if model_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::IndexFormat("model ids not unique and sorted".into()));
    }
    let resources = (0..n)
        .map(|_| {
            Ok(ModelResources {
                params: r.u64()?,
                flops: r.u64()?,
                latency: r.f64()?,
                source_dataset_id: r.string()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let embeddings = (0..n)
        .map(|_| (0..dim).map(|_| r.f32().map(f64::from)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut model = TansModel::new(meta.config, meta.feature_dim)?;
    let count = r.u32()? as usize;
    if count != model.parameters().len() {
        return Err(Error::IndexFormat(format!(
            "expected {} parameter blobs, found {count}",
            model.parameters().len()
        )));
    }
    for p in model.parameters_mut() {
        let t = r.tensor()?;
        if t.shape() != p.value.shape() {
            return Err(Error::IndexFormat(format!(
                "parameter shape {:?} != {:?}",
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t;
    }
    let noise = r.tensor()?;
    model.model.noise = (0..noise.rows())
        .map(|i| noise.row_slice(i).to_vec())
        .collect();
    if r.pos != buf.len() {
        return Err(Error::IndexFormat("trailing bytes".into()));
    }
    Ok(EmbeddingIndex {
        model_ids,
        embeddings,
        resources,
        model,
        fingerprint,
        query_passes: AtomicU64::new(0),
    })
}

pub fn save_index(index: &EmbeddingIndex, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&index_to_bytes(index))
        .map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    index_from_bytes(&buf)
}

/// Produces a full ordering of model ids for a query dataset.
pub trait Ranker: Sync {
    fn name(&self) -> &str;
    fn rank(&self, dataset: &DatasetRecord) -> Result<Vec<String>>;
}

impl Ranker for EmbeddingIndex {
    fn name(&self) -> &str {
        "tans"
    }

    fn rank(&self, dataset: &DatasetRecord) -> Result<Vec<String>> {
        let probe = dataset.probe_set();
        let r = self.retrieve(&probe, self.len().max(1), &Constraints::default(), false)?;
        Ok(r.candidates.into_iter().map(|c| c.model_id).collect())
    }
}

/// Uniformly random ordering, seeded per query dataset.
pub struct RandomRanker {
    pub model_ids: Vec<String>,
    pub seed: u64,
}

impl Ranker for RandomRanker {
    fn name(&self) -> &str {
        "random"
    }

    fn rank(&self, dataset: &DatasetRecord) -> Result<Vec<String>> {
        let mut ids = self.model_ids.clone();
        let mut rng = seed::rng(
            seed::derive_str(self.seed, "random-ranker", &dataset.id),
            "",
            &[],
        );
        ids.shuffle(&mut rng);
        Ok(ids)
    }
}

/// Descending parameter count regardless of the query.
pub struct LargestParameterRanker {
    pub order: Vec<String>,
}

impl LargestParameterRanker {
    pub fn new(zoo: &ModelZoo) -> Self {
        let mut nets: Vec<_> = zoo.networks.values().collect();
        nets.sort_by(|a, b| b.param_count.cmp(&a.param_count).then(a.id.cmp(&b.id)));
        Self {
            order: nets.into_iter().map(|n| n.id.clone()).collect(),
        }
    }
}

impl Ranker for LargestParameterRanker {
    fn name(&self) -> &str {
        "largest-parameter"
    }

    fn rank(&self, _dataset: &DatasetRecord) -> Result<Vec<String>> {
        Ok(self.order.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalMetrics {
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub mean_rank: f64,
    pub median_rank: f64,
    /// 1-based rank of the first correct model, per query dataset.
    pub ranks: BTreeMap<String, usize>,
}

pub fn metrics_from_ranks(ranks: BTreeMap<String, usize>) -> Result<RetrievalMetrics> {
    if ranks.is_empty() {
        return Err(Error::invalid("no queries to evaluate"));
    }
    let n = ranks.len() as f64;
    let at = |k: usize| ranks.values().filter(|&&r| r <= k).count() as f64 / n;
    let mut sorted: Vec<usize> = ranks.values().copied().collect();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid] as f64
    } else {
        (sorted[mid - 1] + sorted[mid]) as f64 / 2.0
    };
    Ok(RetrievalMetrics {
        r_at_1: at(1),
        r_at_5: at(5),
        r_at_10: at(10),
        mean_rank: sorted.iter().sum::<usize>() as f64 / n,
        median_rank: median,
        ranks,
    })
}

/// A model is correct for a query dataset when it was trained on it.
pub fn evaluate_ranker(ranker: &dyn Ranker, zoo: &ModelZoo) -> Result<RetrievalMetrics> {
    let ranks = zoo
        .datasets
        .values()
        .filter(|d| zoo.networks.values().any(|n| n.source_dataset_id == d.id))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|ds| {
            if ds.probe.is_empty() {
                return Err(Error::invalid(format!(
                    "dataset {} has no held-out probe instances",
                    ds.id
                )));
            }
            let order = ranker.rank(ds)?;
            let pos = order
                .iter()
                .position(|id| {
                    zoo.networks
                        .get(id)
                        .is_some_and(|n| n.source_dataset_id == ds.id)
                })
                .ok_or_else(|| {
                    Error::invalid(format!("ranking for {} contains no correct model", ds.id))
                })?;
            Ok((ds.id.clone(), pos + 1))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    metrics_from_ranks(ranks)
}

pub fn evaluate_retrieval(index: &EmbeddingIndex, zoo: &ModelZoo) -> Result<RetrievalMetrics> {
    evaluate_ranker(index, zoo)
}

/// One constrained query: a zoo dataset's probe plus resource bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCase {
    pub dataset_id: String,
    pub constraints: Constraints,
}

/// `n` cases cycling through the zoo's datasets, each bounding parameters
/// and FLOPs at independent random quantiles (20%-100%) of the zoo's
/// networks.
pub fn constraint_cases(zoo: &ModelZoo, n: usize, rng_seed: u64) -> Result<Vec<ConstraintCase>> {
    let ids = zoo.dataset_ids();
    if ids.is_empty() || zoo.networks.is_empty() {
        return Err(Error::invalid(
            "constraint cases need datasets and networks",
        ));
    }
    let mut params: Vec<u64> = zoo.networks.values().map(|n| n.param_count).collect();
    let mut flops: Vec<u64> = zoo.networks.values().map(|n| n.macs).collect();
    params.sort_unstable();
    flops.sort_unstable();
    let pick = |v: &[u64], q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    let mut rng = seed::rng(rng_seed, "constraint-cases", &[]);
    Ok((0..n)
        .map(|i| ConstraintCase {
            dataset_id: ids[i % ids.len()].clone(),
            constraints: Constraints {
                max_params: Some(pick(&params, rng.random_range(0.2..=1.0))),
                max_flops: Some(pick(&flops, rng.random_range(0.2..=1.0))),
                max_latency: None,
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub dataset_id: String,
    pub returned: usize,
    /// Returned models that really satisfy the bounds.
    pub satisfied: usize,
    pub top1_id: Option<String>,
    pub top1_accuracy: f64,
    /// Best accuracy on the dataset over every feasible zoo network.
    pub best_feasible_accuracy: f64,
}

impl CaseOutcome {
    pub fn hit(&self) -> bool {
        self.top1_id.is_some() && self.top1_accuracy >= self.best_feasible_accuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedMetrics {
    pub cases: Vec<CaseOutcome>,
    /// Fraction of returned models within their bounds.
    pub satisfaction_rate: f64,
    /// Fraction of cases whose top-1 matches the best feasible accuracy.
    pub hit_rate: f64,
}

/// Retrieve `k` models per case and compare the top-1's accuracy on the
/// query dataset with an exhaustive scan of every feasible network.
pub fn evaluate_constrained(
    index: &EmbeddingIndex,
    zoo: &ModelZoo,
    cases: &[ConstraintCase],
    k: usize,
    rerank: bool,
) -> Result<ConstrainedMetrics> {
    if cases.is_empty() {
        return Err(Error::invalid("no constraint cases"));
    }
    let outcomes = cases
        .iter()
        .map(|c| {
            let ds = zoo.dataset(&c.dataset_id)?;
            let r = index.retrieve(&ds.probe_set(), k, &c.constraints, rerank)?;
            let admits = |id: &str| -> Result<bool> {
                let n = zoo.network(id)?;
                Ok(c.constraints.admits(n.param_count, n.macs, n.latency))
            };
            let mut satisfied = 0;
            for cand in &r.candidates {
                satisfied += usize::from(admits(&cand.model_id)?);
            }
            let best = zoo
                .networks
                .values()
                .filter(|n| c.constraints.admits(n.param_count, n.macs, n.latency))
                .map(|n| evaluate_network(n, ds))
                .fold(f64::NEG_INFINITY, f64::max);
            let top1 = r.candidates.first().map(|c| c.model_id.clone());
            let top1_accuracy = match &top1 {
                Some(id) => evaluate_network(zoo.network(id)?, ds),
                None => f64::NEG_INFINITY,
            };
            Ok(CaseOutcome {
                dataset_id: c.dataset_id.clone(),
                returned: r.candidates.len(),
                satisfied,
                top1_id: top1,
                top1_accuracy,
                best_feasible_accuracy: best,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let returned: usize = outcomes.iter().map(|o| o.returned).sum();
    let satisfied: usize = outcomes.iter().map(|o| o.satisfied).sum();
    let hits = outcomes.iter().filter(|o| o.hit()).count();
    Ok(ConstrainedMetrics {
        satisfaction_rate: if returned == 0 {
            1.0
        } else {
            satisfied as f64 / returned as f64
        },
        hit_rate: hits as f64 / outcomes.len() as f64,
        cases: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::TrainConfig;
    use crate::diffmath::norm;
    use crate::synth::{build_full_zoo, SynthConfig};

    fn zoo() -> ModelZoo {
        build_full_zoo(&SynthConfig {
            n_datasets: 3,
            networks_per_dataset: 2,
            instances_per_class_min: 20,
            instances_per_class_max: 25,
            ..Default::default()
        })
        .unwrap()
    }

    fn index(z: &ModelZoo) -> EmbeddingIndex {
        let m = TansModel::new(TrainConfig::default(), 16).unwrap();
        build_index(z, &m).unwrap()
    }

    #[test]
    fn index_rows_and_recomputation() {
        let z = zoo();
        let idx = index(&z);
        assert_eq!(idx.len(), 6);
        for (i, id) in idx.model_ids.iter().enumerate() {
            assert!((norm(&idx.embeddings[i]) - 1.0).abs() < 1e-6);
            let e = idx.model.encode_network(z.network(id).unwrap()).unwrap();
            let e: Vec<f64> = e.into_iter().map(to_f32_exact).collect();
            assert_eq!(e, idx.embeddings[i]);
        }
    }

    #[test]
    fn bytes_round_trip_and_determinism() {
        let z = zoo();
        let a = index_to_bytes(&index(&z));
        let b = index_to_bytes(&index(&z));
        assert_eq!(a, b);
        let back = index_from_bytes(&a).unwrap();
        assert_eq!(index_to_bytes(&back), a);
        assert!(index_from_bytes(&a[..a.len() - 1]).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(index_from_bytes(&bad).is_err());
        let mut bad = a.clone();
        bad[30] ^= 1;
        assert!(index_from_bytes(&bad).is_err());
    }

    #[test]
    fn retrieve_contract() {
        let z = zoo();
        let idx = index(&z);
        let probe = z.datasets.values().next().unwrap().probe_set();
        let all = idx
            .retrieve(&probe, 100, &Constraints::default(), false)
            .unwrap();
        assert_eq!(all.candidates.len(), 6);
        assert!(all
            .candidates
            .windows(2)
            .all(|w| w[0].similarity >= w[1].similarity));
        assert_eq!(idx.query_passes(), 1);

        let tight = Constraints {
            max_params: Some(1),
            ..Default::default()
        };
        let none = idx.retrieve(&probe, 3, &tight, false).unwrap();
        assert!(none.no_feasible_model && none.candidates.is_empty());
        assert!(idx
            .retrieve(&probe, 0, &Constraints::default(), false)
            .is_err());
        assert!(idx
            .retrieve(&[], 1, &Constraints::default(), false)
            .is_err());

        let re = idx
            .retrieve(&probe, 4, &Constraints::default(), true)
            .unwrap();
        let mut a: Vec<_> = re.candidates.iter().map(|c| c.model_id.clone()).collect();
        let mut b: Vec<_> = all.candidates[..4]
            .iter()
            .map(|c| c.model_id.clone())
            .collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
        assert!(re.candidates.iter().all(|c| c.predicted_accuracy.is_some()));
        assert_eq!(idx.query_passes(), 3);
    }

    #[test]
    fn constrained_evaluation_against_scan() {
        let z = zoo();
        let idx = index(&z);
        let cases = constraint_cases(&z, 7, 3).unwrap();
        assert_eq!(cases.len(), 7);
        assert_eq!(cases, constraint_cases(&z, 7, 3).unwrap());
        let m = evaluate_constrained(&idx, &z, &cases, 3, true).unwrap();
        assert_eq!(m.satisfaction_rate, 1.0);
        for (o, c) in m.cases.iter().zip(&cases) {
            let ds = z.dataset(&c.dataset_id).unwrap();
            let feasible: Vec<f64> = z
                .networks
                .values()
                .filter(|n| c.constraints.admits(n.param_count, n.macs, n.latency))
                .map(|n| evaluate_network(n, ds))
                .collect();
            assert_eq!(o.returned, feasible.len().min(3));
            assert!(feasible.contains(&o.top1_accuracy));
            assert!(feasible.iter().all(|&a| a <= o.best_feasible_accuracy));
        }
        let hits = m.cases.iter().filter(|o| o.hit()).count() as f64;
        assert_eq!(m.hit_rate, hits / 7.0);
        assert!(evaluate_constrained(&idx, &z, &[], 3, true).is_err());
    }

    #[test]
    fn orthogonal_pairs_retrieve_their_partner() {
        let z = zoo();
        let mut idx = index(&z);
        for (i, row) in idx.embeddings.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[i] = 1.0;
        }
        for i in 0..idx.len() {
            let mut q = vec![0.0; idx.dim()];
            q[i] = 1.0;
            let r = idx
                .retrieve_encoded(&q, 1, &Constraints::default(), false)
                .unwrap();
            assert_eq!(r.candidates[0].model_id, idx.model_ids[i]);
        }
    }

    #[test]
    fn metric_arithmetic() {
        let ranks: BTreeMap<String, usize> =
            [("a".into(), 1), ("b".into(), 1), ("c".into(), 2)].into();
        let m = metrics_from_ranks(ranks).unwrap();
        assert!((m.r_at_1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.r_at_5, 1.0);
        assert!((m.mean_rank - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.median_rank, 1.0);
        assert!(metrics_from_ranks(BTreeMap::new()).is_err());
    }

    #[test]
    fn baselines() {
        let z = zoo();
        let lp = LargestParameterRanker::new(&z);
        let ds: Vec<_> = z.datasets.values().collect();
        assert_eq!(lp.rank(ds[0]).unwrap(), lp.rank(ds[1]).unwrap());
        let rr = RandomRanker {
            model_ids: z.networks.keys().cloned().collect(),
            seed: 5,
        };
        assert_eq!(rr.rank(ds[0]).unwrap(), rr.rank(ds[0]).unwrap());
        let m = evaluate_ranker(&lp, &z).unwrap();
        assert_eq!(m.ranks.len(), 3);
    }
}
