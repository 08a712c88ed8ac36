//! Zoo domain types and the on-disk zoo format.
//!
//! A zoo file is JSON Lines. The first line is a header carrying the format
//! version and the min/max statistics used to normalize latency and parameter
//! counts. Each following line is one [`ZooEntry`]; the first entry that
//! mentions a dataset or network embeds its record inline. Bulk arrays
//! (instance features, network parameters) live in a sidecar file of
//! little-endian `f32`, referenced by file name, element offset and count.
//!
//! All bulk values are kept `f32`-representable in memory, which is what makes
//! `save_zoo` followed by `load_zoo` an exact round trip.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNITS: usize = 5;
pub const MAX_DEPTH: usize = 4;
pub const LAYER_SLOTS: usize = UNITS * MAX_DEPTH;
/// Flattened descriptor length: depths + kernels + expansions.
pub const DESCRIPTOR_LEN: usize = UNITS + 2 * LAYER_SLOTS;

pub const DEPTH_CHOICES: [u8; 3] = [2, 3, 4];
pub const KERNEL_CHOICES: [u8; 3] = [3, 5, 7];
pub const EXPANSION_CHOICES: [u8; 3] = [3, 4, 6];

pub const ZOO_FORMAT_VERSION: u32 = 1;

/// Per-unit depths plus per-layer kernel and expansion choices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct TopologyDescriptor {
    depths: [u8; UNITS],
    kernels: [u8; LAYER_SLOTS],
    expansions: [u8; LAYER_SLOTS],
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    depths: Vec<u8>,
    kernels: Vec<u8>,
    expansions: Vec<u8>,
}

impl TryFrom<RawTopology> for TopologyDescriptor {
    type Error = Error;

    fn try_from(r: RawTopology) -> Result<Self> {
        TopologyDescriptor::new(&r.depths, &r.kernels, &r.expansions)
    }
}

impl From<TopologyDescriptor> for RawTopology {
    fn from(t: TopologyDescriptor) -> Self {
        RawTopology {
            depths: t.depths.to_vec(),
            kernels: t.kernels.to_vec(),
            expansions: t.expansions.to_vec(),
        }
    }
}

impl TopologyDescriptor {
    /// Validates lengths, choice sets, and that inactive slots are zero.
    pub fn new(depths: &[u8], kernels: &[u8], expansions: &[u8]) -> Result<Self> {
        if depths.len() != UNITS || kernels.len() != LAYER_SLOTS || expansions.len() != LAYER_SLOTS
        {
            return Err(Error::invalid(format!(
                "topology needs {UNITS}/{LAYER_SLOTS}/{LAYER_SLOTS} slots, got {}/{}/{}",
                depths.len(),
                kernels.len(),
                expansions.len()
            )));
        }
        for (u, &d) in depths.iter().enumerate() {
            if !DEPTH_CHOICES.contains(&d) {
                return Err(Error::invalid(format!("unit {u}: illegal depth {d}")));
            }
            for l in 0..MAX_DEPTH {
                let s = u * MAX_DEPTH + l;
                let (k, e) = (kernels[s], expansions[s]);
                if l < d as usize {
                    if !KERNEL_CHOICES.contains(&k) || !EXPANSION_CHOICES.contains(&e) {
                        return Err(Error::invalid(format!(
                            "slot {s}: illegal kernel/expansion {k}/{e}"
                        )));
                    }
                } else if k != 0 || e != 0 {
                    return Err(Error::invalid(format!(
                        "slot {s} is beyond unit depth {d} but not zero"
                    )));
                }
            }
        }
        Ok(Self {
            depths: depths.try_into().expect("length checked"),
            kernels: kernels.try_into().expect("length checked"),
            expansions: expansions.try_into().expect("length checked"),
        })
    }

    pub fn sample<R: rand::Rng + ?Sized>(rng: &mut R) -> Self {
        let mut depths = [0u8; UNITS];
        let mut kernels = [0u8; LAYER_SLOTS];
        let mut expansions = [0u8; LAYER_SLOTS];
        for u in 0..UNITS {
            depths[u] = DEPTH_CHOICES[rng.random_range(0..3)];
            for l in 0..depths[u] as usize {
                kernels[u * MAX_DEPTH + l] = KERNEL_CHOICES[rng.random_range(0..3)];
                expansions[u * MAX_DEPTH + l] = EXPANSION_CHOICES[rng.random_range(0..3)];
            }
        }
        Self {
            depths,
            kernels,
            expansions,
        }
    }

    pub fn depths(&self) -> &[u8; UNITS] {
        &self.depths
    }

    pub fn kernels(&self) -> &[u8; LAYER_SLOTS] {
        &self.kernels
    }

    pub fn expansions(&self) -> &[u8; LAYER_SLOTS] {
        &self.expansions
    }

    pub fn total_depth(&self) -> usize {
        self.depths.iter().map(|&d| d as usize).sum()
    }

    /// Flat slot indices of active layers, unit-major.
    pub fn active_slots(&self) -> Vec<usize> {
        (0..UNITS)
            .flat_map(|u| (0..self.depths[u] as usize).map(move |l| u * MAX_DEPTH + l))
            .collect()
    }

    /// Raw 45-slot vector: depths, kernels, expansions.
    pub fn flatten(&self) -> Vec<f64> {
        self.depths
            .iter()
            .chain(&self.kernels)
            .chain(&self.expansions)
            .map(|&v| v as f64)
            .collect()
    }

    /// The 45-slot vector with each slot divided by its largest legal value.
    pub fn scaled(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(DESCRIPTOR_LEN);
        v.extend(self.depths.iter().map(|&d| d as f64 / 4.0));
        v.extend(self.kernels.iter().map(|&k| k as f64 / 7.0));
        v.extend(self.expansions.iter().map(|&e| e as f64 / 6.0));
        v
    }
}

/// A labeled classification task with its query probe instances.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub class_count: usize,
    pub feature_dim: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    /// Indices into `features`; a subset of `validation`.
    pub probe: Vec<usize>,
}

impl DatasetRecord {
    pub fn probe_set(&self) -> Vec<Vec<f64>> {
        self.probe
            .iter()
            .map(|&i| self.features[i].clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        let bad = |m: String| Err(Error::invalid(format!("dataset {}: {m}", self.id)));
        if self.class_count < 2 {
            return bad(format!("class_count {} < 2", self.class_count));
        }
        if self.labels.len() != n {
            return bad("labels and features differ in length".into());
        }
        if let Some(l) = self.labels.iter().find(|&&l| l >= self.class_count) {
            return bad(format!("label {l} out of range"));
        }
        if self.features.iter().any(|f| f.len() != self.feature_dim) {
            return bad("feature dimension mismatch".into());
        }
        let train: BTreeSet<usize> = self.train.iter().copied().collect();
        let val: BTreeSet<usize> = self.validation.iter().copied().collect();
        if train.iter().chain(&val).any(|&i| i >= n) {
            return bad("split index out of range".into());
        }
        if train.intersection(&val).next().is_some() {
            return bad("train and validation overlap".into());
        }
        if self.probe.iter().any(|i| !val.contains(i)) {
            return bad("probe instance outside the validation split".into());
        }
        Ok(())
    }
}

/// A small fully connected network fitted on one dataset.
///
/// `widths` lists every layer width from input to output; `parameters` holds,
/// per layer, the row-major `in x out` weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRecord {
    pub id: String,
    pub source_dataset_id: String,
    pub topology: TopologyDescriptor,
    pub widths: Vec<usize>,
    pub parameters: Vec<f64>,
    pub param_count: u64,
    /// Multiply-accumulate count of one forward pass; exposed as "flops".
    pub macs: u64,
    /// Seconds per forward pass.
    pub latency: f64,
    /// Seed of the hidden layers and of the unfitted output head.
    pub init_seed: u64,
}

impl NetworkRecord {
    pub fn validate(&self) -> Result<()> {
        if self.param_count as usize != self.parameters.len() {
            return Err(Error::invalid(format!(
                "network {}: param_count {} but {} parameters",
                self.id,
                self.param_count,
                self.parameters.len()
            )));
        }
        if !(self.latency > 0.0) {
            return Err(Error::invalid(format!(
                "network {}: latency must be > 0",
                self.id
            )));
        }
        if self.widths.len() < 2 {
            return Err(Error::invalid(format!(
                "network {}: needs >= 2 widths",
                self.id
            )));
        }
        let expected: usize = self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if expected != self.parameters.len() {
            return Err(Error::invalid(format!(
                "network {}: widths imply {expected} parameters, found {}",
                self.id,
                self.parameters.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub dataset_id: String,
    pub network_id: String,
    pub accuracy: f64,
    pub norm_latency: f64,
    pub norm_params: f64,
}

impl ZooEntry {
    pub fn pair_id(&self) -> String {
        format!("{}/{}", self.dataset_id, self.network_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn from_values(vals: impl Iterator<Item = f64>) -> Option<Self> {
        vals.fold(None, |acc, v| match acc {
            None => Some(MinMax { min: v, max: v }),
            Some(m) => Some(MinMax {
                min: m.min.min(v),
                max: m.max.max(v),
            }),
        })
    }

    /// Min-max scaling; a degenerate range maps everything to 0.
    pub fn apply(&self, v: f64) -> f64 {
        if self.max > self.min {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub latency: MinMax,
    pub params: MinMax,
}

impl Default for NormalizationStats {
    fn default() -> Self {
        let z = MinMax { min: 0.0, max: 0.0 };
        Self {
            latency: z,
            params: z,
        }
    }
}

/// Optional resource bounds for retrieval.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    pub max_params: Option<u64>,
    pub max_flops: Option<u64>,
    pub max_latency: Option<f64>,
}

impl Constraints {
    pub fn validate(&self) -> Result<()> {
        if self.max_params == Some(0) || self.max_flops == Some(0) {
            return Err(Error::invalid("constraint bounds must be > 0"));
        }
        if let Some(l) = self.max_latency {
            if !(l > 0.0) {
                return Err(Error::invalid("latency bound must be > 0"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.max_params.is_none() && self.max_flops.is_none() && self.max_latency.is_none()
    }

    pub fn admits(&self, params: u64, flops: u64, latency: f64) -> bool {
        self.max_params.is_none_or(|b| params <= b)
            && self.max_flops.is_none_or(|b| flops <= b)
            && self.max_latency.is_none_or(|b| latency <= b)
    }
}

/// Entries plus the dataset and network records they reference.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelZoo {
    pub entries: Vec<ZooEntry>,
    pub datasets: BTreeMap<String, DatasetRecord>,
    pub networks: BTreeMap<String, NetworkRecord>,
    pub normalization_stats: NormalizationStats,
}

impl ModelZoo {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dataset(&self, id: &str) -> Result<&DatasetRecord> {
        self.datasets
            .get(id)
            .ok_or_else(|| Error::DanglingReference {
                kind: "dataset",
                id: id.to_string(),
            })
    }

    pub fn network(&self, id: &str) -> Result<&NetworkRecord> {
        self.networks
            .get(id)
            .ok_or_else(|| Error::DanglingReference {
                kind: "network",
                id: id.to_string(),
            })
    }

    pub fn entry(&self, dataset_id: &str, network_id: &str) -> Option<&ZooEntry> {
        self.entries
            .iter()
            .find(|e| e.dataset_id == dataset_id && e.network_id == network_id)
    }

    /// Dataset ids referenced by entries, sorted.
    pub fn dataset_ids(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.entries.iter().map(|e| &e.dataset_id).collect();
        set.into_iter().cloned().collect()
    }

    /// Checks referential integrity, uniqueness and normalization consistency.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            self.dataset(&e.dataset_id)?;
            let net = self.network(&e.network_id)?;
            if !seen.insert((e.dataset_id.as_str(), e.network_id.as_str())) {
                return Err(Error::DuplicateEntry {
                    dataset_id: e.dataset_id.clone(),
                    network_id: e.network_id.clone(),
                });
            }
            for (name, v) in [
                ("accuracy", e.accuracy),
                ("norm_latency", e.norm_latency),
                ("norm_params", e.norm_params),
            ] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!(
                        "entry {}: {name} {v} outside [0, 1]",
                        e.pair_id()
                    )));
                }
            }
            let stats = &self.normalization_stats;
            let lat = stats.latency.apply(net.latency);
            let par = stats.params.apply(net.param_count as f64);
            if (lat - e.norm_latency).abs() > 1e-9 || (par - e.norm_params).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "entry {}: normalized resources disagree with stored stats",
                    e.pair_id()
                )));
            }
        }
        for d in self.datasets.values() {
            d.validate()?;
        }
        for n in self.networks.values() {
            n.validate()?;
        }
        Ok(())
    }
}

/// Fill `norm_latency`/`norm_params` from the raw network values using
/// min-max statistics over the entries' networks.
pub fn normalize_resources(mut zoo: ModelZoo) -> Result<ModelZoo> {
    if zoo.entries.is_empty() {
        return Err(Error::invalid("cannot normalize an empty zoo"));
    }
    let mut lats = Vec::with_capacity(zoo.entries.len());
    let mut pars = Vec::with_capacity(zoo.entries.len());
    for e in &zoo.entries {
        let n = zoo.network(&e.network_id)?;
        lats.push(n.latency);
        pars.push(n.param_count as f64);
    }
    let stats = NormalizationStats {
        latency: MinMax::from_values(lats.into_iter()).expect("non-empty"),
        params: MinMax::from_values(pars.into_iter()).expect("non-empty"),
    };
    apply_normalization(&mut zoo, stats)?;
    Ok(zoo)
}

/// Recompute normalized fields from given statistics.
pub fn apply_normalization(zoo: &mut ModelZoo, stats: NormalizationStats) -> Result<()> {
    for i in 0..zoo.entries.len() {
        let n = zoo.network(&zoo.entries[i].network_id)?;
        let (lat, par) = (n.latency, n.param_count as f64);
        let e = &mut zoo.entries[i];
        e.norm_latency = stats.latency.apply(lat);
        e.norm_params = stats.params.apply(par);
    }
    zoo.normalization_stats = stats;
    Ok(())
}

/// Round to the nearest `f32`, the precision of sidecar storage.
pub fn to_f32_exact(v: f64) -> f64 {
    v as f32 as f64
}

// ---- file format ---------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    normalization_stats: NormalizationStats,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
struct BlobRef {
    file: String,
    offset: u64,
    count: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetLine {
    id: String,
    class_count: usize,
    feature_dim: usize,
    labels: Vec<usize>,
    train: Vec<usize>,
    validation: Vec<usize>,
    probe: Vec<usize>,
    features: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct NetworkLine {
    id: String,
    source_dataset_id: String,
    topology: TopologyDescriptor,
    widths: Vec<usize>,
    param_count: u64,
    macs: u64,
    latency: f64,
    init_seed: u64,
    parameters: BlobRef,
}

#[derive(Serialize, Deserialize)]
struct EntryLine {
    #[serde(flatten)]
    entry: ZooEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dataset: Option<DatasetLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    network: Option<NetworkLine>,
}

/// Sidecar path for a zoo file: same directory, extension replaced by `f32`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("f32")
}

struct SidecarWriter {
    name: String,
    buf: Vec<u8>,
    count: u64,
}

impl SidecarWriter {
    fn push(&mut self, vals: impl Iterator<Item = f64>) -> BlobRef {
        let offset = self.count;
        for v in vals {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
            self.count += 1;
        }
        BlobRef {
            file: self.name.clone(),
            offset,
            count: self.count - offset,
        }
    }
}

/// Write the zoo as JSON Lines plus its `f32` sidecar.
pub fn save_zoo(zoo: &ModelZoo, path: &Path) -> Result<()> {
    let side = sidecar_path(path);
    let side_name = side
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::invalid(format!("bad zoo path {}", path.display())))?;
    let mut sidecar = SidecarWriter {
        name: side_name,
        buf: Vec::new(),
        count: 0,
    };

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = Header {
        format_version: ZOO_FORMAT_VERSION,
        normalization_stats: zoo.normalization_stats,
    };
    let write_line = |out: &mut BufWriter<fs::File>, s: String| -> Result<()> {
        out.write_all(s.as_bytes())
            .and_then(|_| out.write_all(b"\n"))
            .map_err(|e| Error::io(path, e))
    };
    write_line(&mut out, to_json(&header)?)?;

    let mut emitted_ds = BTreeSet::new();
    let mut emitted_net = BTreeSet::new();
    for e in &zoo.entries {
        let dataset = if emitted_ds.insert(e.dataset_id.clone()) {
            let d = zoo.dataset(&e.dataset_id)?;
            let features = sidecar.push(d.features.iter().flatten().copied());
            Some(DatasetLine {
                id: d.id.clone(),
                class_count: d.class_count,
                feature_dim: d.feature_dim,
                labels: d.labels.clone(),
                train: d.train.clone(),
                validation: d.validation.clone(),
                probe: d.probe.clone(),
                features,
            })
        } else {
            None
        };
        let network = if emitted_net.insert(e.network_id.clone()) {
            let n = zoo.network(&e.network_id)?;
            let parameters = sidecar.push(n.parameters.iter().copied());
            Some(NetworkLine {
                id: n.id.clone(),
                source_dataset_id: n.source_dataset_id.clone(),
                topology: n.topology.clone(),
                widths: n.widths.clone(),
                param_count: n.param_count,
                macs: n.macs,
                latency: n.latency,
                init_seed: n.init_seed,
                parameters,
            })
        } else {
            None
        };
        let line = EntryLine {
            entry: e.clone(),
            dataset,
            network,
        };
        write_line(&mut out, to_json(&line)?)?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    fs::write(&side, &sidecar.buf).map_err(|e| Error::io(&side, e))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| Error::invalid(format!("serialization failed: {e}")))
}

/// Read a zoo written by [`save_zoo`], checking every invariant.
pub fn load_zoo(path: &Path) -> Result<ModelZoo> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut sidecars: BTreeMap<String, Vec<f32>> = BTreeMap::new();

    let mut zoo = ModelZoo::default();
    let mut header_seen = false;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: m,
        };
        if !header_seen {
            let h: Header = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
            if h.format_version != ZOO_FORMAT_VERSION {
                return Err(perr(format!(
                    "unsupported format_version {}",
                    h.format_version
                )));
            }
            zoo.normalization_stats = h.normalization_stats;
            header_seen = true;
            continue;
        }
        let el: EntryLine = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if let Some(d) = el.dataset {
            let flat = read_blob(dir, &mut sidecars, &d.features).map_err(|m| perr(m))?;
            if d.feature_dim == 0 || flat.len() % d.feature_dim != 0 {
                return Err(perr(format!("dataset {}: bad feature blob", d.id)));
            }
            let features = flat.chunks(d.feature_dim).map(<[f64]>::to_vec).collect();
            let rec = DatasetRecord {
                id: d.id.clone(),
                class_count: d.class_count,
                feature_dim: d.feature_dim,
                features,
                labels: d.labels,
                train: d.train,
                validation: d.validation,
                probe: d.probe,
            };
            if zoo.datasets.insert(d.id.clone(), rec).is_some() {
                return Err(perr(format!("dataset {} embedded twice", d.id)));
            }
        }
        if let Some(n) = el.network {
            let parameters = read_blob(dir, &mut sidecars, &n.parameters).map_err(|m| perr(m))?;
            let rec = NetworkRecord {
                id: n.id.clone(),
                source_dataset_id: n.source_dataset_id,
                topology: n.topology,
                widths: n.widths,
                parameters,
                param_count: n.param_count,
                macs: n.macs,
                latency: n.latency,
                init_seed: n.init_seed,
            };
            if zoo.networks.insert(n.id.clone(), rec).is_some() {
                return Err(perr(format!("network {} embedded twice", n.id)));
            }
        }
        zoo.entries.push(el.entry);
    }
    if !header_seen {
        return Ok(zoo);
    }
    zoo.validate()?;
    Ok(zoo)
}

fn read_blob(
    dir: &Path,
    cache: &mut BTreeMap<String, Vec<f32>>,
    r: &BlobRef,
) -> std::result::Result<Vec<f64>, String> {
    if !cache.contains_key(&r.file) {
        let p = dir.join(&r.file);
        let bytes = fs::read(&p).map_err(|e| format!("reading sidecar {}: {e}", p.display()))?;
        if bytes.len() % 4 != 0 {
            return Err(format!("sidecar {} has a partial value", p.display()));
        }
        let vals = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        cache.insert(r.file.clone(), vals);
    }
    let vals = &cache[&r.file];
    let (start, end) = (r.offset as usize, (r.offset + r.count) as usize);
    if end > vals.len() {
        return Err(format!(
            "blob {}[{start}..{end}] exceeds sidecar length {}",
            r.file,
            vals.len()
        ));
    }
    Ok(vals[start..end].iter().map(|&v| v as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_zoo() -> ModelZoo {
        let topo = TopologyDescriptor::sample(&mut crate::seed::rng(0, "t", &[]));
        let ds = DatasetRecord {
            id: "d0".into(),
            class_count: 2,
            feature_dim: 2,
            features: vec![vec![0.5, 1.0], vec![-1.0, 2.0], vec![0.25, 0.0]],
            labels: vec![0, 1, 0],
            train: vec![0, 1],
            validation: vec![2],
            probe: vec![2],
        };
        let mk = |id: &str, lat: f64| NetworkRecord {
            id: id.into(),
            source_dataset_id: "d0".into(),
            topology: topo.clone(),
            widths: vec![2, 2],
            parameters: vec![0.5; 6],
            param_count: 6,
            macs: 4,
            latency: lat,
            init_seed: 3,
        };
        let mut z = ModelZoo::default();
        z.datasets.insert("d0".into(), ds);
        for (i, lat) in [2.0, 4.0, 6.0].into_iter().enumerate() {
            let id = format!("n{i}");
            z.networks.insert(id.clone(), mk(&id, lat));
            z.entries.push(ZooEntry {
                dataset_id: "d0".into(),
                network_id: id,
                accuracy: if i == 2 { 1.0 } else { 0.5 },
                norm_latency: 0.0,
                norm_params: 0.0,
            });
        }
        normalize_resources(z).unwrap()
    }

    #[test]
    fn topology_validation() {
        let t = TopologyDescriptor::sample(&mut crate::seed::rng(1, "t", &[]));
        assert_eq!(t.flatten().len(), DESCRIPTOR_LEN);
        assert_eq!(t.active_slots().len(), t.total_depth());
        let mut k = t.kernels().to_vec();
        let slot = (0..UNITS)
            .find(|&u| t.depths()[u] < 4)
            .map(|u| u * MAX_DEPTH + 3);
        if let Some(s) = slot {
            k[s] = 3;
            assert!(TopologyDescriptor::new(t.depths(), &k, t.expansions()).is_err());
        }
        assert!(TopologyDescriptor::new(&[5, 2, 2, 2, 2], t.kernels(), t.expansions()).is_err());
    }

    #[test]
    fn min_max_normalization() {
        let z = tiny_zoo();
        let lats: Vec<f64> = z.entries.iter().map(|e| e.norm_latency).collect();
        assert_eq!(lats, vec![0.0, 0.5, 1.0]);
        // all param counts equal -> degenerate range -> 0
        assert!(z.entries.iter().all(|e| e.norm_params == 0.0));

        let mm = MinMax::from_values([1000.0, 3000.0, 2000.0].into_iter()).unwrap();
        let v: Vec<f64> = [1000.0, 3000.0, 2000.0]
            .iter()
            .map(|&x| mm.apply(x))
            .collect();
        assert_eq!(v, vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn normalization_is_idempotent_under_stored_stats() {
        let z = tiny_zoo();
        let mut again = z.clone();
        apply_normalization(&mut again, z.normalization_stats).unwrap();
        assert_eq!(z, again);
    }

    #[test]
    fn normalize_empty_zoo_errors() {
        assert!(normalize_resources(ModelZoo::default()).is_err());
    }

    #[test]
    fn save_load_round_trip_and_boundary_accuracy() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zoo.jsonl");
        let z = tiny_zoo();
        save_zoo(&z, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"accuracy\":1.0"));
        let back = load_zoo(&p).unwrap();
        assert_eq!(z, back);
        assert_eq!(back.entries[2].accuracy, 1.0);
    }

    #[test]
    fn empty_zoo_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        save_zoo(&ModelZoo::default(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        let z = load_zoo(&p).unwrap();
        assert_eq!(z.len(), 0);

        let blank = dir.path().join("blank.jsonl");
        fs::write(&blank, "").unwrap();
        assert_eq!(load_zoo(&blank).unwrap().len(), 0);
    }

    #[test]
    fn dangling_network_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zoo.jsonl");
        save_zoo(&tiny_zoo(), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines.push(
            r#"{"dataset_id":"d0","network_id":"ghost","accuracy":0.5,"norm_latency":0.0,"norm_params":0.0}"#
                .into(),
        );
        fs::write(&p, lines.join("\n")).unwrap();
        match load_zoo(&p) {
            Err(Error::DanglingReference { kind, id }) => {
                assert_eq!(kind, "network");
                assert_eq!(id, "ghost");
            }
            other => panic!("expected dangling reference, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_pair_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zoo.jsonl");
        save_zoo(&tiny_zoo(), &p).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str(
            r#"{"dataset_id":"d0","network_id":"n0","accuracy":0.5,"norm_latency":0.0,"norm_params":0.0}"#,
        );
        fs::write(&p, text).unwrap();
        assert!(matches!(load_zoo(&p), Err(Error::DuplicateEntry { .. })));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zoo.jsonl");
        save_zoo(&tiny_zoo(), &p).unwrap();
        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("{not json\n");
        fs::write(&p, text).unwrap();
        match load_zoo(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn constraints_admit() {
        let c = Constraints {
            max_params: Some(10),
            max_flops: None,
            max_latency: Some(1.0),
        };
        assert!(c.admits(10, 1_000_000, 0.5));
        assert!(!c.admits(11, 0, 0.5));
        assert!(!c.admits(1, 0, 2.0));
        assert!(Constraints {
            max_params: Some(0),
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
