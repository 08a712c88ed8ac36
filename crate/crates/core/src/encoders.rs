//! Query (dataset) and model (network) encoders.
//!
//! The query encoder transforms each probe instance with a learnable map and
//! mean-pools the results, then L2-normalizes. Instances are sorted by their
//! byte encoding before pooling so that the floating-point summation order,
//! and therefore the output bits, do not depend on the input order.
//!
//! The model encoder concatenates the scaled 45-slot topology descriptor with
//! a functional embedding (the network's outputs on a fixed Gaussian probe
//! batch), normalizes the concatenation, projects it and L2-normalizes.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffmath::{norm, Tape, Tensor, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::layers::{Module, Projection};
use crate::seed;
use crate::zoo::{to_f32_exact, NetworkRecord, TopologyDescriptor, DESCRIPTOR_LEN};

pub const EMBED_DIM: usize = 128;

/// Which halves of the model-encoder input are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingMode {
    #[default]
    Full,
    TopologyOnly,
    FunctionalOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub functional_dim: usize,
    pub noise_batch: usize,
    pub noise_seed: u64,
    /// 0 = single linear layer; otherwise width of one rectified hidden layer.
    pub hidden_width: usize,
    pub init_seed: u64,
    pub mode: EmbeddingMode,
}

impl EncoderConfig {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            embed_dim: EMBED_DIM,
            functional_dim: 64,
            noise_batch: 8,
            noise_seed: 0x5eed,
            hidden_width: 0,
            init_seed: 0,
            mode: EmbeddingMode::Full,
        }
    }

    pub fn model_input_dim(&self) -> usize {
        DESCRIPTOR_LEN + self.functional_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEncoder {
    pub rho: Projection,
}

impl QueryEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = seed::rng(cfg.init_seed, "query-encoder", &[]);
        Self {
            rho: Projection::new(cfg.feature_dim, cfg.embed_dim, cfg.hidden_width, &mut rng),
        }
    }

    /// `l2_normalize(mean_i rho(x_i))` as a `1 x d` node.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], probe: &[Vec<f64>]) -> Result<Var> {
        if probe.is_empty() {
            return Err(Error::invalid("empty probe set"));
        }
        let f = self.rho.input_dim();
        if let Some(bad) = probe.iter().find(|x| x.len() != f) {
            return Err(Error::shape(
                "encode_query",
                format!("instance has {} features, encoder expects {f}", bad.len()),
            ));
        }
        let sorted = sort_instances(probe);
        let rows: Vec<Vec<f64>> = sorted.into_iter().cloned().collect();
        let x = tape.constant(Tensor::from_rows(&rows)?);
        let h = self.rho.forward(tape, vars, x)?;
        let pooled = tape.mean_rows(h)?;
        Ok(tape.l2_normalize(pooled))
    }
}

impl Module for QueryEncoder {
    fn parameters(&self) -> Vec<&crate::diffmath::Parameter> {
        self.rho.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut crate::diffmath::Parameter> {
        self.rho.parameters_mut()
    }
}

/// Instances ordered by their little-endian byte encoding.
pub fn sort_instances(probe: &[Vec<f64>]) -> Vec<&Vec<f64>> {
    let mut refs: Vec<&Vec<f64>> = probe.iter().collect();
    refs.sort_by_cached_key(|x| x.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>());
    refs
}

pub fn encode_query(probe: &[Vec<f64>], enc: &QueryEncoder) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = enc.bind(&mut tape);
    let q = enc.forward(&mut tape, &vars, probe)?;
    Ok(tape.value(q).data().to_vec())
}

/// Fixed Gaussian probe batch, `batch x feature_dim`.
pub fn probe_noise(seed_value: u64, batch: usize, feature_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed_value, "probe-noise", &[]);
    (0..batch)
        .map(|_| {
            (0..feature_dim)
                .map(|_| to_f32_exact(StandardNormal.sample(&mut rng)))
                .collect()
        })
        .collect()
}

/// The network's outputs on `noise`, concatenated row by row and then
/// zero-padded or truncated to `dim`.
pub fn functional_embedding(
    net: &NetworkRecord,
    noise: &[Vec<f64>],
    dim: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(dim);
    for x in noise {
        if x.len() != net.input_dim() {
            return Err(Error::shape(
                "functional_embedding",
                format!(
                    "noise has {} features, network {} expects {}",
                    x.len(),
                    net.id,
                    net.input_dim()
                ),
            ));
        }
        out.extend(net.forward(x));
        if out.len() >= dim {
            break;
        }
    }
    out.resize(dim, 0.0);
    Ok(out)
}

/// Normalized `[v_t; v_f]` with the halves dropped by `mode` set to zero.
pub fn model_input(
    topology: &TopologyDescriptor,
    functional: Option<&[f64]>,
    functional_dim: usize,
    mode: EmbeddingMode,
) -> Vec<f64> {
    let mut v = if mode == EmbeddingMode::FunctionalOnly {
        vec![0.0; DESCRIPTOR_LEN]
    } else {
        topology.scaled()
    };
    match (mode, functional) {
        (EmbeddingMode::TopologyOnly, _) | (_, None) => {
            v.resize(DESCRIPTOR_LEN + functional_dim, 0.0)
        }
        (_, Some(f)) => {
            v.extend_from_slice(&f[..functional_dim.min(f.len())]);
            v.resize(DESCRIPTOR_LEN + functional_dim, 0.0);
        }
    }
    let n = norm(&v) + NORM_EPS;
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEncoder {
    pub sigma: Projection,
    pub noise: Vec<Vec<f64>>,
    pub functional_dim: usize,
    pub mode: EmbeddingMode,
}

impl ModelEncoder {
    pub fn new(cfg: &EncoderConfig) -> Self {
        let mut rng = seed::rng(cfg.init_seed, "model-encoder", &[]);
        Self {
            sigma: Projection::new(
                cfg.model_input_dim(),
                cfg.embed_dim,
                cfg.hidden_width,
                &mut rng,
            ),
            noise: probe_noise(cfg.noise_seed, cfg.noise_batch, cfg.feature_dim),
            functional_dim: cfg.functional_dim,
            mode: cfg.mode,
        }
    }

    /// Encoder input for a fitted network.
    pub fn input_for(&self, net: &NetworkRecord) -> Result<Vec<f64>> {
        let vf = if self.mode == EmbeddingMode::TopologyOnly {
            None
        } else {
            Some(functional_embedding(net, &self.noise, self.functional_dim)?)
        };
        Ok(model_input(
            &net.topology,
            vf.as_deref(),
            self.functional_dim,
            self.mode,
        ))
    }

    /// Encoder input using the network's unfitted head.
    pub fn input_for_generic(&self, net: &NetworkRecord) -> Result<Vec<f64>> {
        self.input_for(&net.generic())
    }

    /// Project precomputed inputs: `b x (45 + F_fun) -> b x d`, rows unit norm.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], inputs: &[Vec<f64>]) -> Result<Var> {
        let x = tape.constant(Tensor::from_rows(inputs)?);
        if tape.value(x).cols() != self.sigma.input_dim() {
            return Err(Error::shape(
                "encode_model",
                format!(
                    "input has {} columns, projection expects {}",
                    tape.value(x).cols(),
                    self.sigma.input_dim()
                ),
            ));
        }
        let h = self.sigma.forward(tape, vars, x)?;
        Ok(tape.l2_normalize(h))
    }

    pub fn embed_inputs(&self, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let m = self.forward(&mut tape, &vars, inputs)?;
        let t = tape.value(m);
        Ok((0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect())
    }
}

impl Module for ModelEncoder {
    fn parameters(&self) -> Vec<&crate::diffmath::Parameter> {
        self.sigma.parameters()
    }

    fn parameters_mut(&mut self) -> Vec<&mut crate::diffmath::Parameter> {
        self.sigma.parameters_mut()
    }
}

pub fn encode_model(net: &NetworkRecord, enc: &ModelEncoder) -> Result<Vec<f64>> {
    let input = enc.input_for(net)?;
    Ok(enc.embed_inputs(&[input])?.remove(0))
}

/// Embedding from the descriptor alone, functional half zeroed.
pub fn encode_model_topology_only(
    topology: &TopologyDescriptor,
    enc: &ModelEncoder,
) -> Result<Vec<f64>> {
    let input = model_input(
        topology,
        None,
        enc.functional_dim,
        EmbeddingMode::TopologyOnly,
    );
    Ok(enc.embed_inputs(&[input])?.remove(0))
}
