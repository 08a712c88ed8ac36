//! Accuracy surrogate `S(q, m)`: one rectified hidden layer over `[q; m]`
//! followed by a sigmoid head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffmath::{sigmoid, Parameter, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{Dense, Module};
use crate::seed;

pub const HIDDEN: usize = 256;
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub fc: Dense,
    pub head: Dense,
    pub dropout_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    Deterministic,
    /// Inverted dropout on the hidden layer with the given mask seed.
    Dropout(u64),
}

/// Which half of the predictor input is zeroed at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    None,
    NoQuery,
    NoModel,
}

impl Predictor {
    pub fn new(embed_dim: usize, dropout_p: f64, init_seed: u64) -> Self {
        let mut rng = seed::rng(init_seed, "predictor", &[]);
        Self {
            fc: Dense::new(2 * embed_dim, HIDDEN, &mut rng),
            head: Dense::new(HIDDEN, 1, &mut rng),
            dropout_p,
        }
    }

    pub fn zeros(embed_dim: usize) -> Self {
        Self {
            fc: Dense::zeros(2 * embed_dim, HIDDEN),
            head: Dense::zeros(HIDDEN, 1),
            dropout_p: DEFAULT_DROPOUT,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.fc.input_dim() / 2
    }

    /// Inverted-dropout mask for `rows` hidden activations.
    pub fn dropout_mask(&self, rows: usize, rng: &mut seed::Rng) -> Tensor {
        let keep = 1.0 / (1.0 - self.dropout_p);
        let data = (0..rows * HIDDEN)
            .map(|_| {
                if rng.random::<f64>() < self.dropout_p {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        Tensor::new(vec![rows, HIDDEN], data).expect("sized")
    }

    /// `b x d` query rows and `b x d` model rows to `b x 1` predictions.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        q: Var,
        m: Var,
        mask: Option<Tensor>,
    ) -> Result<Var> {
        let x = tape.concat_cols(q, m)?;
        if tape.value(x).cols() != self.fc.input_dim() {
            return Err(Error::shape(
                "predict",
                format!(
                    "input has {} columns, predictor expects {}",
                    tape.value(x).cols(),
                    self.fc.input_dim()
                ),
            ));
        }
        let h = Dense::forward(tape, &vars[0..2], x)?;
        let mut h = tape.relu(h);
        if let Some(mask) = mask {
            h = tape.mask_mul(h, mask)?;
        }
        let z = Dense::forward(tape, &vars[2..4], h)?;
        Ok(tape.sigmoid(z))
    }

    pub fn predict(&self, q: &[f64], m: &[f64], mode: PredictMode) -> Result<f64> {
        Ok(self.predict_batch(&[q.to_vec()], &[m.to_vec()], mode)?[0])
    }

    pub fn predict_batch(
        &self,
        qs: &[Vec<f64>],
        ms: &[Vec<f64>],
        mode: PredictMode,
    ) -> Result<Vec<f64>> {
        if qs.len() != ms.len() {
            return Err(Error::shape(
                "predict",
                format!("{} queries vs {} models", qs.len(), ms.len()),
            ));
        }
        if qs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let q = tape.constant(Tensor::from_rows(qs)?);
        let m = tape.constant(Tensor::from_rows(ms)?);
        if tape.value(q).cols() != tape.value(m).cols() {
            return Err(Error::shape("predict", "query and model widths differ"));
        }
        let mask = match mode {
            PredictMode::Deterministic => None,
            PredictMode::Dropout(s) => Some(self.dropout_mask(qs.len(), &mut seed::rng_from(s))),
        };
        let out = self.forward(&mut tape, &vars, q, m, mask)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Rectified hidden activations for one `(q, m)` pair.
    pub fn hidden_units(&self, q: &[f64], m: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let x = tape.constant(Tensor::row([q, m].concat()));
        let h = Dense::forward(&mut tape, &vars[0..2], x)?;
        let h = tape.relu(h);
        Ok(tape.value(h).data().to_vec())
    }

    /// Head applied to precomputed hidden units under an optional dropout
    /// mask; matches [`Predictor::predict`] bit for bit.
    pub fn head_output(&self, hidden: &[f64], mask: Option<&[f64]>) -> f64 {
        let w = self.head.w.value.data();
        let mut z = self.head.b.value.data()[0];
        for (k, &h) in hidden.iter().enumerate() {
            let x = match mask {
                Some(m) => h * m[k],
                None => h,
            };
            if x != 0.0 {
                z += x * w[k];
            }
        }
        sigmoid(z)
    }

    /// `n` dropout samples for one pair; sample `i` uses the mask seeded by
    /// `seeds[i]`.
    pub fn dropout_samples(&self, hidden: &[f64], seeds: &[u64]) -> Vec<f64> {
        seeds
            .iter()
            .map(|&s| {
                let mask = self.dropout_mask(1, &mut seed::rng_from(s));
                self.head_output(hidden, Some(mask.data()))
            })
            .collect()
    }

    /// Mean squared error over `(q, m, accuracy)` triples with one input half
    /// optionally zeroed.
    pub fn mse(&self, samples: &[(Vec<f64>, Vec<f64>, f64)], ablation: Ablation) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples for mse"));
        }
        let blank = |v: &Vec<f64>, off: bool| if off { vec![0.0; v.len()] } else { v.clone() };
        let qs: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| blank(&s.0, ablation == Ablation::NoQuery))
            .collect();
        let ms: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| blank(&s.1, ablation == Ablation::NoModel))
            .collect();
        let preds = self.predict_batch(&qs, &ms, PredictMode::Deterministic)?;
        Ok(preds
            .iter()
            .zip(samples)
            .map(|(p, s)| (p - s.2).powi(2))
            .sum::<f64>()
            / samples.len() as f64)
    }
}

impl Module for Predictor {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.fc.w, &self.fc.b, &self.head.w, &self.head.b]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![
            &mut self.fc.w,
            &mut self.fc.b,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }
}

/// `(pred - target)^2` elementwise on the tape.
pub fn surrogate_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    Ok(tape.square(d))
}

pub fn surrogate_loss_value(pred: f64, target: f64) -> f64 {
    (pred - target).powi(2)
}

/// Reorder the first `k` items by descending `score`; ties keep their
/// original relative order.
pub fn rerank_topk<T>(items: &mut [T], k: usize, score: impl Fn(&T) -> f64) -> Result<()> {
    if k < 1 {
        return Err(Error::invalid("rerank K must be at least 1"));
    }
    let k = k.min(items.len());
    let mut keyed: Vec<(f64, usize)> = items[..k].iter().map(&score).zip(0..).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let rank: Vec<usize> = {
        let mut r = vec![0; k];
        for (new, &(_, old)) in keyed.iter().enumerate() {
            r[old] = new;
        }
        r
    };
    let mut i = 0;
    let mut tags: Vec<usize> = rank;
    while i < k {
        let t = tags[i];
        if t == i {
            i += 1;
        } else {
            items.swap(i, t);
            tags.swap(i, t);
        }
    }
    Ok(())
}
