//! Fully connected layers bound onto a [`Tape`].

use rand::Rng as _;

use crate::diffmath::{Parameter, Tape, Tensor, Var};
use crate::error::Result;
use crate::seed;

/// `y = x W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    /// Uniform `(-1/sqrt(in), 1/sqrt(in))` initialization.
    pub fn new(input: usize, output: usize, rng: &mut seed::Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let mut draw =
            |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = Tensor::new(vec![input, output], draw(input * output)).expect("sized");
        let b = Tensor::row(draw(output));
        Self {
            w: Parameter::new(w),
            b: Parameter::new(b),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Parameter::new(Tensor::zeros(&[input, output])),
            b: Parameter::new(Tensor::zeros(&[1, output])),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.value.cols()
    }

    pub fn forward(tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        tape.linear(x, vars[0], vars[1])
    }
}

/// A set of parameters that can be placed on a tape in a fixed order.
pub trait Module {
    fn parameters(&self) -> Vec<&Parameter>;
    fn parameters_mut(&mut self) -> Vec<&mut Parameter>;

    /// One leaf per parameter, in `parameters()` order.
    fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }

    fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.value.len()).sum()
    }
}

impl Module for Dense {
    fn parameters(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.b]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.b]
    }
}

/// One or two dense layers with a rectifier in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub layers: Vec<Dense>,
}

impl Projection {
    pub fn new(input: usize, output: usize, hidden: usize, rng: &mut seed::Rng) -> Self {
        let layers = if hidden == 0 {
            vec![Dense::new(input, output, rng)]
        } else {
            vec![
                Dense::new(input, hidden, rng),
                Dense::new(hidden, output, rng),
            ]
        };
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").output_dim()
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, _) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            h = Dense::forward(tape, &vars[2 * i..2 * i + 2], h)?;
        }
        Ok(h)
    }
}

impl Module for Projection {
    fn parameters(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}
