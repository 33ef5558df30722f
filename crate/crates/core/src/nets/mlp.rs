use rand::Rng;

use super::{Bound, NetError, ParamGroup};
use crate::diff::{Tape, Tensor, Var};

/// Affine layer `x * w + b` with `w: [in, out]` and `b: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    /// Uniform init in `±1/sqrt(fan_in)` for weights and bias.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Tensor::uniform(&[fan_in, fan_out], bound, rng),
            b: Tensor::uniform(&[fan_out], bound, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: Tensor::zeros(&[fan_in, fan_out]),
            b: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> LinearVars {
        LinearVars {
            w: tape.leaf(self.w.clone(), trainable),
            b: tape.leaf(self.b.clone(), trainable),
        }
    }
}

impl LinearVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let h = tape.matmul(x, self.w)?;
        Ok(tape.add_row(h, self.b)?)
    }
}

/// Feed-forward stack with relu between layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Debug, Clone)]
pub struct MlpVars {
    pub layers: Vec<LinearVars>,
}

impl Mlp {
    /// `sizes = [input, hidden.., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(!sizes.is_empty(), "an mlp needs an input size");
        let layers = sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Self {
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Linear::fan_out));
        s
    }

    /// Zeroes the output layer, making the network output identically zero.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        *last = Linear::zeros(last.fan_in(), last.fan_out());
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> MlpVars {
        MlpVars {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Relu after every layer, including the last.
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var, NetError> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, h)?;
            h = tape.relu(h);
        }
        Ok(h)
    }
}

impl ParamGroup for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.w, &l.b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.w"), format!("layer{i}.b")])
            .collect()
    }
}

impl Bound for MlpVars {
    fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

impl MlpVars {
    /// Rebuilds from a flat var list in [`ParamGroup::params`] order.
    pub fn from_vars(vars: &[Var]) -> Self {
        Self {
            layers: vars.chunks(2).map(|c| LinearVars { w: c[0], b: c[1] }).collect(),
        }
    }
}
