//! Dense multilayer perceptrons and the Fourier-feature input embedding.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::error::{check_dim, Error, Result};
use crate::rng::{mix_seed, SeededRng};

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Selu,
    Softplus { beta: f64 },
    LeakyRelu { slope: f64 },
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
            Activation::Softplus { beta } => {
                let bx = beta * x;
                if bx > 0.0 {
                    x + (-bx).exp().ln_1p() / beta
                } else {
                    bx.exp().ln_1p() / beta
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Linear => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Softplus { beta } => {
                let bx = beta * x;
                if bx >= 0.0 {
                    1.0 / (1.0 + (-bx).exp())
                } else {
                    let e = bx.exp();
                    e / (1.0 + e)
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

/// Weight initialisation for one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `1/sqrt(fan_in)`, zero bias.
    FanIn,
    /// Normal with the given std, zero bias.
    Normal(f64),
    Zeros,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[out × in]`
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Layer {
    pub fn new(inp: usize, out: usize, activation: Activation, dropout: f64, init: Init, rng: &mut SeededRng) -> Self {
        let weight = match init {
            Init::FanIn => {
                let std = 1.0 / (inp as f64).sqrt();
                Matrix::from_vec(out, inp, (0..out * inp).map(|_| std * rng.normal()).collect())
            }
            Init::Normal(std) => {
                Matrix::from_vec(out, inp, (0..out * inp).map(|_| std * rng.normal()).collect())
            }
            Init::Zeros => Matrix::zeros(out, inp),
        };
        Layer {
            weight,
            bias: vec![0.0; out],
            activation,
            dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }
}

/// Parameter handles of an [`Mlp`] registered on a tape.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
}

impl MlpVars {
    pub fn all(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Layer-by-layer description used to build an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

impl Mlp {
    /// Builds a network with fan-in initialised hidden layers and a linear
    /// output layer initialised by `output_init`.
    pub fn from_spec(spec: &MlpSpec, output_init: Init, seed: u64) -> Result<Self> {
        if spec.input_dim == 0 || spec.output_dim == 0 {
            return Err(Error::invalid("network dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&spec.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let mut rng = SeededRng::new(seed);
        let mut layers = Vec::with_capacity(spec.hidden.len() + 1);
        let mut inp = spec.input_dim;
        for &h in &spec.hidden {
            layers.push(Layer::new(inp, h, spec.hidden_activation, spec.dropout, Init::FanIn, &mut rng));
            inp = h;
        }
        layers.push(Layer::new(inp, spec.output_dim, Activation::Linear, 0.0, output_init, &mut rng));
        Ok(Mlp { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_dim(pair[0].output_dim(), pair[1].input_dim())?;
        }
        for l in &layers {
            check_dim(l.output_dim(), l.bias.len())?;
            if !l.weight.all_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::NonFinite("network weights".into()));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::output_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights then bias of each layer, weights row-major.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`Mlp::flat_params`]; returns the number of values consumed.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<usize> {
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            let nb = l.bias.len();
            if flat.len() < off + nw + nb {
                return Err(Error::DimensionMismatch {
                    expected: off + nw + nb,
                    got: flat.len(),
                });
            }
            l.weight.data.copy_from_slice(&flat[off..off + nw]);
            l.bias.copy_from_slice(&flat[off + nw..off + nw + nb]);
            off += nw + nb;
        }
        Ok(off)
    }

    pub fn register(&self, tape: &mut Tape) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.param(l.weight.clone()));
            biases.push(tape.param(Matrix::row_vector(&l.bias)));
        }
        MlpVars { weights, biases }
    }

    /// Registers the weights as constants (no gradient).
    pub fn register_frozen(&self, tape: &mut Tape) -> MlpVars {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            weights.push(tape.constant(l.weight.clone()));
            biases.push(tape.constant(Matrix::row_vector(&l.bias)));
        }
        MlpVars { weights, biases }
    }

    /// Batched forward pass on the tape; `x` is `[batch × input_dim]`.
    ///
    /// In training mode each hidden unit is dropped independently with the
    /// layer's dropout rate and survivors are rescaled by `1/(1-p)`; the masks
    /// are a pure function of `seed`.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &MlpVars, x: Var, mode: Mode, seed: u64) -> Result<Var> {
        check_dim(self.input_dim(), tape.value(x).cols)?;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.matmul_nt(h, vars.weights[i]);
            h = tape.add_row(h, vars.biases[i]);
            h = tape.activation(h, l.activation);
            if mode == Mode::Train && l.dropout > 0.0 {
                let (r, c) = tape.value(h).shape();
                let mut rng = SeededRng::stream(mix_seed(seed, i as u64), 0xD809);
                let keep = 1.0 / (1.0 - l.dropout);
                let mask = Matrix::from_vec(
                    r,
                    c,
                    (0..r * c)
                        .map(|_| if rng.bernoulli(l.dropout) { 0.0 } else { keep })
                        .collect(),
                );
                h = tape.mul_const(h, mask);
            }
            if !tape.value(h).all_finite() {
                return Err(Error::NonFinite(format!("activation of layer {i}")));
            }
        }
        Ok(h)
    }

    pub fn forward_batch(&self, x: &Matrix, mode: Mode, seed: u64) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let y = self.forward_tape(&mut tape, &vars, xv, mode, seed)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward(&self, x: &[f64], mode: Mode, seed: u64) -> Result<Vec<f64>> {
        Ok(self.forward_batch(&Matrix::row_vector(x), mode, seed)?.data)
    }
}

/// Random Fourier features with a learnable spectral matrix and scale.
///
/// Maps `x` to `[sin(s·Wx), cos(s·Wx), x]`, so the output width is `2m + in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierFeatureEmbedding {
    /// `[m × in]`
    pub spectral_weights: Matrix,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct EmbeddingVars {
    pub spectral: Var,
    pub scale: Var,
}

impl FourierFeatureEmbedding {
    pub fn new(input_dim: usize, features: usize, seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, 0xF0F0);
        FourierFeatureEmbedding {
            spectral_weights: Matrix::from_vec(features, input_dim, rng.normal_vec(features * input_dim)),
            scale: 1.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spectral_weights.cols
    }

    pub fn output_dim(&self) -> usize {
        2 * self.spectral_weights.rows + self.spectral_weights.cols
    }

    pub fn num_params(&self) -> usize {
        self.spectral_weights.len() + 1
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.spectral_weights.data.clone();
        v.push(self.scale);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<usize> {
        let n = self.spectral_weights.len();
        if flat.len() < n + 1 {
            return Err(Error::DimensionMismatch {
                expected: n + 1,
                got: flat.len(),
            });
        }
        self.spectral_weights.data.copy_from_slice(&flat[..n]);
        self.scale = flat[n];
        Ok(n + 1)
    }

    pub fn register(&self, tape: &mut Tape) -> EmbeddingVars {
        EmbeddingVars {
            spectral: tape.param(self.spectral_weights.clone()),
            scale: tape.param(Matrix::scalar(self.scale)),
        }
    }

    pub fn register_frozen(&self, tape: &mut Tape) -> EmbeddingVars {
        EmbeddingVars {
            spectral: tape.constant(self.spectral_weights.clone()),
            scale: tape.constant(Matrix::scalar(self.scale)),
        }
    }

    pub fn forward_tape(&self, tape: &mut Tape, vars: &EmbeddingVars, x: Var) -> Result<Var> {
        check_dim(self.input_dim(), tape.value(x).cols)?;
        let z = tape.matmul_nt(x, vars.spectral);
        let z = tape.mul_scalar(z, vars.scale);
        let s = tape.sin(z);
        let c = tape.cos(z);
        Ok(tape.hstack(&[s, c, x]))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.register_frozen(&mut tape);
        let xv = tape.constant(Matrix::row_vector(x));
        let y = self.forward_tape(&mut tape, &vars, xv)?;
        Ok(tape.value(y).data.clone())
    }
}

/// Evaluates an optional embedding followed by a network.
pub fn forward(net: &Mlp, embedding: Option<&FourierFeatureEmbedding>, x: &[f64], mode: Mode, seed: u64) -> Result<Vec<f64>> {
    match embedding {
        Some(e) => net.forward(&e.forward(x)?, mode, seed),
        None => net.forward(x, mode, seed),
    }
}
