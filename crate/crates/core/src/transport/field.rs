//! The displacement and body-force networks and the coordinate scaler they
//! share.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::mlp::EmbeddingVars;
use crate::nn::{Activation, FourierFeatureEmbedding, Init, Matrix, Mlp, MlpSpec, MlpVars, Mode, Tape, Var};
use crate::rng::mix_seed;

/// Per-dimension affine map between raw data coordinates and the normalized
/// coordinates the networks see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataScaler {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DataScaler {
    pub fn identity(dim: usize) -> Self {
        DataScaler {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Pooled mean and standard deviation of the rows of `samples`.
    pub fn fit(samples: &Matrix) -> Result<Self> {
        let (n, d) = samples.shape();
        if n < 2 {
            return Err(Error::invalid("scaler needs at least two samples"));
        }
        let mut center = vec![0.0; d];
        for r in 0..n {
            for (c, v) in center.iter_mut().zip(samples.row(r)) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), c) in var.iter_mut().zip(samples.row(r)).zip(&center) {
                *s += (v - c) * (v - c);
            }
        }
        let scale = var
            .iter()
            .zip(&center)
            .map(|(s, c)| {
                let sd = (s / (n - 1) as f64).sqrt();
                if sd > 1e-12 * c.abs().max(1.0) {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(DataScaler { center, scale })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn normalize_rows(&self, raw: &Matrix) -> Matrix {
        let mut out = raw.clone();
        for r in 0..out.rows {
            for ((v, c), s) in out.row_mut(r).iter_mut().zip(&self.center).zip(&self.scale) {
                *v = (*v - c) / s;
            }
        }
        out
    }

    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.center)
            .zip(&self.scale)
            .map(|((v, c), s)| (v - c) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementArch {
    /// Fourier feature count; `None` feeds `[X, t]` straight into the network.
    pub fourier_features: Option<usize>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub final_init_std: f64,
}

impl Default for DisplacementArch {
    fn default() -> Self {
        DisplacementArch {
            fourier_features: Some(16),
            hidden: vec![256, 256, 256],
            activation: Activation::Softplus { beta: 10.0 },
            final_init_std: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyForceArch {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
}

impl Default for BodyForceArch {
    fn default() -> Self {
        BodyForceArch {
            hidden: vec![300; 7],
            activation: Activation::Selu,
            dropout: 0.1,
        }
    }
}

/// `u(X, t)` in normalized coordinates.
///
/// With `hard_identity` the network output is multiplied by `t`, so
/// `u(X, 0) = 0` holds exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub embedding: Option<FourierFeatureEmbedding>,
    pub net: Mlp,
    pub output_scales: Vec<f64>,
    pub hard_identity: bool,
}

#[derive(Debug, Clone)]
pub struct DisplacementVars {
    embedding: Option<EmbeddingVars>,
    net: MlpVars,
    output_scales: Var,
}

impl DisplacementVars {
    /// Trainable variables in [`DisplacementField::flat_params`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut v = Vec::new();
        if let Some(e) = &self.embedding {
            v.push(e.spectral);
            v.push(e.scale);
        }
        v.extend(self.net.all());
        v.push(self.output_scales);
        v
    }
}

impl DisplacementField {
    pub fn new(dim: usize, arch: &DisplacementArch, hard_identity: bool, seed: u64) -> Result<Self> {
        let embedding = arch
            .fourier_features
            .map(|m| FourierFeatureEmbedding::new(dim + 1, m, mix_seed(seed, 1)));
        let input_dim = embedding.as_ref().map_or(dim + 1, FourierFeatureEmbedding::output_dim);
        let spec = MlpSpec {
            input_dim,
            hidden: arch.hidden.clone(),
            output_dim: dim,
            hidden_activation: arch.activation,
            dropout: 0.0,
        };
        let init = if arch.final_init_std > 0.0 {
            Init::Normal(arch.final_init_std)
        } else {
            Init::Zeros
        };
        Ok(DisplacementField {
            embedding,
            net: Mlp::from_spec(&spec, init, mix_seed(seed, 2))?,
            output_scales: vec![1.0; dim],
            hard_identity,
        })
    }

    pub fn dim(&self) -> usize {
        self.output_scales.len()
    }

    pub fn num_params(&self) -> usize {
        self.embedding.as_ref().map_or(0, FourierFeatureEmbedding::num_params) + self.net.num_params() + self.dim()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.embedding.as_ref().map_or_else(Vec::new, FourierFeatureEmbedding::flat_params);
        v.extend(self.net.flat_params());
        v.extend_from_slice(&self.output_scales);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<usize> {
        let mut off = 0;
        if let Some(e) = &mut self.embedding {
            off += e.set_flat_params(flat)?;
        }
        off += self.net.set_flat_params(&flat[off..])?;
        let d = self.dim();
        if flat.len() < off + d {
            return Err(Error::DimensionMismatch {
                expected: off + d,
                got: flat.len(),
            });
        }
        self.output_scales.copy_from_slice(&flat[off..off + d]);
        Ok(off + d)
    }

    pub fn register(&self, tape: &mut Tape, trainable: bool) -> DisplacementVars {
        let scales = Matrix::row_vector(&self.output_scales);
        if trainable {
            DisplacementVars {
                embedding: self.embedding.as_ref().map(|e| e.register(tape)),
                net: self.net.register(tape),
                output_scales: tape.param(scales),
            }
        } else {
            DisplacementVars {
                embedding: self.embedding.as_ref().map(|e| e.register_frozen(tape)),
                net: self.net.register_frozen(tape),
                output_scales: tape.constant(scales),
            }
        }
    }

    /// Evaluates `u` on rows `[X_norm, t]`.
    pub fn forward_tape(&self, tape: &mut Tape, vars: &DisplacementVars, input: Var) -> Result<Var> {
        check_dim(self.dim() + 1, tape.value(input).cols)?;
        let feats = match (&self.embedding, &vars.embedding) {
            (Some(e), Some(ev)) => e.forward_tape(tape, ev, input)?,
            _ => input,
        };
        let out = self.net.forward_tape(tape, &vars.net, feats, Mode::Eval, 0)?;
        let mut u = tape.mul_row(out, vars.output_scales);
        if self.hard_identity {
            let t = tape.slice_cols(input, self.dim(), 1);
            u = tape.mul_col(u, t);
        }
        Ok(u)
    }

    pub fn forward(&self, x_norm: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut row = x_norm.to_vec();
        row.push(t);
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let inp = tape.constant(Matrix::row_vector(&row));
        let u = self.forward_tape(&mut tape, &vars, inp)?;
        Ok(tape.value(u).data.clone())
    }
}

/// `F_b(x, t)` in normalized coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyForceField {
    pub net: Mlp,
}

impl BodyForceField {
    pub fn new(dim: usize, arch: &BodyForceArch, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            input_dim: dim + 1,
            hidden: arch.hidden.clone(),
            output_dim: dim,
            hidden_activation: arch.activation,
            dropout: arch.dropout,
        };
        Ok(BodyForceField {
            net: Mlp::from_spec(&spec, Init::FanIn, seed)?,
        })
    }

    /// A field that is identically zero.
    pub fn zero(dim: usize) -> Self {
        BodyForceField {
            net: Mlp {
                layers: vec![crate::nn::Layer {
                    weight: Matrix::zeros(dim, dim + 1),
                    bias: vec![0.0; dim],
                    activation: Activation::Linear,
                    dropout: 0.0,
                }],
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn forward(&self, x_norm: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut row = x_norm.to_vec();
        row.push(t);
        self.net.forward(&row, Mode::Eval, 0)
    }
}

