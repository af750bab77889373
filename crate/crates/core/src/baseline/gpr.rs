use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const GRID_POINTS: usize = 20;
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Squared-exponential kernel hyperparameters, length scale in standardized
/// input units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl GprHyper {
    fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.length_scale > 0.0 && self.signal_variance > 0.0 && ok(self.length_scale) && ok(self.noise_variance)) {
            return Err(Error::OutOfRange(format!("kernel hyperparameters {self:?}")));
        }
        Ok(())
    }

    pub fn kernel(&self, a: f64, b: f64) -> f64 {
        let r = (a - b) / self.length_scale;
        self.signal_variance * (-0.5 * r * r).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HyperChoice {
    Fixed(GprHyper),
    /// Log-marginal-likelihood search over a log-spaced grid.
    Optimize,
}

/// Zero-mean Gaussian-process regressor on a scalar input.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GprModel {
    pub train_inputs: Vec<f64>,
    pub train_targets: Vec<f64>,
    pub hyper: GprHyper,
    /// Standardization `(T − center) / scale` applied to every input.
    pub input_center: f64,
    pub input_scale: f64,
    /// Jitter added to the diagonal on top of the noise variance.
    pub jitter: f64,
    pub log_marginal_likelihood: f64,
    #[serde(skip)]
    cache: Option<Factor>,
}

#[derive(Debug, Clone)]
struct Factor {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

fn standardize(inputs: &[f64]) -> (f64, f64) {
    let n = inputs.len() as f64;
    let mean = inputs.iter().sum::<f64>() / n;
    let var = inputs.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    (mean, if sd > 0.0 { sd } else { 1.0 })
}

fn factorize(z: &[f64], y: &[f64], hyper: &GprHyper) -> Option<(Factor, f64, f64)> {
    let n = z.len();
    let k = DMatrix::from_fn(n, n, |i, j| hyper.kernel(z[i], z[j]));
    for jitter in JITTER_LADDER {
        let diag = hyper.noise_variance + jitter;
        let mut kn = k.clone();
        for i in 0..n {
            kn[(i, i)] += diag;
        }
        if let Some(chol) = Cholesky::new(kn) {
            let yv = DVector::from_column_slice(y);
            let alpha = chol.solve(&yv);
            let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let lml = -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            if lml.is_finite() {
                return Some((Factor { chol, alpha }, jitter, lml));
            }
        }
    }
    None
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

pub fn gpr_fit(inputs: &[f64], targets: &[f64], choice: HyperChoice) -> Result<GprModel> {
    check_dim(inputs.len(), targets.len())?;
    if inputs.is_empty() {
        return Err(Error::invalid("GPR needs at least one training point"));
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("GPR training data".into()));
    }
    let (center, scale) = standardize(inputs);
    let z: Vec<f64> = inputs.iter().map(|t| (t - center) / scale).collect();
    for i in 0..z.len() {
        for j in 0..i {
            if z[i] == z[j] {
                return Err(Error::invalid(format!("duplicate GPR input {}", inputs[i])));
            }
        }
    }
    let candidates: Vec<GprHyper> = match choice {
        HyperChoice::Fixed(h) => {
            h.validate()?;
            vec![h]
        }
        HyperChoice::Optimize => {
            let n = targets.len() as f64;
            let power = targets.iter().map(|a| a * a).sum::<f64>() / n;
            let v = if power > 0.0 { power } else { 1.0 };
            let mut out = Vec::with_capacity(GRID_POINTS.pow(3));
            for &l in &log_grid(0.1, 10.0, GRID_POINTS) {
                for &s in &log_grid(1e-2 * v, 1e2 * v, GRID_POINTS) {
                    for &e in &log_grid(1e-8 * v, 1e-1 * v, GRID_POINTS) {
                        out.push(GprHyper {
                            length_scale: l,
                            signal_variance: s,
                            noise_variance: e,
                        });
                    }
                }
            }
            out
        }
    };
    let mut best: Option<(GprHyper, Factor, f64, f64)> = None;
    for h in candidates {
        if let Some((factor, jitter, lml)) = factorize(&z, targets, &h) {
            if best.as_ref().map_or(true, |b| lml > b.3) {
                best = Some((h, factor, jitter, lml));
            }
        }
    }
    let (hyper, factor, jitter, lml) =
        best.ok_or_else(|| Error::Singular("kernel matrix not positive definite at maximum jitter".into()))?;
    Ok(GprModel {
        train_inputs: inputs.to_vec(),
        train_targets: targets.to_vec(),
        hyper,
        input_center: center,
        input_scale: scale,
        jitter,
        log_marginal_likelihood: lml,
        cache: Some(factor),
    })
}

impl GprModel {
    fn factor(&self) -> Result<std::borrow::Cow<'_, Factor>> {
        if let Some(f) = &self.cache {
            return Ok(std::borrow::Cow::Borrowed(f));
        }
        let z = self.standardized_inputs();
        factorize(&z, &self.train_targets, &self.hyper)
            .map(|(f, _, _)| std::borrow::Cow::Owned(f))
            .ok_or_else(|| Error::Singular("kernel matrix not positive definite at maximum jitter".into()))
    }

    fn standardized_inputs(&self) -> Vec<f64> {
        self.train_inputs
            .iter()
            .map(|t| (t - self.input_center) / self.input_scale)
            .collect()
    }

    /// Predictive mean and variance (noise included) at raw input `t`.
    pub fn predict(&self, t: f64) -> Result<(f64, f64)> {
        let factor = self.factor()?;
        let z = self.standardized_inputs();
        let zs = (t - self.input_center) / self.input_scale;
        let ks = DVector::from_iterator(z.len(), z.iter().map(|&zi| self.hyper.kernel(zs, zi)));
        let mean = ks.dot(&factor.alpha);
        let v = factor.chol.solve(&ks);
        let var = self.hyper.signal_variance + self.hyper.noise_variance - ks.dot(&v);
        Ok((mean, var.max(0.0)))
    }
}

/// Prediction for every input in `ts`.
pub fn gpr_predict(model: &GprModel, ts: &[f64]) -> Result<Vec<(f64, f64)>> {
    ts.iter().map(|&t| model.predict(t)).collect()
}
