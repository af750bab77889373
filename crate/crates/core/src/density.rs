//! Gaussian density models over curve space and reduced field space.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::Matrix;
use crate::numeric::{interp_linear, interp_slope};
use crate::rng::SeededRng;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const DEFAULT_CURVE_SIGMA_FRACTION: f64 = 0.02;
pub const DEFAULT_REDUCED_SIGMA_FRACTION: f64 = 0.05;
pub const DEFAULT_SAMPLES_PER_EPOCH: usize = 2048;

/// One measured stress–strain curve at a fixed condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSnapshot {
    pub condition: f64,
    pub strains: Vec<f64>,
    pub stresses: Vec<f64>,
}

impl CurveSnapshot {
    pub fn new(condition: f64, strains: Vec<f64>, stresses: Vec<f64>) -> Result<Self> {
        check_dim(strains.len(), stresses.len())?;
        if strains.len() < 4 {
            return Err(Error::invalid(format!(
                "curve at condition {condition} has {} points, need at least 4",
                strains.len()
            )));
        }
        if strains.iter().chain(&stresses).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("curve at condition {condition}")));
        }
        if strains.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "strains of the curve at condition {condition} are not strictly increasing"
            )));
        }
        Ok(CurveSnapshot {
            condition,
            strains,
            stresses,
        })
    }

    pub fn strain_range(&self) -> (f64, f64) {
        (self.strains[0], self.strains[self.strains.len() - 1])
    }

    pub fn stress_range(&self) -> f64 {
        let (lo, hi) = min_max(&self.stresses);
        hi - lo
    }
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Piecewise-linear stress of `curve` at each grid strain.
pub fn resample_to_grid(curve: &CurveSnapshot, grid: &[f64]) -> Result<Vec<f64>> {
    grid.iter()
        .map(|&e| {
            interp_linear(&curve.strains, &curve.stresses, e).ok_or_else(|| {
                Error::OutOfRange(format!(
                    "grid strain {e} outside the support of the curve at condition {}",
                    curve.condition
                ))
            })
        })
        .collect()
}

/// Uniform in strain over `strain_range`, Gaussian in stress about the
/// interpolated mean curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianCurveDensity {
    pub strain_grid: Vec<f64>,
    pub mean_stress: Vec<f64>,
    pub sigma_stress: f64,
    pub strain_range: (f64, f64),
}

impl GaussianCurveDensity {
    pub fn new(strain_grid: Vec<f64>, mean_stress: Vec<f64>, sigma_stress: f64) -> Result<Self> {
        check_dim(strain_grid.len(), mean_stress.len())?;
        if strain_grid.len() < 2 || strain_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("strain grid must be strictly increasing with ≥ 2 points"));
        }
        if !(sigma_stress > 0.0 && sigma_stress.is_finite()) {
            return Err(Error::invalid("sigma_stress must be positive"));
        }
        let strain_range = (strain_grid[0], strain_grid[strain_grid.len() - 1]);
        Ok(GaussianCurveDensity {
            strain_grid,
            mean_stress,
            sigma_stress,
            strain_range,
        })
    }

    /// Density over the curve's own support with the default sigma.
    pub fn from_curve(curve: &CurveSnapshot, sigma: Option<f64>) -> Result<Self> {
        let sigma = sigma.unwrap_or(DEFAULT_CURVE_SIGMA_FRACTION * curve.stress_range());
        Self::new(curve.strains.clone(), curve.stresses.clone(), sigma)
    }

    pub fn mean_at(&self, strain: f64) -> Option<f64> {
        interp_linear(&self.strain_grid, &self.mean_stress, strain)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_grad(x).0
    }

    pub fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (strain, stress) = (x[0], x[1]);
        let Some(mean) = self.mean_at(strain) else {
            return (0.0, vec![0.0, 0.0]);
        };
        let (lo, hi) = self.strain_range;
        let s = self.sigma_stress;
        let z = (stress - mean) / s;
        let rho = INV_SQRT_2PI / (s * (hi - lo)) * (-0.5 * z * z).exp();
        let d_stress = -rho * z / s;
        let slope = interp_slope(&self.strain_grid, &self.mean_stress, strain);
        (rho, vec![-d_stress * slope, d_stress])
    }

    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        let mut rng = SeededRng::new(seed);
        let (lo, hi) = self.strain_range;
        let mut out = Matrix::zeros(n, 2);
        for r in 0..n {
            let e = rng.uniform_in(lo, hi);
            let m = self.mean_at(e).expect("strain drawn inside the range");
            let row = out.row_mut(r);
            row[0] = e;
            row[1] = m + self.sigma_stress * rng.normal();
        }
        out
    }
}

/// Isotropic Gaussian in reduced coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedGaussianDensity {
    pub mean: Vec<f64>,
    pub sigma: f64,
}

impl ReducedGaussianDensity {
    pub fn new(mean: Vec<f64>, sigma: f64) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::invalid("reduced density needs d ≥ 1"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma must be positive"));
        }
        Ok(ReducedGaussianDensity { mean, sigma })
    }

    pub fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let d = self.mean.len() as f64;
        let s2 = self.sigma * self.sigma;
        let r2: f64 = x.iter().zip(&self.mean).map(|(a, m)| (a - m) * (a - m)).sum();
        let rho = (2.0 * std::f64::consts::PI * s2).powf(-0.5 * d) * (-0.5 * r2 / s2).exp();
        let grad = x.iter().zip(&self.mean).map(|(a, m)| -rho * (a - m) / s2).collect();
        (rho, grad)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        field_to_samples(&self.mean, self.sigma, n, seed)
    }
}

/// A density the transport model can evaluate and sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DensityModel {
    Curve(GaussianCurveDensity),
    Reduced(ReducedGaussianDensity),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Curve(_) => 2,
            DensityModel::Reduced(r) => r.mean.len(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_grad(x).0
    }

    pub fn eval_with_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        match self {
            DensityModel::Curve(c) => c.eval_with_grad(x),
            DensityModel::Reduced(r) => r.eval_with_grad(x),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Matrix {
        match self {
            DensityModel::Curve(c) => c.sample(n, seed),
            DensityModel::Reduced(r) => r.sample(n, seed),
        }
    }
}

/// `n` draws of `mean + σ·z` with standard normal `z`.
pub fn field_to_samples(mean: &[f64], sigma: f64, n: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let d = mean.len();
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        for (o, &m) in out.row_mut(r).iter_mut().zip(mean) {
            *o = m + sigma * rng.normal();
        }
    }
    out
}
