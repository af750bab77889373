use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;

/// Functional principal components of a set of curves on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaModel {
    pub strain_grid: Vec<f64>,
    /// One orthonormal mode per row, each of grid length.
    pub modes: Vec<Vec<f64>>,
    /// `coefficients[curve][mode]`.
    pub coefficients: Vec<Vec<f64>>,
    pub column_mean: Vec<f64>,
    /// Variance share of every singular direction, descending.
    pub variance_ratio: Vec<f64>,
}

impl FpcaModel {
    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn grid_len(&self) -> usize {
        self.strain_grid.len()
    }

    /// `column_mean + Σ a_k Φ_k`.
    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.num_modes(), coeffs.len())?;
        let mut out = self.column_mean.clone();
        for (mode, a) in self.modes.iter().zip(coeffs) {
            for (o, p) in out.iter_mut().zip(mode) {
                *o += a * p;
            }
        }
        Ok(out)
    }

    /// Keeps only the leading `r` modes.
    pub fn truncated(&self, r: usize) -> Result<Self> {
        if r > self.num_modes() {
            return Err(Error::invalid(format!("cannot keep {r} of {} modes", self.num_modes())));
        }
        Ok(FpcaModel {
            strain_grid: self.strain_grid.clone(),
            modes: self.modes[..r].to_vec(),
            coefficients: self.coefficients.iter().map(|c| c[..r].to_vec()).collect(),
            column_mean: self.column_mean.clone(),
            variance_ratio: self.variance_ratio.clone(),
        })
    }
}

/// Centered SVD of `curves` (each of length `strain_grid.len()`), keeping the
/// fewest modes whose cumulative variance reaches `variance_threshold`.
///
/// Identical curves carry no variance; that case returns one mode (the first
/// left singular direction) with all-zero coefficients and a zero ratio.
pub fn fit_fpca(strain_grid: &[f64], curves: &[Vec<f64>], variance_threshold: f64) -> Result<FpcaModel> {
    let m = strain_grid.len();
    let n = curves.len();
    if n < 2 {
        return Err(Error::invalid("functional PCA needs at least two curves"));
    }
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::OutOfRange(format!("variance threshold {variance_threshold}")));
    }
    for c in curves {
        check_dim(m, c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve values".into()));
        }
    }
    let column_mean: Vec<f64> = (0..m)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / n as f64)
        .collect();
    let y = DMatrix::from_fn(m, n, |i, j| curves[j][i] - column_mean[i]);
    let svd = y.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sv = svd.singular_values;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let variance_ratio: Vec<f64> = sv
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    let scale = column_mean.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let degenerate = sv.is_empty() || sv[0] <= 1e-12 * scale * ((m * n) as f64).sqrt();
    let r = if degenerate {
        1
    } else {
        let mut cum = 0.0;
        let mut r = variance_ratio.len();
        for (k, v) in variance_ratio.iter().enumerate() {
            cum += v;
            if cum >= variance_threshold - 1e-12 {
                r = k + 1;
                break;
            }
        }
        r
    };
    let modes: Vec<Vec<f64>> = (0..r)
        .map(|k| {
            let mut mode: Vec<f64> = (0..m).map(|i| u[(i, k)]).collect();
            let pivot = mode.iter().copied().fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
            if pivot < 0.0 {
                mode.iter_mut().for_each(|v| *v = -*v);
            }
            mode
        })
        .collect();
    let coefficients = curves
        .iter()
        .map(|c| {
            modes
                .iter()
                .map(|mode| {
                    if degenerate {
                        0.0
                    } else {
                        mode.iter().zip(c).zip(&column_mean).map(|((p, y), mu)| p * (y - mu)).sum()
                    }
                })
                .collect()
        })
        .collect();
    Ok(FpcaModel {
        strain_grid: strain_grid.to_vec(),
        modes,
        coefficients,
        column_mean,
        variance_ratio,
    })
}
