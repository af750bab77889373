//! PCA reduction of high-dimensional fields.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::Matrix;

pub const DEFAULT_REDUCED_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    pub data_mean: Vec<f64>,
    /// `[d × D]`, orthonormal rows.
    pub components: Matrix,
    pub singular_values: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
}

/// Fits the top-`d` principal directions of `samples` (`[n × D]`).
///
/// Each component is signed so that its largest-magnitude entry is positive.
pub fn fit_pca(samples: &Matrix, d: usize) -> Result<PcaBasis> {
    let (n, dim) = samples.shape();
    if d == 0 || d > n.min(dim) {
        return Err(Error::invalid(format!(
            "cannot keep {d} components from {n} samples of dimension {dim}"
        )));
    }
    if n <= d {
        return Err(Error::invalid("PCA needs more samples than components"));
    }
    if !samples.all_finite() {
        return Err(Error::NonFinite("PCA samples".into()));
    }
    let mut mean = vec![0.0; dim];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(samples.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |r, c| samples.get(r, c) - mean[c]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sv = svd.singular_values;
    let total: f64 = sv.iter().map(|s| s * s).sum();
    let mut components = Matrix::zeros(d, dim);
    for k in 0..d {
        let row = components.row_mut(k);
        for (c, o) in row.iter_mut().enumerate() {
            *o = v_t[(k, c)];
        }
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let singular_values: Vec<f64> = sv.iter().take(d).copied().collect();
    let tol = sv[0].max(f64::MIN_POSITIVE) * 1e-12 * (n.max(dim) as f64);
    let rank = sv.iter().filter(|&&s| s > tol).count();
    if rank < d {
        warn!("sample rank {rank} is below the requested {d} components; trailing components are arbitrary");
    }
    let explained_variance_ratio = singular_values
        .iter()
        .map(|s| if total > 0.0 { s * s / total } else { 0.0 })
        .collect();
    Ok(PcaBasis {
        data_mean: mean,
        components,
        singular_values,
        explained_variance_ratio,
    })
}

impl PcaBasis {
    pub fn reduced_dim(&self) -> usize {
        self.components.rows
    }

    pub fn full_dim(&self) -> usize {
        self.data_mean.len()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.full_dim(), x.len())?;
        Ok((0..self.reduced_dim())
            .map(|k| {
                self.components
                    .row(k)
                    .iter()
                    .zip(x.iter().zip(&self.data_mean))
                    .map(|(c, (v, m))| c * (v - m))
                    .sum()
            })
            .collect())
    }

    pub fn reconstruct(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.reduced_dim(), coeffs.len())?;
        let mut out = self.data_mean.clone();
        for (k, &a) in coeffs.iter().enumerate() {
            for (o, c) in out.iter_mut().zip(self.components.row(k)) {
                *o += a * c;
            }
        }
        Ok(out)
    }

    /// Norm of the part of `x − mean` outside the basis span, absolute and
    /// relative to `‖x − mean‖`.
    pub fn subspace_residual(&self, x: &[f64]) -> Result<(f64, f64)> {
        let back = self.reconstruct(&self.project(x)?)?;
        let res: f64 = x.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = x
            .iter()
            .zip(&self.data_mean)
            .map(|(a, m)| (a - m) * (a - m))
            .sum::<f64>()
            .sqrt();
        Ok((res, if norm > 0.0 { res / norm } else { 0.0 }))
    }
}
