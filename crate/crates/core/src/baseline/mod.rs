//! Functional PCA with per-mode Gaussian-process regression against the
//! condition: the comparison method for curve extrapolation.

mod fpca;
mod gpr;

pub use fpca::{fit_fpca, FpcaModel, DEFAULT_VARIANCE_THRESHOLD};
pub use gpr::{gpr_fit, gpr_predict, GprHyper, GprModel, HyperChoice, GRID_POINTS, JITTER_LADDER};

use serde::{Deserialize, Serialize};

use crate::density::{resample_to_grid, CurveSnapshot};
use crate::error::{check_dim, Error, Result};
use crate::numeric::linspace;

pub const DEFAULT_GRID_POINTS: usize = 101;

/// Mean curve `column_mean + Σ â_k Φ_k` at `condition`, with a pointwise std
/// from treating the mode coefficients as independent.
pub fn predict_curve(fpca: &FpcaModel, gprs: &[GprModel], condition: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(fpca.num_modes(), gprs.len())?;
    let mut coeffs = Vec::with_capacity(gprs.len());
    let mut vars = Vec::with_capacity(gprs.len());
    for g in gprs {
        let (m, v) = g.predict(condition)?;
        coeffs.push(m);
        vars.push(v);
    }
    let mean = fpca.reconstruct(&coeffs)?;
    let std = (0..fpca.grid_len())
        .map(|i| {
            fpca.modes
                .iter()
                .zip(&vars)
                .map(|(mode, v)| v * mode[i] * mode[i])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok((mean, std))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub grid_points: usize,
    pub variance_threshold: f64,
    pub hyper: HyperChoice,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            grid_points: DEFAULT_GRID_POINTS,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            hyper: HyperChoice::Optimize,
        }
    }
}

/// A fitted FPCA-GPR predictor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaGpr {
    pub fpca: FpcaModel,
    pub gprs: Vec<GprModel>,
    pub conditions: Vec<f64>,
}

impl FpcaGpr {
    /// Resamples every curve onto a shared grid spanning the strain range
    /// common to all of them, then fits modes and one GPR per mode.
    pub fn fit(curves: &[CurveSnapshot], config: &BaselineConfig) -> Result<Self> {
        if curves.len() < 2 {
            return Err(Error::invalid("the baseline needs at least two curves"));
        }
        if config.grid_points < 2 {
            return Err(Error::invalid("grid_points must be at least 2"));
        }
        let lo = curves.iter().map(|c| c.strain_range().0).fold(f64::NEG_INFINITY, f64::max);
        let hi = curves.iter().map(|c| c.strain_range().1).fold(f64::INFINITY, f64::min);
        if !(hi > lo) {
            return Err(Error::invalid("curves share no common strain range"));
        }
        let grid = linspace(lo, hi, config.grid_points);
        let resampled = curves
            .iter()
            .map(|c| resample_to_grid(c, &grid))
            .collect::<Result<Vec<_>>>()?;
        let fpca = fit_fpca(&grid, &resampled, config.variance_threshold)?;
        let conditions: Vec<f64> = curves.iter().map(|c| c.condition).collect();
        let gprs = (0..fpca.num_modes())
            .map(|k| {
                let targets: Vec<f64> = fpca.coefficients.iter().map(|c| c[k]).collect();
                gpr_fit(&conditions, &targets, config.hyper)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FpcaGpr { fpca, gprs, conditions })
    }

    pub fn strain_grid(&self) -> &[f64] {
        &self.fpca.strain_grid
    }

    pub fn predict(&self, condition: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        predict_curve(&self.fpca, &self.gprs, condition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_training_curve_without_noise() {
        let strains = linspace(0.0, 1.0, 11);
        let curves: Vec<CurveSnapshot> = [0.0, 1.0, 2.0, 3.0]
            .iter()
            .map(|&t| {
                let s = strains.iter().map(|e| (1.0 + 0.3 * t) * e + 0.1 * t * e * e).collect();
                CurveSnapshot::new(t, strains.clone(), s).unwrap()
            })
            .collect();
        let cfg = BaselineConfig {
            grid_points: 11,
            variance_threshold: 0.999999,
            hyper: HyperChoice::Fixed(GprHyper {
                length_scale: 1.0,
                signal_variance: 1.0,
                noise_variance: 0.0,
            }),
        };
        let b = FpcaGpr::fit(&curves, &cfg).unwrap();
        let (mean, std) = b.predict(2.0).unwrap();
        for (m, s) in mean.iter().zip(&curves[2].stresses) {
            assert!((m - s).abs() < 1e-6);
        }
        assert!(std.iter().all(|s| s.abs() < 1e-3));
    }

    #[test]
    fn mode_count_mismatch() {
        let f = fit_fpca(&[0.0, 1.0], &[vec![0.0, 1.0], vec![1.0, 3.0]], 0.99).unwrap();
        assert!(predict_curve(&f, &[], 0.0).is_err());
        let z = f.truncated(0).unwrap();
        let (m, s) = predict_curve(&z, &[], 0.0).unwrap();
        assert_eq!(m, f.column_mean);
        assert!(s.iter().all(|&v| v == 0.0));
    }
}
