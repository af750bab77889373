use serde::{Deserialize, Serialize};

use super::{CmGaiModel, TIME_GUARD_BAND};
use crate::density::{min_max, DensityModel};
use crate::error::{check_dim, Error, Result};
use crate::nn::{Matrix, Stencil, Tape};
use crate::rng::{mix_seed, SeededRng};

const CHUNK: usize = 512;

/// Reference draws pushed forward to time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCloud {
    pub t: f64,
    pub source: Matrix,
    pub particles: Matrix,
    /// Equal weights over the retained particles; they sum to one.
    pub weights: Vec<f64>,
    /// Transported density `ρ₀(X)/det F` at each particle.
    pub density: Vec<f64>,
    pub dropped: usize,
}

impl GeneratedCloud {
    pub fn dropped_fraction(&self) -> f64 {
        let total = self.particles.rows + self.dropped;
        if total == 0 {
            0.0
        } else {
            self.dropped as f64 / total as f64
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.particles.cols;
        let mut cols = vec![Vec::with_capacity(self.particles.rows); d];
        for r in 0..self.particles.rows {
            for (k, c) in cols.iter_mut().enumerate() {
                c.push(self.weights[r] * self.particles.get(r, k));
            }
        }
        cols.into_iter().map(crate::numeric::compensated_sum).collect()
    }
}

/// Maps raw points to time `t`; returns mapped raw points and `det F`.
pub(crate) fn map_points(model: &CmGaiModel, raw: &Matrix, t: f64) -> Result<(Matrix, Vec<f64>)> {
    check_dim(model.dim(), raw.cols)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange(format!("generation time {t} outside [0, 1]")));
    }
    let dim = model.dim();
    let h = model.config.fd_step;
    let mut mapped = Matrix::zeros(raw.rows, dim);
    let mut dets = Vec::with_capacity(raw.rows);
    let mut start = 0;
    while start < raw.rows {
        let len = CHUNK.min(raw.rows - start);
        let chunk = raw.slice_rows(start, len);
        let norm = model.scaler.normalize_rows(&chunk);
        let (stencil, input) = Stencil::build(&norm, &vec![t; len], h, true, false, TIME_GUARD_BAND)?;
        let mut tape = Tape::new();
        let vars = model.displacement.register(&mut tape, false);
        let input = tape.constant(input);
        let u = model.displacement.forward_tape(&mut tape, &vars, input)?;
        let sv = stencil.assemble(&mut tape, u, false);
        let grad_u = tape.hstack(&sv.jacobian_columns);
        let gv = tape.value(grad_u);
        let uv = tape.value(sv.center);
        for r in 0..len {
            let mut f = gv.row(r).to_vec();
            for j in 0..dim {
                f[j * dim + j] += 1.0;
            }
            dets.push(crate::numeric::determinant(&f, dim));
            let out = mapped.row_mut(start + r);
            for k in 0..dim {
                out[k] = chunk.get(r, k) + uv.get(r, k) * model.scaler.scale[k];
            }
        }
        start += len;
    }
    Ok((mapped, dets))
}

/// Fraction of reference draws with `det F ≤ 0`, pooled over `times`.
pub fn negative_jacobian_fraction(model: &CmGaiModel, times: &[f64], n: usize, seed: u64) -> Result<f64> {
    let source = model.reference.sample(n, seed);
    let mut bad = 0usize;
    for &t in times {
        let (_, dets) = map_points(model, &source, t)?;
        bad += dets.iter().filter(|d| !(**d > 0.0)).count();
    }
    Ok(bad as f64 / (n * times.len()).max(1) as f64)
}

/// Draws from the reference with antithetic pairs about its mean.
fn reference_draws(reference: &DensityModel, n: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
    let dim = reference.dim();
    let mut out = Matrix::zeros(n, dim);
    match reference {
        DensityModel::Curve(c) => {
            let (lo, hi) = c.strain_range;
            let mut r = 0;
            while r < n {
                let e = rng.uniform_in(lo, hi);
                let m = c.mean_at(e).expect("strain inside range");
                let z = c.sigma_stress * rng.normal();
                for s in [z, -z] {
                    if r < n {
                        out.row_mut(r).copy_from_slice(&[e, m + s]);
                        r += 1;
                    }
                }
            }
        }
        DensityModel::Reduced(d) => {
            let mut r = 0;
            while r < n {
                let z: Vec<f64> = (0..dim).map(|_| d.sigma * rng.normal()).collect();
                for sign in [1.0, -1.0] {
                    if r < n {
                        for (k, o) in out.row_mut(r).iter_mut().enumerate() {
                            *o = d.mean[k] + sign * z[k];
                        }
                        r += 1;
                    }
                }
            }
        }
    }
    out
}

/// Pushes reference draws to normalized time `t`, dropping points with
/// `det F ≤ 0`.
pub fn generate_density(model: &CmGaiModel, t: f64) -> Result<GeneratedCloud> {
    let n = model.config.generation_samples;
    let source = reference_draws(&model.reference, n, mix_seed(model.config.seed, 0x6E4));
    cloud_from(model, source, t)
}

fn cloud_from(model: &CmGaiModel, source: Matrix, t: f64) -> Result<GeneratedCloud> {
    let (mapped, dets) = map_points(model, &source, t)?;
    let keep: Vec<usize> = (0..source.rows).filter(|&r| dets[r] > 0.0 && dets[r].is_finite()).collect();
    let dropped = source.rows - keep.len();
    if keep.is_empty() {
        return Err(Error::invalid("every generated particle has a non-positive Jacobian"));
    }
    let dim = model.dim();
    let mut particles = Matrix::zeros(keep.len(), dim);
    let mut kept_source = Matrix::zeros(keep.len(), dim);
    let mut density = Vec::with_capacity(keep.len());
    for (i, &r) in keep.iter().enumerate() {
        particles.row_mut(i).copy_from_slice(mapped.row(r));
        kept_source.row_mut(i).copy_from_slice(source.row(r));
        density.push(model.reference.eval(source.row(r)) / dets[r]);
    }
    if dropped > 0 {
        log::warn!("{dropped} of {} generated particles dropped for det F ≤ 0", source.rows);
    }
    Ok(GeneratedCloud {
        t,
        source: kept_source,
        particles,
        weights: vec![1.0 / keep.len() as f64; keep.len()],
        density,
        dropped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanData {
    Curve { strains: Vec<f64>, stresses: Vec<f64> },
    /// Mean reconstructed into the full field space.
    Field { values: Vec<f64> },
    /// Mean in the model's own coordinates when no basis is attached.
    Vector { values: Vec<f64> },
}

impl MeanData {
    pub fn values(&self) -> &[f64] {
        match self {
            MeanData::Curve { stresses, .. } => stresses,
            MeanData::Field { values } | MeanData::Vector { values } => values,
        }
    }
}

/// Mean of the transported density at normalized time `t`.
///
/// For curves, reference draws are stratified on the reference strain grid;
/// each slice's mapped mean gives one point of the generated mean curve,
/// which is then interpolated back onto the grid strains.
pub fn generate_mean(model: &CmGaiModel, t: f64) -> Result<MeanData> {
    match &model.reference {
        DensityModel::Curve(c) => {
            let m = c.strain_grid.len();
            let per = (model.config.generation_samples / m).max(2) & !1;
            let mut rng = SeededRng::new(mix_seed(model.config.seed, 0x6E5));
            let mut source = Matrix::zeros(m * per, 2);
            for (g, (&e, &mu)) in c.strain_grid.iter().zip(&c.mean_stress).enumerate() {
                for k in 0..per / 2 {
                    let z = c.sigma_stress * rng.normal();
                    source.row_mut(g * per + 2 * k).copy_from_slice(&[e, mu + z]);
                    source.row_mut(g * per + 2 * k + 1).copy_from_slice(&[e, mu - z]);
                }
            }
            let (mapped, dets) = map_points(model, &source, t)?;
            let mut knots: Vec<(f64, f64)> = Vec::with_capacity(m);
            let mut dropped = 0;
            for g in 0..m {
                let (mut se, mut ss, mut cnt) = (0.0, 0.0, 0usize);
                for r in g * per..(g + 1) * per {
                    if dets[r] > 0.0 {
                        se += mapped.get(r, 0);
                        ss += mapped.get(r, 1);
                        cnt += 1;
                    } else {
                        dropped += 1;
                    }
                }
                if cnt > 0 {
                    knots.push((se / cnt as f64, ss / cnt as f64));
                }
            }
            if dropped > 0 {
                log::warn!("{dropped} particles dropped for det F ≤ 0 while forming the mean curve");
            }
            if knots.len() < 2 {
                return Err(Error::invalid("too few valid strain slices to form a mean curve"));
            }
            knots.sort_by(|a, b| a.0.total_cmp(&b.0));
            knots.dedup_by(|a, b| a.0 == b.0);
            let xs: Vec<f64> = knots.iter().map(|k| k.0).collect();
            let ys: Vec<f64> = knots.iter().map(|k| k.1).collect();
            let stresses = c.strain_grid.iter().map(|&e| interp_extrapolate(&xs, &ys, e)).collect();
            Ok(MeanData::Curve {
                strains: c.strain_grid.clone(),
                stresses,
            })
        }
        DensityModel::Reduced(_) => {
            let mean = generate_density(model, t)?.mean();
            match &model.pca {
                Some(basis) => Ok(MeanData::Field {
                    values: basis.reconstruct(&mean)?,
                }),
                None => Ok(MeanData::Vector { values: mean }),
            }
        }
    }
}

/// Linear interpolation with linear extrapolation from the end segments.
fn interp_extrapolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if let Some(v) = crate::numeric::interp_linear(xs, ys, x) {
        return v;
    }
    let n = xs.len();
    let (i, j) = if x < xs[0] { (0, 1) } else { (n - 2, n - 1) };
    ys[i] + (x - xs[i]) * (ys[j] - ys[i]) / (xs[j] - xs[i])
}

/// Root-mean-square error normalized by the target's range.
pub fn nrmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_dim(target.len(), pred.len())?;
    if target.is_empty() {
        return Err(Error::invalid("empty target"));
    }
    let (lo, hi) = min_max(target);
    if !(hi > lo) {
        return Err(Error::invalid("target is constant; its range is zero"));
    }
    let mse = crate::numeric::compensated_mean(
        &pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).collect::<Vec<_>>(),
    );
    Ok(mse.sqrt() / (hi - lo))
}
