use super::{CmGaiModel, TIME_GUARD_BAND};
use crate::error::{check_dim, Result};
use crate::nn::{Matrix, Stencil, Tape};

/// `F = I + ∂u/∂X` in raw coordinates at a raw point `x`.
pub fn deformation_gradient(model: &CmGaiModel, x: &[f64], t: f64) -> Result<Vec<Vec<f64>>> {
    check_dim(model.dim(), x.len())?;
    let dim = model.dim();
    let norm = Matrix::row_vector(&model.scaler.normalize(x));
    let (stencil, input) = Stencil::build(&norm, &[t], model.config.fd_step, true, false, TIME_GUARD_BAND)?;
    let mut tape = Tape::new();
    let vars = model.displacement.register(&mut tape, false);
    let input = tape.constant(input);
    let u = model.displacement.forward_tape(&mut tape, &vars, input)?;
    let sv = stencil.assemble(&mut tape, u, false);
    let s = &model.scaler.scale;
    let mut f = vec![vec![0.0; dim]; dim];
    for (j, &col) in sv.jacobian_columns.iter().enumerate() {
        for (i, row) in f.iter_mut().enumerate() {
            // ∂u_i/∂X_j in raw units
            row[j] = tape.value(col).data[i] * s[i] / s[j];
        }
    }
    for (i, row) in f.iter_mut().enumerate() {
        row[i] += 1.0;
    }
    Ok(f)
}

/// Strain energy density `½G(tr(FFᵀ) − N)`.
pub fn neo_hookean_energy(f: &[Vec<f64>], shear_modulus: f64) -> f64 {
    let n = f.len() as f64;
    let trace_c: f64 = f.iter().flat_map(|row| row.iter()).map(|v| v * v).sum();
    0.5 * shear_modulus * (trace_c - n)
}

/// First Piola–Kirchhoff stress `∂W/∂F = G·F`.
pub fn first_pk_stress(f: &[Vec<f64>], shear_modulus: f64) -> Vec<Vec<f64>> {
    f.iter()
        .map(|row| row.iter().map(|v| shear_modulus * v).collect())
        .collect()
}

/// `∂²u/∂t² − G·ΔX u − F_b(X + u, t)` at a raw point, in normalized units.
pub fn eom_residual(model: &CmGaiModel, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_dim(model.dim(), x.len())?;
    let g = model.config.shear_modulus;
    let norm = model.scaler.normalize(x);
    let points = Matrix::row_vector(&norm);
    let (stencil, input) = Stencil::build(&points, &[t], model.config.fd_step, g > 0.0, true, TIME_GUARD_BAND)?;
    let mut tape = Tape::new();
    let vars = model.displacement.register(&mut tape, false);
    let input = tape.constant(input);
    let u = model.displacement.forward_tape(&mut tape, &vars, input)?;
    let sv = stencil.assemble(&mut tape, u, g > 0.0);
    let u_c = tape.value(sv.center).data.clone();
    let current: Vec<f64> = norm.iter().zip(&u_c).map(|(a, b)| a + b).collect();
    let fb = model.body_force.forward(&current, t)?;
    let utt = &tape.value(sv.d2u_dt2.expect("time stencil")).data;
    let lap = sv.laplacian.map(|l| tape.value(l).data.clone());
    Ok((0..model.dim())
        .map(|k| utt[k] - lap.as_ref().map_or(0.0, |l| g * l[k]) - fb[k])
        .collect())
}
