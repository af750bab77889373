use serde::{Deserialize, Serialize};

use super::{CmGaiModel, SnapshotDataset, TIME_GUARD_BAND};
use crate::error::{Error, Result};
use crate::nn::{flatten_grads, Matrix, Mode, Stencil, Tape, Var};
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub density: f64,
    pub boundary: f64,
    pub motion: f64,
    /// Reference draws excluded from the density term because `det F ≤ 0`.
    pub dropped: usize,
    pub evaluated: usize,
}

pub(crate) struct Evaluation {
    pub terms: LossTerms,
    pub grad: Option<Vec<f64>>,
}

/// Weighted three-term loss on a fresh batch drawn from the reference density.
pub fn loss(model: &CmGaiModel, dataset: &SnapshotDataset, weights: [f64; 3], epoch_seed: u64) -> Result<LossTerms> {
    let samples = model
        .reference
        .sample(model.config.batch_size, mix_seed(epoch_seed, 0xBA7C));
    Ok(evaluate(model, dataset, weights, &samples, Mode::Train, epoch_seed, false)?.terms)
}

/// Loss on explicit reference draws (raw coordinates, one per row).
pub fn loss_with_samples(
    model: &CmGaiModel,
    dataset: &SnapshotDataset,
    weights: [f64; 3],
    samples: &Matrix,
    mode: Mode,
    seed: u64,
) -> Result<LossTerms> {
    Ok(evaluate(model, dataset, weights, samples, mode, seed, false)?.terms)
}

fn accumulate(tape: &mut Tape, total: Option<Var>, term: Var, w: f64) -> Option<Var> {
    let weighted = tape.scale(term, w);
    Some(match total {
        Some(acc) => tape.add(acc, weighted),
        None => weighted,
    })
}

pub(crate) fn evaluate(
    model: &CmGaiModel,
    dataset: &SnapshotDataset,
    weights: [f64; 3],
    samples: &Matrix,
    mode: Mode,
    seed: u64,
    want_grad: bool,
) -> Result<Evaluation> {
    let dim = model.dim();
    crate::error::check_dim(dim, dataset.dim())?;
    crate::error::check_dim(dim, samples.cols)?;
    let h = model.config.fd_step;
    let n = samples.rows;
    let x_norm = model.scaler.normalize_rows(samples);

    let mut tape = Tape::new();
    let dvars = model.displacement.register(&mut tape, want_grad);
    let with_motion = weights[2] > 0.0;
    let fvars = with_motion.then(|| {
        if want_grad {
            model.body_force.net.register(&mut tape)
        } else {
            model.body_force.net.register_frozen(&mut tape)
        }
    });
    let scale = tape.constant(Matrix::row_vector(&model.scaler.scale));

    let mut total = None;
    let mut terms = LossTerms {
        total: 0.0,
        density: 0.0,
        boundary: 0.0,
        motion: 0.0,
        dropped: 0,
        evaluated: 0,
    };

    if weights[0] > 0.0 && n > 0 {
        let snaps = &dataset.snapshots;
        let s = snaps.len();
        let points = Matrix::vstack(&vec![&x_norm; s]);
        let times: Vec<f64> = snaps.iter().flat_map(|sn| std::iter::repeat(sn.t).take(n)).collect();
        let (stencil, input) = Stencil::build(&points, &times, h, true, false, TIME_GUARD_BAND)?;
        let input = tape.constant(input);
        let u = model.displacement.forward_tape(&mut tape, &dvars, input)?;
        let sv = stencil.assemble(&mut tape, u, false);

        // Row r holds ∂u/∂X column by column, i.e. (∂u/∂X)ᵀ flattened; the
        // determinant is unaffected by the transpose.
        let grad_u = tape.hstack(&sv.jacobian_columns);
        let rows = n * s;
        let mut eye = Matrix::zeros(rows, dim * dim);
        for r in 0..rows {
            for j in 0..dim {
                eye.set(r, j * dim + j, 1.0);
            }
        }
        let f = tape.add_const(grad_u, &eye);
        let det = tape.det_rows(f, dim);
        let mask: Vec<f64> = tape
            .value(det)
            .data
            .iter()
            .map(|&d| if d > 0.0 && d.is_finite() { 1.0 } else { 0.0 })
            .collect();
        let valid = mask.iter().sum::<f64>();
        terms.evaluated = rows;
        terms.dropped = rows - valid as usize;
        if valid > 0.0 {
            let mask = Matrix::column_vector(&mask);
            let det_masked = tape.mul_const(det, mask.clone());
            let det_safe = tape.add_const(det_masked, &mask.map(|m| 1.0 - m));
            let rho0: Vec<f64> = (0..n).map(|r| model.reference.eval(samples.row(r))).collect();
            let rho0 = tape.constant(Matrix::column_vector(&rho0.repeat(s)));
            let pushed = tape.div(rho0, det_safe);

            let u_raw = tape.mul_row(sv.center, scale);
            let x_raw = tape.add_const(u_raw, &Matrix::vstack(&vec![samples; s]));
            let mut targets = Vec::with_capacity(s);
            for (i, sn) in snaps.iter().enumerate() {
                let block = tape.slice_rows(x_raw, i * n, n);
                let density = &sn.density;
                targets.push(tape.row_fn(block, |row| density.eval_with_grad(row)));
            }
            let target = tape.vstack(&targets);
            let diff = tape.sub(pushed, target);
            let sq = tape.square(diff);
            let sq = tape.mul_const(sq, mask);
            let sum = tape.sum(sq);
            let term = tape.scale(sum, 1.0 / valid);
            terms.density = tape.scalar(term);
            total = accumulate(&mut tape, total, term, weights[0]);
        }
    }

    let pairs: Vec<(f64, &super::BoundaryPair)> = dataset
        .snapshots
        .iter()
        .flat_map(|sn| sn.boundary.iter().map(move |b| (sn.t, b)))
        .collect();
    if weights[1] > 0.0 && !pairs.is_empty() {
        let src: Vec<Vec<f64>> = pairs.iter().map(|(_, b)| model.scaler.normalize(&b.source)).collect();
        let offset: Vec<Vec<f64>> = pairs
            .iter()
            .zip(&src)
            .map(|((_, b), s)| {
                let tgt = model.scaler.normalize(&b.target);
                s.iter().zip(tgt).map(|(a, b)| a - b).collect()
            })
            .collect();
        let times: Vec<f64> = pairs.iter().map(|(t, _)| *t).collect();
        let (_, input) = Stencil::build(&Matrix::from_rows(&src), &times, h, false, false, TIME_GUARD_BAND)?;
        let input = tape.constant(input);
        let u = model.displacement.forward_tape(&mut tape, &dvars, input)?;
        let res = tape.add_const(u, &Matrix::from_rows(&offset));
        let sq = tape.square(res);
        let sum = tape.sum(sq);
        let term = tape.scale(sum, 1.0 / pairs.len() as f64);
        terms.boundary = tape.scalar(term);
        total = accumulate(&mut tape, total, term, weights[1]);
    }

    if let Some(fvars) = &fvars {
        let m = model.config.collocation_samples().min(n);
        let nt = model.config.collocation_times;
        if m > 0 {
            let base = x_norm.slice_rows(0, m);
            let points = Matrix::vstack(&vec![&base; nt]);
            let times: Vec<f64> = (1..=nt)
                .flat_map(|j| std::iter::repeat(j as f64 / (nt + 1) as f64).take(m))
                .collect();
            let g = model.config.shear_modulus;
            let (stencil, input) = Stencil::build(&points, &times, h, g > 0.0, true, TIME_GUARD_BAND)?;
            let input = tape.constant(input);
            let u = model.displacement.forward_tape(&mut tape, &dvars, input)?;
            let sv = stencil.assemble(&mut tape, u, g > 0.0);
            let x_cur = tape.add_const(sv.center, &points);
            let t_col = tape.constant(Matrix::column_vector(&times));
            let fin = tape.hstack(&[x_cur, t_col]);
            let fb = model
                .body_force
                .net
                .forward_tape(&mut tape, fvars, fin, mode, mix_seed(seed, 0xF0))?;
            let mut res = tape.sub(sv.d2u_dt2.expect("time stencil"), fb);
            if let Some(lap) = sv.laplacian {
                let elastic = tape.scale(lap, g);
                res = tape.sub(res, elastic);
            }
            let sq = tape.square(res);
            let sum = tape.sum(sq);
            let term = tape.scale(sum, 1.0 / (m * nt) as f64);
            terms.motion = tape.scalar(term);
            total = accumulate(&mut tape, total, term, weights[2]);
        }
    }

    let total = total.ok_or_else(|| Error::invalid("every loss term is disabled or empty"))?;
    terms.total = tape.scalar(total);
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grad = want_grad.then(|| {
        let grads = tape.backward(total);
        let mut g = flatten_grads(&tape, &grads, &dvars.all());
        match &fvars {
            Some(fv) => g.extend(flatten_grads(&tape, &grads, &fv.all())),
            None => g.extend(std::iter::repeat(0.0).take(model.body_force.net.num_params())),
        }
        g
    });
    Ok(Evaluation { terms, grad })
}
