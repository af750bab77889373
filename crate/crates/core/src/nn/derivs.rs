//! Central finite-difference input derivatives composed on the tape.
//!
//! All stencil points are stacked into one input batch, evaluated in a single
//! forward pass, and recombined with recorded ops, so parameter gradients of
//! the finite-difference approximations are exact.

use super::mlp::{FourierFeatureEmbedding, Mlp, Mode};
use super::tape::{Tape, Var};
use super::tensor::Matrix;
use crate::error::{check_dim, Error, Result};

pub const INPUT_GUARD_BAND: (f64, f64) = (-0.5, 1.5);

/// Row layout of a stacked stencil batch.
///
/// Block 0 holds the centre points; with `space`, blocks `1+2j` and `2+2j`
/// hold `X ± h·e_j`; with `time`, the last two blocks hold `t ± h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil {
    pub points: usize,
    pub dim: usize,
    pub h: f64,
    pub space: bool,
    pub time: bool,
}

#[derive(Debug, Clone)]
pub struct StencilVars {
    pub center: Var,
    /// `∂u/∂X_j` for each spatial coordinate `j`, each `[points × out]`.
    pub jacobian_columns: Vec<Var>,
    /// `Σ_j ∂²u/∂X_j²`.
    pub laplacian: Option<Var>,
    pub du_dt: Option<Var>,
    pub d2u_dt2: Option<Var>,
}

impl Stencil {
    pub fn blocks(&self) -> usize {
        1 + if self.space { 2 * self.dim } else { 0 } + if self.time { 2 } else { 0 }
    }

    pub fn rows(&self) -> usize {
        self.blocks() * self.points
    }

    /// Builds the stacked `[rows × (dim+1)]` input for `points` (`[n × dim]`)
    /// at per-row times `times`. Fails if a time node leaves `guard`.
    pub fn build(
        points: &Matrix,
        times: &[f64],
        h: f64,
        space: bool,
        time: bool,
        guard: (f64, f64),
    ) -> Result<(Stencil, Matrix)> {
        check_dim(points.rows, times.len())?;
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        let stencil = Stencil {
            points: points.rows,
            dim: points.cols,
            h,
            space,
            time,
        };
        let span = if time { h } else { 0.0 };
        for &t in times {
            if t - span < guard.0 || t + span > guard.1 {
                return Err(Error::OutOfRange(format!(
                    "time stencil around {t} leaves [{}, {}]",
                    guard.0, guard.1
                )));
            }
        }
        let n = points.rows;
        let d = points.cols;
        let mut input = Matrix::zeros(stencil.rows(), d + 1);
        let mut write = |block: usize, dx: Option<(usize, f64)>, dt: f64| {
            for r in 0..n {
                let row = input.row_mut(block * n + r);
                row[..d].copy_from_slice(points.row(r));
                if let Some((j, s)) = dx {
                    row[j] += s;
                }
                row[d] = times[r] + dt;
            }
        };
        write(0, None, 0.0);
        let mut block = 1;
        if space {
            for j in 0..d {
                write(block, Some((j, h)), 0.0);
                write(block + 1, Some((j, -h)), 0.0);
                block += 2;
            }
        }
        if time {
            write(block, None, h);
            write(block + 1, None, -h);
        }
        Ok((stencil, input))
    }

    /// Recombines the network output `out` (`[rows × k]`) into derivatives.
    pub fn assemble(&self, tape: &mut Tape, out: Var, laplacian: bool) -> StencilVars {
        let n = self.points;
        let h = self.h;
        let center = tape.slice_rows(out, 0, n);
        let mut jacobian_columns = Vec::new();
        let mut lap = None;
        let mut block = 1;
        if self.space {
            for _ in 0..self.dim {
                let plus = tape.slice_rows(out, block * n, n);
                let minus = tape.slice_rows(out, (block + 1) * n, n);
                let diff = tape.sub(plus, minus);
                jacobian_columns.push(tape.scale(diff, 0.5 / h));
                if laplacian {
                    let second = second_difference(tape, plus, center, minus, h);
                    lap = Some(match lap {
                        Some(acc) => tape.add(acc, second),
                        None => second,
                    });
                }
                block += 2;
            }
        }
        let (mut du_dt, mut d2u_dt2) = (None, None);
        if self.time {
            let plus = tape.slice_rows(out, block * n, n);
            let minus = tape.slice_rows(out, (block + 1) * n, n);
            let diff = tape.sub(plus, minus);
            du_dt = Some(tape.scale(diff, 0.5 / h));
            d2u_dt2 = Some(second_difference(tape, plus, center, minus, h));
        }
        StencilVars {
            center,
            jacobian_columns,
            laplacian: lap,
            du_dt,
            d2u_dt2,
        }
    }
}

fn second_difference(tape: &mut Tape, plus: Var, center: Var, minus: Var, h: f64) -> Var {
    let outer = tape.add(plus, minus);
    let twice = tape.scale(center, 2.0);
    let num = tape.sub(outer, twice);
    tape.scale(num, 1.0 / (h * h))
}

/// Derivatives of a field `u(X, t)` at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDerivs {
    pub u: Vec<f64>,
    pub du_dt: Vec<f64>,
    pub d2u_dt2: Vec<f64>,
    /// `jacobian[i][j] = ∂u_i/∂X_j`.
    pub jacobian: Vec<Vec<f64>>,
}

/// Finite-difference derivatives of any field recorded on a tape. `field`
/// maps a `[rows × (dim+1)]` input (coordinates then time) to outputs.
pub fn input_derivs_with(
    field: impl FnOnce(&mut Tape, Var) -> Result<Var>,
    x: &[f64],
    t: f64,
    h: f64,
) -> Result<InputDerivs> {
    let (stencil, input) = Stencil::build(&Matrix::row_vector(x), &[t], h, true, true, INPUT_GUARD_BAND)?;
    let mut tape = Tape::new();
    let inp = tape.constant(input);
    let out = field(&mut tape, inp)?;
    let vars = stencil.assemble(&mut tape, out, false);
    let k = tape.value(vars.center).cols;
    let mut jacobian = vec![vec![0.0; x.len()]; k];
    for (j, &col) in vars.jacobian_columns.iter().enumerate() {
        for (i, row) in jacobian.iter_mut().enumerate() {
            row[j] = tape.value(col).data[i];
        }
    }
    let du_dt = vars.du_dt.expect("time stencil requested");
    let d2u_dt2 = vars.d2u_dt2.expect("time stencil requested");
    Ok(InputDerivs {
        u: tape.value(vars.center).data.clone(),
        du_dt: tape.value(du_dt).data.clone(),
        d2u_dt2: tape.value(d2u_dt2).data.clone(),
        jacobian,
    })
}

/// [`input_derivs_with`] for an evaluation-mode network on `[X, t]` inputs.
pub fn input_derivs(
    net: &Mlp,
    embedding: Option<&FourierFeatureEmbedding>,
    x: &[f64],
    t: f64,
    h: f64,
) -> Result<InputDerivs> {
    input_derivs_with(
        |tape, inp| {
            let vars = net.register_frozen(tape);
            let feats = match embedding {
                Some(e) => {
                    let ev = e.register_frozen(tape);
                    e.forward_tape(tape, &ev, inp)?
                }
                None => inp,
            };
            net.forward_tape(tape, &vars, feats, Mode::Eval, 0)
        },
        x,
        t,
        h,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Init, Layer, MlpSpec};

    #[test]
    fn quadratic_in_time_has_exact_second_derivative() {
        let d = input_derivs_with(
            |tape, inp| {
                let t = tape.slice_cols(inp, 2, 1);
                Ok(tape.square(t))
            },
            &[0.3, -0.2],
            0.4,
            1e-3,
        )
        .unwrap();
        assert!((d.d2u_dt2[0] - 2.0).abs() < 1e-6);
        assert!((d.du_dt[0] - 0.8).abs() < 1e-9);
    }

    #[test]
    fn linear_net_has_exact_jacobian() {
        // u = A·X, ignoring t
        let a = [[1.5, -0.25], [0.75, 2.0]];
        let layer = Layer {
            weight: Matrix::from_rows(&[vec![a[0][0], a[0][1], 0.0], vec![a[1][0], a[1][1], 0.0]]),
            bias: vec![0.0, 0.0],
            activation: Activation::Linear,
            dropout: 0.0,
        };
        let net = Mlp::from_layers(vec![layer]).unwrap();
        let d = input_derivs(&net, None, &[0.4, 0.9], 0.5, 1e-3).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((d.jacobian[i][j] - a[i][j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn agrees_with_five_point_stencil() {
        let spec = MlpSpec {
            input_dim: 3,
            hidden: vec![16, 16],
            output_dim: 2,
            hidden_activation: Activation::Softplus { beta: 10.0 },
            dropout: 0.0,
        };
        let net = Mlp::from_spec(&spec, Init::FanIn, 9).unwrap();
        let x = [0.2, -0.4];
        let t = 0.6;
        let h = 1e-3;
        let d = input_derivs(&net, None, &x, t, h).unwrap();
        let eval = |xx: [f64; 2], tt: f64| net.forward(&[xx[0], xx[1], tt], Mode::Eval, 0).unwrap();
        let k = 1e-2;
        for i in 0..2 {
            let f = |s: f64| eval(x, t + s)[i];
            let first = (-f(2.0 * k) + 8.0 * f(k) - 8.0 * f(-k) + f(-2.0 * k)) / (12.0 * k);
            let second = (-f(2.0 * k) + 16.0 * f(k) - 30.0 * f(0.0) + 16.0 * f(-k) - f(-2.0 * k)) / (12.0 * k * k);
            assert!((d.du_dt[i] - first).abs() < 1e-4 * (1.0 + first.abs()));
            assert!((d.d2u_dt2[i] - second).abs() < 1e-3 * (1.0 + second.abs()));
            for j in 0..2 {
                let g = |s: f64| {
                    let mut xx = x;
                    xx[j] += s;
                    eval(xx, t)[i]
                };
                let fd = (-g(2.0 * k) + 8.0 * g(k) - 8.0 * g(-k) + g(-2.0 * k)) / (12.0 * k);
                assert!((d.jacobian[i][j] - fd).abs() < 1e-4 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn guard_band_is_enforced() {
        let net = Mlp::from_layers(vec![Layer {
            weight: Matrix::zeros(1, 2),
            bias: vec![0.0],
            activation: Activation::Linear,
            dropout: 0.0,
        }])
        .unwrap();
        assert!(input_derivs(&net, None, &[0.0], 1.5, 1e-3).is_err());
        assert!(input_derivs(&net, None, &[0.0], 1.4, 1e-3).is_ok());
    }
}
