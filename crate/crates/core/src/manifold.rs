//! Transport along geodesics of a Riemannian metric.
//!
//! Metrics expose their covariant components `g_ij(x)` as a row-major
//! `N x N` buffer. Derivatives come from the metric itself when it knows them
//! and from central differences otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numeric::det_and_inverse;

pub const METRIC_FD_STEP: f64 = 1e-5;
pub const LOBACHEVSKY_GUARD: f64 = 1e-9;
const INVERSE_RESIDUAL_TOL: f64 = 1e-10;

pub trait MetricField {
    fn dim(&self) -> usize;

    /// Covariant components at `x`, row-major.
    fn metric(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `∂g_ij/∂x^l` laid out as `[l][i][j]`.
    fn metric_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        fd_metric_derivative(self, x, METRIC_FD_STEP)
    }

    /// Whether integration may continue at `x`.
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
}

/// Central-difference metric derivative, `[l][i][j]` layout.
pub fn fd_metric_derivative<M: MetricField + ?Sized>(metric: &M, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = metric.dim();
    check_dim(n, x.len())?;
    let mut out = vec![0.0; n * n * n];
    let mut probe = x.to_vec();
    for l in 0..n {
        probe[l] = x[l] + h;
        let plus = metric.metric(&probe)?;
        probe[l] = x[l] - h;
        let minus = metric.metric(&probe)?;
        probe[l] = x[l];
        for ij in 0..n * n {
            out[l * n * n + ij] = (plus[ij] - minus[ij]) / (2.0 * h);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Euclidean {
    pub dim: usize,
}

impl MetricField for Euclidean {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let n = self.dim;
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            g[i * n + i] = 1.0;
        }
        Ok(g)
    }

    fn metric_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(vec![0.0; self.dim.pow(3)])
    }
}

/// Upper half-plane model: `g = diag(1/y², 1/y²)` for `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Lobachevsky;

impl MetricField for Lobachevsky {
    fn dim(&self) -> usize {
        2
    }

    fn metric(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, x.len())?;
        let y = x[1];
        if !(y > 0.0) {
            return Err(Error::Singular(format!("half-plane metric needs y > 0, got {y}")));
        }
        let w = 1.0 / (y * y);
        Ok(vec![w, 0.0, 0.0, w])
    }

    fn metric_derivative(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, x.len())?;
        let y = x[1];
        if !(y > 0.0) {
            return Err(Error::Singular(format!("half-plane metric needs y > 0, got {y}")));
        }
        let d = -2.0 / (y * y * y);
        Ok(vec![0.0, 0.0, 0.0, 0.0, d, 0.0, 0.0, d])
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        x[1] >= LOBACHEVSKY_GUARD
    }
}

/// A metric given by a closure; derivatives by central differences.
pub struct FnMetric<F> {
    pub dim: usize,
    pub components: F,
}

impl<F: Fn(&[f64]) -> Vec<f64>> MetricField for FnMetric<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn metric(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let g = (self.components)(x);
        check_dim(self.dim * self.dim, g.len())?;
        Ok(g)
    }
}

/// Contravariant components `g^ij`, checked against `g·g⁻¹ = I`.
pub fn inverse_metric(g: &[f64], n: usize) -> Result<Vec<f64>> {
    check_dim(n * n, g.len())?;
    for i in 0..n {
        for j in 0..i {
            if g[i * n + j] != g[j * n + i] {
                return Err(Error::Singular("metric is not symmetric".into()));
            }
        }
    }
    let (det, inv) = det_and_inverse(g, n);
    let inv = match inv {
        Some(inv) if det > 0.0 && det.is_finite() => inv,
        _ => return Err(Error::Singular(format!("metric determinant {det}"))),
    };
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| g[i * n + k] * inv[k * n + j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            if (v - want).abs() > INVERSE_RESIDUAL_TOL {
                return Err(Error::Singular(format!("inverse residual {:e}", (v - want).abs())));
            }
        }
    }
    Ok(inv)
}

/// Connection coefficients `Γᵏᵢⱼ`, stored `[k][i][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel {
    dim: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        let n = self.dim;
        self.data[(k * n + i) * n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn christoffel<M: MetricField + ?Sized>(metric: &M, x: &[f64]) -> Result<Christoffel> {
    let n = metric.dim();
    check_dim(n, x.len())?;
    let g = metric.metric(x)?;
    let ginv = inverse_metric(&g, n)?;
    let dg = metric.metric_derivative(x)?;
    check_dim(n * n * n, dg.len())?;
    // d(l, i, j) = ∂g_ij / ∂x^l
    let d = |l: usize, i: usize, j: usize| dg[l * n * n + i * n + j];
    let mut data = vec![0.0; n * n * n];
    for k in 0..n {
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n)
                    .map(|l| ginv[k * n + l] * (d(i, l, j) + d(j, i, l) - d(l, i, j)))
                    .sum::<f64>()
                    * 0.5;
                data[(k * n + i) * n + j] = v;
                data[(k * n + j) * n + i] = v;
            }
        }
    }
    Ok(Christoffel { dim: n, data })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl GeodesicState {
    pub fn new(position: Vec<f64>, velocity: Vec<f64>) -> Result<Self> {
        check_dim(position.len(), velocity.len())?;
        if position.iter().chain(&velocity).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("geodesic state".into()));
        }
        Ok(GeodesicState { position, velocity })
    }
}

/// Optional strain-energy forcing `G(Γⁱᵢₖ g₀ᵏʲ + Γʲᵢₖ g₀ⁱᵏ)`.
///
/// Off unless explicitly supplied; `reference_inverse` holds `g₀^{ij}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainEnergyTerm {
    pub shear_modulus: f64,
    pub reference_inverse: Vec<f64>,
}

/// Acceleration `ẍʲ = G(…) − Γʲₖᵢ ẋᵏ ẋⁱ`.
pub fn geodesic_rhs<M: MetricField + ?Sized>(
    metric: &M,
    state: &GeodesicState,
    strain: Option<&StrainEnergyTerm>,
) -> Result<Vec<f64>> {
    let n = metric.dim();
    check_dim(n, state.position.len())?;
    check_dim(n, state.velocity.len())?;
    let gamma = christoffel(metric, &state.position)?;
    let v = &state.velocity;
    let mut acc = vec![0.0; n];
    for (j, a) in acc.iter_mut().enumerate() {
        let mut s = 0.0;
        for k in 0..n {
            for i in 0..n {
                s += gamma.get(j, k, i) * v[k] * v[i];
            }
        }
        *a = -s;
    }
    if let Some(term) = strain {
        if !(term.shear_modulus >= 0.0) {
            return Err(Error::OutOfRange(format!("shear modulus {}", term.shear_modulus)));
        }
        check_dim(n * n, term.reference_inverse.len())?;
        let g0 = &term.reference_inverse;
        for (j, a) in acc.iter_mut().enumerate() {
            let mut s = 0.0;
            for i in 0..n {
                for k in 0..n {
                    s += gamma.get(i, i, k) * g0[k * n + j] + gamma.get(j, i, k) * g0[i * n + k];
                }
            }
            *a += term.shear_modulus * s;
        }
    }
    Ok(acc)
}

/// `g_ij vⁱ vʲ` at `x`.
pub fn squared_speed<M: MetricField + ?Sized>(metric: &M, x: &[f64], v: &[f64]) -> Result<f64> {
    let n = metric.dim();
    check_dim(n, v.len())?;
    let g = metric.metric(x)?;
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[i * n + j] * v[i] * v[j];
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<GeodesicState>,
    /// Set when integration stopped before `t_end`.
    pub aborted: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &GeodesicState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

fn axpy(base: &[f64], k: &[f64], s: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + s * k).collect()
}

/// Classic RK4 on `(x, ẋ)`, recording every step.
///
/// Leaving the metric's domain, or hitting a singular metric, ends the
/// trajectory early with `aborted` set.
pub fn integrate_geodesic<M: MetricField + ?Sized>(
    metric: &M,
    x0: &[f64],
    v0: &[f64],
    t_end: f64,
    steps: usize,
    strain: Option<&StrainEnergyTerm>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if !t_end.is_finite() {
        return Err(Error::NonFinite("t_end".into()));
    }
    check_dim(metric.dim(), x0.len())?;
    let start = GeodesicState::new(x0.to_vec(), v0.to_vec())?;
    if !metric.in_domain(x0) {
        return Err(Error::OutOfRange("initial point outside the metric domain".into()));
    }
    let h = t_end / steps as f64;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![start],
        aborted: None,
    };
    let deriv = |x: &[f64], v: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let s = GeodesicState {
            position: x.to_vec(),
            velocity: v.to_vec(),
        };
        Ok((v.to_vec(), geodesic_rhs(metric, &s, strain)?))
    };
    for step in 1..=steps {
        let cur = traj.last().clone();
        let (x, v) = (&cur.position, &cur.velocity);
        let stage = || -> Result<GeodesicState> {
            let (k1x, k1v) = deriv(x, v)?;
            let (k2x, k2v) = deriv(&axpy(x, &k1x, h / 2.0), &axpy(v, &k1v, h / 2.0))?;
            let (k3x, k3v) = deriv(&axpy(x, &k2x, h / 2.0), &axpy(v, &k2v, h / 2.0))?;
            let (k4x, k4v) = deriv(&axpy(x, &k3x, h), &axpy(v, &k3v, h))?;
            let comb = |b: &[f64], a: &[f64], c: &[f64], d: &[f64], e: &[f64]| -> Vec<f64> {
                (0..b.len())
                    .map(|i| b[i] + h / 6.0 * (a[i] + 2.0 * c[i] + 2.0 * d[i] + e[i]))
                    .collect()
            };
            Ok(GeodesicState {
                position: comb(x, &k1x, &k2x, &k3x, &k4x),
                velocity: comb(v, &k1v, &k2v, &k3v, &k4v),
            })
        };
        let next = match stage() {
            Ok(s) => s,
            Err(e @ (Error::Singular(_) | Error::NonFinite(_))) => {
                traj.aborted = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        let t = step as f64 * h;
        if next.position.iter().chain(&next.velocity).any(|v| !v.is_finite()) {
            traj.aborted = Some(format!("non-finite state at t = {t}"));
            break;
        }
        if !metric.in_domain(&next.position) {
            traj.aborted = Some(format!("left the metric domain at t = {t}"));
            break;
        }
        traj.times.push(t);
        traj.states.push(next);
    }
    Ok(traj)
}

/// Closed-form half-plane geodesic through `(x0, y0)` with unit speed:
/// `(x0 + y0·tanh t, y0·sech t)`.
pub fn lobachevsky_analytic(x0: f64, y0: f64, t: f64) -> Result<(f64, f64)> {
    if !(y0 > 0.0) {
        return Err(Error::OutOfRange(format!("y0 must be positive, got {y0}")));
    }
    Ok((x0 + y0 * t.tanh(), y0 * sech(t)))
}

/// Time derivative of [`lobachevsky_analytic`].
pub fn lobachevsky_analytic_velocity(y0: f64, t: f64) -> (f64, f64) {
    let s = sech(t);
    (y0 * s * s, -y0 * s * t.tanh())
}

fn sech(t: f64) -> f64 {
    let e = (-t.abs()).exp();
    2.0 * e / (1.0 + e * e)
}

/// Largest relative violation of `ρ₀(X)√det g₀(X) = ρ(x)√det g(x)` over
/// paired samples `(X, x)`.
pub fn manifold_mass_check<M0, Mt>(
    rho0: impl Fn(&[f64]) -> f64,
    rho_t: impl Fn(&[f64]) -> f64,
    pairs: &[(Vec<f64>, Vec<f64>)],
    metric0: &M0,
    metric_t: &Mt,
) -> Result<f64>
where
    M0: MetricField + ?Sized,
    Mt: MetricField + ?Sized,
{
    let n = metric0.dim();
    check_dim(n, metric_t.dim())?;
    let volume = |m: &dyn Fn(&[f64]) -> Result<Vec<f64>>, x: &[f64]| -> Result<f64> {
        let (det, _) = det_and_inverse(&m(x)?, n);
        if !(det > 0.0) {
            return Err(Error::Singular(format!("metric determinant {det}")));
        }
        Ok(det.sqrt())
    };
    let mut worst = 0.0f64;
    for (reference, current) in pairs {
        check_dim(n, reference.len())?;
        check_dim(n, current.len())?;
        let lhs = rho0(reference) * volume(&|x| metric0.metric(x), reference)?;
        let rhs = rho_t(current) * volume(&|x| metric_t.metric(x), current)?;
        if !(lhs > 0.0) {
            return Err(Error::invalid("reference density vanishes at a sample"));
        }
        worst = worst.max((lhs - rhs).abs() / lhs);
    }
    Ok(worst)
}

/// Metrics selectable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinMetric {
    Euclidean,
    Lobachevsky,
}
