//! Probability-flow sampling under a variance-exploding diffusion, read as a
//! transport problem: the flow velocity, its total time derivative (the body
//! force) and a second-order reverse integrator on the displacement.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::nn::{adam_step, AdamConfig, AdamState, Activation, Init, Matrix, Mlp, MlpSpec, Mode, Tape};
use crate::rng::{mix_seed, SeededRng};

pub const DEFAULT_SIGMA_MIN: f64 = 0.01;
pub const DEFAULT_SIGMA_MAX: f64 = 50.0;
pub const DEFAULT_STEPS: usize = 100;

/// Geometric noise schedule on `[0, t_final]`.
///
/// With `r = σ_max/σ_min` the diffusion coefficient is
/// `g(t) = σ_min·r^{t/t_f}·sqrt(2 ln r / t_f)`, whose integrated variance is
/// `σ(t)² = σ_min²·(r^{2t/t_f} − 1)`. That keeps `σ(0) = 0` exactly, and
/// `σ(t) ≈ σ_min·r^{t/t_f}` once `r^{t/t_f} ≫ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VeSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_final: f64,
}

impl Default for VeSchedule {
    fn default() -> Self {
        VeSchedule {
            sigma_min: DEFAULT_SIGMA_MIN,
            sigma_max: DEFAULT_SIGMA_MAX,
            t_final: 1.0,
        }
    }
}

impl VeSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, t_final: f64) -> Result<Self> {
        let s = VeSchedule {
            sigma_min,
            sigma_max,
            t_final,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::invalid("schedule needs 0 < sigma_min < sigma_max"));
        }
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::invalid("t_final must be positive"));
        }
        Ok(())
    }

    fn ratio_ln(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_final).contains(&t) {
            return Err(Error::OutOfRange(format!("time {t} outside [0, {}]", self.t_final)));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let e = 2.0 * self.ratio_ln() * t / self.t_final;
        Ok(self.sigma_min * e.exp_m1().sqrt())
    }

    /// Squared diffusion coefficient `g(t)²`.
    pub fn g2(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let ln_r = self.ratio_ln();
        Ok(self.sigma_min.powi(2) * (2.0 * ln_r * t / self.t_final).exp() * 2.0 * ln_r / self.t_final)
    }

    pub fn g(&self, t: f64) -> Result<f64> {
        Ok(self.g2(t)?.sqrt())
    }
}

/// `∇ₓ log p_t(x)` or an approximation to it.
pub trait Score {
    fn dim(&self) -> Option<usize> {
        None
    }

    fn score(&self, x: &[f64], t: f64, schedule: &VeSchedule) -> Result<Vec<f64>>;
}

/// Exact score for data distributed `N(0, s² I)`: `−x / (s² + σ(t)²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianScore {
    pub data_std: f64,
}

impl Score for GaussianScore {
    fn score(&self, x: &[f64], t: f64, schedule: &VeSchedule) -> Result<Vec<f64>> {
        let var = self.data_std.powi(2) + schedule.sigma(t)?.powi(2);
        Ok(x.iter().map(|v| -v / var).collect())
    }
}

/// A network `n(x, t)` read as the score `n(x, t) / σ(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedScore {
    pub net: Mlp,
}

impl TrainedScore {
    pub fn new(dim: usize, hidden: Vec<usize>, seed: u64) -> Result<Self> {
        let spec = MlpSpec {
            input_dim: dim + 1,
            hidden,
            output_dim: dim,
            hidden_activation: Activation::Selu,
            dropout: 0.0,
        };
        Ok(TrainedScore {
            net: Mlp::from_spec(&spec, Init::FanIn, seed)?,
        })
    }
}

impl Score for TrainedScore {
    fn dim(&self) -> Option<usize> {
        Some(self.net.output_dim())
    }

    fn score(&self, x: &[f64], t: f64, schedule: &VeSchedule) -> Result<Vec<f64>> {
        check_dim(self.net.output_dim(), x.len())?;
        let sigma = schedule.sigma(t)?;
        if sigma <= 0.0 {
            return Err(Error::OutOfRange("trained score is undefined at t = 0".into()));
        }
        let mut input = x.to_vec();
        input.push(t / schedule.t_final);
        let out = self.net.forward(&input, Mode::Eval, 0)?;
        Ok(out.into_iter().map(|v| v / sigma).collect())
    }
}

/// Adapts a closure `(x, t) -> score`.
pub struct FnScore<F>(pub F);

impl<F: Fn(&[f64], f64) -> Vec<f64>> Score for FnScore<F> {
    fn score(&self, x: &[f64], t: f64, _schedule: &VeSchedule) -> Result<Vec<f64>> {
        Ok((self.0)(x, t))
    }
}

fn draw_time(rng: &mut SeededRng, t_final: f64) -> f64 {
    // (0, t_f]
    t_final * (1.0 - rng.uniform())
}

/// Monte-Carlo denoising score-matching loss `E‖σ(t)·s(x₀ + σ(t)z, t) + z‖²`
/// with one `(t, z)` draw per row of `x0`.
pub fn dsm_loss<S: Score + ?Sized>(score: &S, x0: &Matrix, schedule: &VeSchedule, seed: u64) -> Result<f64> {
    let (n, d) = x0.shape();
    if n == 0 {
        return Err(Error::invalid("empty batch"));
    }
    let mut rng = SeededRng::stream(seed, 0xD5);
    let mut total = 0.0;
    for r in 0..n {
        let t = draw_time(&mut rng, schedule.t_final);
        let sigma = schedule.sigma(t)?;
        let z = rng.normal_vec(d);
        let x: Vec<f64> = x0.row(r).iter().zip(&z).map(|(a, b)| a + sigma * b).collect();
        let s = score.score(&x, t, schedule)?;
        check_dim(d, s.len())?;
        total += s.iter().zip(&z).map(|(s, z)| (sigma * s + z).powi(2)).sum::<f64>();
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreTrainConfig {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ScoreTrainConfig {
    fn default() -> Self {
        ScoreTrainConfig {
            hidden: [64, 64],
            epochs: 2000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Fits a small two-hidden-layer score network to `data` by minimising the
/// denoising loss with Adam. Returns the model and the per-epoch losses.
pub fn fit_score(data: &Matrix, schedule: &VeSchedule, config: &ScoreTrainConfig) -> Result<(TrainedScore, Vec<f64>)> {
    let (n, d) = data.shape();
    if n == 0 || config.batch_size == 0 {
        return Err(Error::invalid("score fitting needs data and a positive batch size"));
    }
    let mut model = TrainedScore::new(d, config.hidden.to_vec(), config.seed)?;
    let mut params = model.net.flat_params();
    let mut state = AdamState::new(
        params.len(),
        AdamConfig {
            lr: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng = SeededRng::new(mix_seed(config.seed, 0x5C0E_0000 + epoch as u64));
        let b = config.batch_size;
        let mut input = Matrix::zeros(b, d + 1);
        let mut noise = Matrix::zeros(b, d);
        for r in 0..b {
            let src = (rng.next_u64() % n as u64) as usize;
            let t = draw_time(&mut rng, schedule.t_final);
            let sigma = schedule.sigma(t)?;
            for c in 0..d {
                let z = rng.normal();
                noise.set(r, c, z);
                input.set(r, c, data.get(src, c) + sigma * z);
            }
            input.set(r, d, t / schedule.t_final);
        }
        let (value, grads) = crate::nn::param_grad(&model.net, |tape: &mut Tape, vars| {
            let x = tape.constant(input);
            let out = model.net.forward_tape(tape, vars, x, Mode::Train, 0)?;
            let resid = tape.add_const(out, &noise);
            let sq = tape.square(resid);
            let per_row = tape.row_sum(sq);
            Ok(tape.mean(per_row))
        })?;
        history.push(value);
        adam_step(&mut params, &grads, &mut state)?;
        model.net.set_flat_params(&params)?;
    }
    Ok((model, history))
}

/// Flow velocity `v = −½ g(t)² s(x, t)`.
pub fn pf_velocity<S: Score + ?Sized>(score: &S, x: &[f64], t: f64, schedule: &VeSchedule) -> Result<Vec<f64>> {
    let half_g2 = 0.5 * schedule.g2(t)?;
    let s = score.score(x, t, schedule)?;
    check_dim(x.len(), s.len())?;
    Ok(s.into_iter().map(|v| -half_g2 * v).collect())
}

/// Total derivative `∂v/∂t + (∂v/∂x)·v`, both parts by central differences
/// of width `dt` (the spatial one along `v`).
pub fn body_force_fd<S: Score + ?Sized>(score: &S, x: &[f64], t: f64, schedule: &VeSchedule, dt: f64) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be positive"));
    }
    if t - dt < 0.0 || t + dt > schedule.t_final {
        return Err(Error::OutOfRange(format!("t ± dt = {t} ± {dt} leaves the schedule range")));
    }
    let v = pf_velocity(score, x, t, schedule)?;
    let vp = pf_velocity(score, x, t + dt, schedule)?;
    let vm = pf_velocity(score, x, t - dt, schedule)?;
    let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + dt * b).collect();
    let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - dt * b).collect();
    let sp = pf_velocity(score, &xp, t, schedule)?;
    let sm = pf_velocity(score, &xm, t, schedule)?;
    Ok((0..x.len())
        .map(|i| (vp[i] - vm[i]) / (2.0 * dt) + (sp[i] - sm[i]) / (2.0 * dt))
        .collect())
}

/// End state of a reverse pass from `t_final` down to `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSample {
    /// `x(ε) = x(t_f) − u`.
    pub x: Vec<f64>,
    /// Accumulated displacement `u = x(t_f) − x(ε)`.
    pub displacement: Vec<f64>,
}

fn reverse_grid(schedule: &VeSchedule, steps: usize, eps: f64) -> Result<f64> {
    if steps == 0 {
        return Err(Error::invalid("steps must be at least 1"));
    }
    if !(eps > 0.0 && eps < schedule.t_final) {
        return Err(Error::OutOfRange(format!("eps {eps} must lie in (0, t_final)")));
    }
    Ok((schedule.t_final - eps) / steps as f64)
}

fn finite_or(x: &[f64], step: usize) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sampler state at step {step}")));
    }
    Ok(())
}

fn finish(x_init: &[f64], x: Vec<f64>) -> ReverseSample {
    let displacement = x_init.iter().zip(&x).map(|(a, b)| a - b).collect();
    ReverseSample { x, displacement }
}

/// Default `ε = 1e-3·t_final`.
pub fn default_eps(schedule: &VeSchedule) -> f64 {
    1e-3 * schedule.t_final
}

pub const CORRECTOR_MAX_ITERS: usize = 50;
const CORRECTOR_TOL: f64 = 1e-12;

/// Iterates `x ← step(v(x))` from `guess` until it stops moving.
fn fixed_point(
    mut guess: Vec<f64>,
    step_index: usize,
    mut velocity: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    update: impl Fn(usize, f64) -> f64,
) -> Result<Vec<f64>> {
    for _ in 0..CORRECTOR_MAX_ITERS {
        let v = velocity(&guess)?;
        let next: Vec<f64> = (0..guess.len()).map(|i| update(i, v[i])).collect();
        finite_or(&next, step_index)?;
        let moved = next
            .iter()
            .zip(&guess)
            .all(|(a, b)| (a - b).abs() <= CORRECTOR_TOL * (1.0 + a.abs()));
        guess = next;
        if moved {
            return Ok(guess);
        }
    }
    Err(Error::NonFinite(format!(
        "corrector did not converge at step {step_index}; use more steps"
    )))
}

/// Second-order reverse integration of the flow.
///
/// Positions obey the central recursion
/// `x(t−Δt) = 2x(t) − x(t+Δt) + (Δt/2)(v(x(t+Δt), t+Δt) − v(x(t−Δt), t−Δt))`,
/// which is implicit in `x(t−Δt)`. Each step starts from the explicit
/// predictor `x(t) − Δt·v(x(t), t)` and repeats the corrector to a fixed
/// point. The first step has no `t+Δt` state and is an implicit trapezoid
/// step; that start makes the recursion reproduce the trapezoid rule, whereas
/// a cruder start leaves a constant defect that accumulates every step.
pub fn sample_second_order<S: Score + ?Sized>(
    score: &S,
    schedule: &VeSchedule,
    x_init: &[f64],
    steps: usize,
    eps: f64,
) -> Result<ReverseSample> {
    let dt = reverse_grid(schedule, steps, eps)?;
    finite_or(x_init, 0)?;
    let tf = schedule.t_final;
    let time = |k: usize| if k == steps { eps } else { tf - k as f64 * dt };
    let v_top = pf_velocity(score, x_init, tf, schedule)?;
    let guess: Vec<f64> = x_init.iter().zip(&v_top).map(|(x, v)| x - dt * v).collect();
    let mut cur = fixed_point(
        guess,
        1,
        |x| pf_velocity(score, x, time(1), schedule),
        |i, v| x_init[i] - 0.5 * dt * (v_top[i] + v),
    )?;
    let mut prev = x_init.to_vec();
    let mut prev_v = v_top;
    for step in 2..=steps {
        let v_cur = pf_velocity(score, &cur, time(step - 1), schedule)?;
        let guess: Vec<f64> = cur.iter().zip(&v_cur).map(|(x, v)| x - dt * v).collect();
        let next = fixed_point(
            guess,
            step,
            |x| pf_velocity(score, x, time(step), schedule),
            |i, v| 2.0 * cur[i] - prev[i] + 0.5 * dt * (prev_v[i] - v),
        )?;
        prev = std::mem::replace(&mut cur, next);
        prev_v = v_cur;
    }
    Ok(finish(x_init, cur))
}

/// Plain explicit Euler on the reverse flow, as a reference.
pub fn sample_euler<S: Score + ?Sized>(
    score: &S,
    schedule: &VeSchedule,
    x_init: &[f64],
    steps: usize,
    eps: f64,
) -> Result<ReverseSample> {
    let dt = reverse_grid(schedule, steps, eps)?;
    finite_or(x_init, 0)?;
    let mut x = x_init.to_vec();
    for step in 0..steps {
        let t = schedule.t_final - step as f64 * dt;
        let v = pf_velocity(score, &x, t, schedule)?;
        x.iter_mut().zip(&v).for_each(|(x, v)| *x -= dt * v);
        finite_or(&x, step + 1)?;
    }
    Ok(finish(x_init, x))
}

/// Draws `n` starting points from `N(0, σ(t_f)² I)`.
pub fn initial_noise(schedule: &VeSchedule, dim: usize, n: usize, seed: u64) -> Result<Matrix> {
    let sigma = schedule.sigma(schedule.t_final)?;
    let mut rng = SeededRng::stream(seed, 0x9F0DE);
    let mut m = Matrix::zeros(n, dim);
    for r in 0..n {
        for v in m.row_mut(r) {
            *v = sigma * rng.normal();
        }
    }
    Ok(m)
}

/// Sampler choice for [`sample_many`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    SecondOrder,
    Euler,
}

/// Runs one reverse pass per row of `x_init`, returning the end states.
pub fn sample_many<S: Score + ?Sized>(
    score: &S,
    schedule: &VeSchedule,
    x_init: &Matrix,
    steps: usize,
    eps: f64,
    integrator: Integrator,
) -> Result<Matrix> {
    let (n, d) = x_init.shape();
    let mut out = Matrix::zeros(n, d);
    for r in 0..n {
        let s = match integrator {
            Integrator::SecondOrder => sample_second_order(score, schedule, x_init.row(r), steps, eps)?,
            Integrator::Euler => sample_euler(score, schedule, x_init.row(r), steps, eps)?,
        };
        out.row_mut(r).copy_from_slice(&s.x);
    }
    Ok(out)
}
