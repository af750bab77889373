use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        AdamState {
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            step_count: 0,
            config,
        }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    check_dim(params.len(), grads.len())?;
    check_dim(params.len(), state.first_moment.len())?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    state.step_count += 1;
    let k = state.step_count as i32;
    let c1 = 1.0 - beta1.powi(k);
    let c2 = 1.0 - beta2.powi(k);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_matches_hand_arithmetic() {
        // m̂ = g, v̂ = g², so Δ = -lr·g/(|g|+eps)
        let g = [0.5, -3.0, 1e-9];
        let mut p = vec![0.0; 3];
        let mut s = AdamState::new(3, AdamConfig::default());
        adam_step(&mut p, &g, &mut s).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            let m = 0.1 * gi;
            let v = 0.001 * gi * gi;
            let expected = -1e-3 * (m / 0.1) / ((v / 0.001).sqrt() + 1e-8);
            assert!((pi - expected).abs() < 1e-18, "{pi} vs {expected}");
        }
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        let mut p = vec![0.0, 0.0];
        let mut s = AdamState::new(2, AdamConfig::default());
        let mut prev = p.clone();
        for _ in 0..50 {
            adam_step(&mut p, &[2.0, -1.0], &mut s).unwrap();
            assert!(p[0] < prev[0] && p[1] > prev[1]);
            prev = p.clone();
        }
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = vec![0.0];
        let mut s = AdamState::new(1, AdamConfig::default());
        assert!(adam_step(&mut p, &[f64::NAN], &mut s).is_err());
    }
}
