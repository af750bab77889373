//! Analytic fixture families with known held-out targets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::linspace;
use crate::rng::{mix_seed, SeededRng};

pub const CURVE_TRAIN_TAUS: [f64; 5] = [0.0, 0.125, 0.25, 0.5, 0.75];
pub const FIELD_TRAIN_TAUS: [f64; 7] = [0.0, 0.125, 0.25, 0.375, 0.5, 0.625, 0.75];
pub const TARGET_TAU: f64 = 1.0;

/// Stress–strain family `σ(ε; τ) = (a + bτ)(1 − e^{−cε})` with temperature
/// `T = T₀ + τ·(T₁ − T₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveFamily {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub noise: f64,
    pub strains: Vec<f64>,
    pub condition_range: (f64, f64),
    pub train_taus: Vec<f64>,
}

impl CurveFamily {
    /// Randomised softening family: `a ∈ [60, 80]`, `b ∈ [−35, −25]`,
    /// `c ∈ [15, 30]` over temperatures −25…150 °C.
    pub fn random(seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, 0xC0);
        CurveFamily {
            a: rng.uniform_in(60.0, 80.0),
            b: rng.uniform_in(-35.0, -25.0),
            c: rng.uniform_in(15.0, 30.0),
            noise: 0.1,
            strains: linspace(0.0, 0.2, 41),
            condition_range: (-25.0, 150.0),
            train_taus: CURVE_TRAIN_TAUS.to_vec(),
        }
    }

    pub fn condition(&self, tau: f64) -> f64 {
        self.condition_range.0 + tau * (self.condition_range.1 - self.condition_range.0)
    }

    pub fn stress(&self, strain: f64, tau: f64) -> f64 {
        (self.a + self.b * tau) * (1.0 - (-self.c * strain).exp())
    }

    pub fn exact(&self, tau: f64) -> Vec<f64> {
        self.strains.iter().map(|&e| self.stress(e, tau)).collect()
    }

    /// Training curves with measurement noise (zero at zero strain).
    pub fn noisy(&self, tau: f64, seed: u64) -> Vec<f64> {
        let mut rng = SeededRng::new(seed);
        self.strains
            .iter()
            .map(|&e| {
                let z = rng.normal();
                if e == 0.0 {
                    0.0
                } else {
                    self.stress(e, tau) + self.noise * z
                }
            })
            .collect()
    }
}

/// Field family `v(τ) = base + τ·mode₁ + τ²·mode₂` in `ℝ^D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldFamily {
    pub base: Vec<f64>,
    pub mode1: Vec<f64>,
    pub mode2: Vec<f64>,
    pub condition_range: (f64, f64),
    pub train_taus: Vec<f64>,
}

fn smooth_profile(rng: &mut SeededRng, d: usize, amplitude: f64, terms: usize) -> Vec<f64> {
    let coeffs: Vec<(f64, f64)> = (0..terms)
        .map(|k| {
            let decay = 1.0 / (1.0 + k as f64);
            (amplitude * decay * rng.normal(), amplitude * decay * rng.normal())
        })
        .collect();
    (0..d)
        .map(|i| {
            let x = i as f64 / d as f64;
            coeffs
                .iter()
                .enumerate()
                .map(|(k, (s, c))| {
                    let w = std::f64::consts::TAU * (k + 1) as f64 * x;
                    s * w.sin() + c * w.cos()
                })
                .sum()
        })
        .collect()
}

impl FieldFamily {
    /// Random smooth profiles; conditions are impact velocities 100…300 m/s.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = SeededRng::stream(seed, 0xF1E1D);
        let base = smooth_profile(&mut rng, dim, 10.0, 6)
            .into_iter()
            .map(|v| v + 20.0)
            .collect();
        FieldFamily {
            base,
            mode1: smooth_profile(&mut rng, dim, 3.0, 4),
            mode2: smooth_profile(&mut rng, dim, 1.5, 4),
            condition_range: (100.0, 300.0),
            train_taus: FIELD_TRAIN_TAUS.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn condition(&self, tau: f64) -> f64 {
        self.condition_range.0 + tau * (self.condition_range.1 - self.condition_range.0)
    }

    pub fn field(&self, tau: f64) -> Vec<f64> {
        self.base
            .iter()
            .zip(&self.mode1)
            .zip(&self.mode2)
            .map(|((b, m1), m2)| b + tau * m1 + tau * tau * m2)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Curves,
    Fields,
}

/// Paths written by [`synth_fixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureFiles {
    pub train: Vec<PathBuf>,
    pub target: PathBuf,
    pub target_condition: f64,
    pub condition_range: (f64, f64),
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes one CSV per training condition plus the held-out target CSV.
pub fn synth_fixture(kind: FixtureKind, dim: usize, seed: u64, dir: &Path) -> Result<FixtureFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut train = Vec::new();
    match kind {
        FixtureKind::Curves => {
            let fam = CurveFamily::random(seed);
            let curve_csv = |tau: f64, stresses: &[f64]| {
                let mut s = String::from("condition,strain,stress\n");
                for (e, v) in fam.strains.iter().zip(stresses) {
                    s.push_str(&format!("{},{},{}\n", num(fam.condition(tau)), num(*e), num(*v)));
                }
                s
            };
            for (i, &tau) in fam.train_taus.iter().enumerate() {
                let path = dir.join(format!("curve_{i:02}.csv"));
                write(&path, &curve_csv(tau, &fam.noisy(tau, mix_seed(seed, i as u64))))?;
                train.push(path);
            }
            let target = dir.join("target.csv");
            write(&target, &curve_csv(TARGET_TAU, &fam.exact(TARGET_TAU)))?;
            Ok(FixtureFiles {
                train,
                target,
                target_condition: fam.condition(TARGET_TAU),
                condition_range: fam.condition_range,
            })
        }
        FixtureKind::Fields => {
            let fam = FieldFamily::random(dim, seed);
            let header = {
                let mut h = String::from("condition");
                for k in 1..=fam.dim() {
                    h.push_str(&format!(",v{k}"));
                }
                h.push('\n');
                h
            };
            let field_csv = |tau: f64| {
                let mut s = header.clone();
                s.push_str(&num(fam.condition(tau)));
                for v in fam.field(tau) {
                    s.push(',');
                    s.push_str(&num(v));
                }
                s.push('\n');
                s
            };
            for (i, &tau) in fam.train_taus.iter().enumerate() {
                let path = dir.join(format!("field_{i:02}.csv"));
                write(&path, &field_csv(tau))?;
                train.push(path);
            }
            let target = dir.join("target.csv");
            write(&target, &field_csv(TARGET_TAU))?;
            Ok(FixtureFiles {
                train,
                target,
                target_condition: fam.condition(TARGET_TAU),
                condition_range: fam.condition_range,
            })
        }
    }
}
