use cmgai::baseline::*;
use cmgai::density::CurveSnapshot;
use cmgai::rng::SeededRng;
use proptest::prelude::*;

fn grid(m: usize) -> Vec<f64> {
    (0..m).map(|i| i as f64 / (m - 1) as f64).collect()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Posterior mean and variance by explicit Gaussian conditioning on
/// standardised inputs.
fn conditioning_oracle(inputs: &[f64], targets: &[f64], h: &GprHyper, t: f64) -> (f64, f64) {
    let n = inputs.len() as f64;
    let mean = inputs.iter().sum::<f64>() / n;
    let sd = (inputs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let z: Vec<f64> = inputs.iter().map(|v| (v - mean) / sd).collect();
    let zs = (t - mean) / sd;
    let k = |a: f64, b: f64| h.signal_variance * (-0.5 * ((a - b) / h.length_scale).powi(2)).exp();
    let gram: Vec<Vec<f64>> = z
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            z.iter()
                .enumerate()
                .map(|(j, &b)| k(a, b) + if i == j { h.noise_variance } else { 0.0 })
                .collect()
        })
        .collect();
    let ks: Vec<f64> = z.iter().map(|&a| k(zs, a)).collect();
    let alpha = dense_solve(gram.clone(), targets.to_vec());
    let v = dense_solve(gram, ks.clone());
    let mu = ks.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let var = h.signal_variance + h.noise_variance - ks.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    (mu, var)
}

fn rank_three_family(n: usize, m: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let g = grid(m);
    let mut rng = SeededRng::new(seed);
    let base: Vec<f64> = g.iter().map(|e| 3.0 * e - e * e).collect();
    let shapes: [Vec<f64>; 3] = [
        g.iter().map(|e| (std::f64::consts::PI * e).sin()).collect(),
        g.iter().map(|e| e * e * e).collect(),
        g.iter().map(|e| (4.0 * e).cos()).collect(),
    ];
    let curves = (0..n)
        .map(|_| {
            let a: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            (0..m)
                .map(|i| base[i] + (0..3).map(|k| a[k] * shapes[k][i]).sum::<f64>())
                .collect()
        })
        .collect();
    (curves, g)
}

fn reconstruction_error(model: &FpcaModel, curves: &[Vec<f64>]) -> f64 {
    curves
        .iter()
        .zip(&model.coefficients)
        .map(|(c, a)| {
            let r = model.reconstruct(a).unwrap();
            c.iter().zip(&r).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[test]
fn random_instances_match_dense_conditioning() {
    let mut rng = SeededRng::new(21);
    for _ in 0..20 {
        let n = 2 + (rng.uniform() * 6.0) as usize;
        let inputs: Vec<f64> = (0..n).map(|i| i as f64 * 1.7 + rng.uniform()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let h = GprHyper {
            length_scale: 0.3 + rng.uniform() * 2.0,
            signal_variance: 0.5 + rng.uniform() * 2.0,
            noise_variance: 1e-3 + rng.uniform() * 0.1,
        };
        let model = gpr_fit(&inputs, &targets, HyperChoice::Fixed(h)).unwrap();
        assert_eq!(model.jitter, 0.0);
        for t in [-3.0, inputs[0], 2.2, 20.0] {
            let (m, v) = model.predict(t).unwrap();
            let (mo, vo) = conditioning_oracle(&inputs, &targets, &h, t);
            assert!((m - mo).abs() < 1e-10, "mean {m} vs {mo}");
            assert!((v - vo).abs() < 1e-10, "var {v} vs {vo}");
        }
    }
}

#[test]
fn long_length_scale_gives_constant_ridge_estimate() {
    let inputs = [0.0, 1.0, 2.5, 4.0];
    let targets = [1.0, 2.0, 0.5, 3.0];
    let (s2, e2) = (2.0, 0.3);
    let h = GprHyper {
        length_scale: 1e6,
        signal_variance: s2,
        noise_variance: e2,
    };
    let model = gpr_fit(&inputs, &targets, HyperChoice::Fixed(h)).unwrap();
    // K → s²·11ᵀ, so the posterior mean is s²Σa / (σ² + n·s²) everywhere
    let ridge = s2 * targets.iter().sum::<f64>() / (e2 + 4.0 * s2);
    for t in [-10.0, 0.0, 1.3, 8.0] {
        assert!((model.predict(t).unwrap().0 - ridge).abs() < 1e-6);
    }
}

#[test]
fn rank_three_family_is_reconstructed() {
    let (curves, g) = rank_three_family(8, 40, 3);
    let model = fit_fpca(&g, &curves, 1.0 - 1e-12).unwrap();
    assert_eq!(model.num_modes(), 3);
    assert!(reconstruction_error(&model, &curves) < 1e-8);
    let total: f64 = model.variance_ratio.iter().take(3).sum();
    assert!((total - 1.0).abs() < 1e-10);
}

#[test]
fn reconstruction_error_is_non_increasing_in_rank() {
    let mut rng = SeededRng::new(8);
    let g = grid(25);
    let curves: Vec<Vec<f64>> = (0..10).map(|_| (0..25).map(|_| rng.normal()).collect()).collect();
    let full = fit_fpca(&g, &curves, 1.0).unwrap();
    let mut prev = f64::INFINITY;
    for r in 0..=full.num_modes() {
        let m = full.truncated(r).unwrap();
        let err: f64 = curves
            .iter()
            .zip(&m.coefficients)
            .map(|(c, a)| {
                let rec = m.reconstruct(a).unwrap();
                c.iter().zip(&rec).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            })
            .sum();
        assert!(err <= prev + 1e-9, "rank {r}: {err} > {prev}");
        prev = err;
    }
    assert!(prev < 1e-16 * 250.0);
}

#[test]
fn rank_one_linear_family_extrapolation_is_reported() {
    let g = grid(30);
    let shape: Vec<f64> = g.iter().map(|e| e.sqrt()).collect();
    let family = |t: f64| -> Vec<f64> { shape.iter().map(|s| (1.0 + 0.2 * t) * s).collect() };
    let curves: Vec<CurveSnapshot> = [0.0, 1.0, 2.0, 3.0]
        .iter()
        .map(|&t| CurveSnapshot::new(t, g.clone(), family(t)).unwrap())
        .collect();
    let cfg = BaselineConfig {
        grid_points: 30,
        ..BaselineConfig::default()
    };
    let fitted = FpcaGpr::fit(&curves, &cfg).unwrap();
    assert_eq!(fitted.fpca.num_modes(), 1);
    let (mean, std) = fitted.predict(5.0).unwrap();
    let truth = family(5.0);
    let err = mean.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("rank-1 extrapolation to T=5: max error {err:.4}, max std {:.4}", std.iter().cloned().fold(0.0, f64::max));
    assert!(std.iter().all(|s| *s >= 0.0));
}

#[test]
fn noiseless_prediction_reproduces_training_curves() {
    let (curves, g) = rank_three_family(6, 20, 5);
    let snaps: Vec<CurveSnapshot> = curves
        .iter()
        .enumerate()
        .map(|(i, c)| CurveSnapshot::new(i as f64, g.clone(), c.clone()).unwrap())
        .collect();
    let cfg = BaselineConfig {
        grid_points: 20,
        variance_threshold: 1.0 - 1e-12,
        hyper: HyperChoice::Fixed(GprHyper {
            length_scale: 0.5,
            signal_variance: 1.0,
            noise_variance: 0.0,
        }),
    };
    let fitted = FpcaGpr::fit(&snaps, &cfg).unwrap();
    for (i, c) in curves.iter().enumerate() {
        let (mean, _) = fitted.predict(i as f64).unwrap();
        for (a, b) in mean.iter().zip(c) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn posterior_variance_is_bounded_by_prior(
        targets in prop::collection::vec(-5.0f64..5.0, 1..8),
        l in 0.1f64..5.0,
        s2 in 0.1f64..5.0,
        e2 in 0.0f64..1.0,
        t in -20.0f64..20.0,
    ) {
        let inputs: Vec<f64> = (0..targets.len()).map(|i| i as f64).collect();
        let h = GprHyper { length_scale: l, signal_variance: s2, noise_variance: e2 };
        let model = gpr_fit(&inputs, &targets, HyperChoice::Fixed(h)).unwrap();
        let (_, v) = model.predict(t).unwrap();
        prop_assert!(v >= 0.0);
        prop_assert!(v <= s2 + e2 + 1e-12);
    }

    #[test]
    fn curve_prediction_is_linear_in_coefficients(
        a in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
        c in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let (curves, g) = rank_three_family(6, 15, seed);
        let model = fit_fpca(&g, &curves, 1.0 - 1e-12).unwrap();
        prop_assume!(model.num_modes() == 3);
        let combo: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
        let ra = model.reconstruct(&a).unwrap();
        let rb = model.reconstruct(&b).unwrap();
        let rc = model.reconstruct(&combo).unwrap();
        for i in 0..g.len() {
            let mu = model.column_mean[i];
            let want = (ra[i] - mu) + c * (rb[i] - mu);
            prop_assert!((rc[i] - mu - want).abs() < 1e-10);
        }
    }

    #[test]
    fn fpca_modes_are_orthonormal(seed in any::<u64>(), n in 3usize..9) {
        let (curves, g) = rank_three_family(n, 12, seed);
        let model = fit_fpca(&g, &curves, 0.99).unwrap();
        for (i, p) in model.modes.iter().enumerate() {
            for (j, q) in model.modes.iter().enumerate() {
                let dot: f64 = p.iter().zip(q).map(|(x, y)| x * y).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() < 1e-10);
            }
        }
        let captured: f64 = model.variance_ratio.iter().take(model.num_modes()).sum();
        prop_assert!(captured >= 0.99 - 1e-12);
        if model.num_modes() > 1 {
            let short: f64 = model.variance_ratio.iter().take(model.num_modes() - 1).sum();
            prop_assert!(short < 0.99);
        }
    }

    #[test]
    fn far_predictions_revert_to_prior(targets in prop::collection::vec(-5.0f64..5.0, 2..6), l in 0.2f64..2.0) {
        let inputs: Vec<f64> = (0..targets.len()).map(|i| i as f64).collect();
        let h = GprHyper { length_scale: l, signal_variance: 1.0, noise_variance: 1e-4 };
        let model = gpr_fit(&inputs, &targets, HyperChoice::Fixed(h)).unwrap();
        // ≥ 10ℓ away in standardised units
        let far = model.input_center + model.input_scale * 40.0 * l + inputs[inputs.len() - 1];
        let (m, v) = model.predict(far).unwrap();
        prop_assert!(m.abs() < 1e-6);
        prop_assert!((v - 1.0 - 1e-4).abs() < 1e-6);
    }
}
