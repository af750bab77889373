use cmgai::nn::*;
use proptest::prelude::*;

fn softplus_net(widths: &[usize], seed: u64) -> Mlp {
    Mlp::from_spec(
        &MlpSpec {
            input_dim: widths[0],
            hidden: widths[1..widths.len() - 1].to_vec(),
            output_dim: widths[widths.len() - 1],
            hidden_activation: Activation::Softplus { beta: 10.0 },
            dropout: 0.0,
        },
        Init::FanIn,
        seed,
    )
    .unwrap()
}

fn squared_error(net: &Mlp, x: &Matrix, y: &Matrix) -> f64 {
    let out = net.forward_batch(x, Mode::Eval, 0).unwrap();
    out.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.rows as f64
}

fn fd_gradient(net: &Mlp, x: &Matrix, y: &Matrix, h: f64) -> Vec<f64> {
    let base = net.flat_params();
    let mut probe = net.clone();
    (0..base.len())
        .map(|k| {
            let mut p = base.clone();
            p[k] = base[k] + h;
            probe.set_flat_params(&p).unwrap();
            let up = squared_error(&probe, x, y);
            p[k] = base[k] - h;
            probe.set_flat_params(&p).unwrap();
            let down = squared_error(&probe, x, y);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn tape_gradient(net: &Mlp, x: &Matrix, y: &Matrix) -> (f64, Vec<f64>) {
    param_grad(net, |tape, vars| {
        let xv = tape.constant(x.clone());
        let out = net.forward_tape(tape, vars, xv, Mode::Eval, 0)?;
        let target = tape.constant(y.clone());
        let r = tape.sub(out, target);
        let sq = tape.square(r);
        let s = tape.sum(sq);
        Ok(tape.scale(s, 1.0 / x.rows as f64))
    })
    .unwrap()
}

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = cmgai::rng::SeededRng::new(seed);
    Matrix::from_vec(rows, cols, rng.normal_vec(rows * cols))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn param_grad_matches_central_differences(
        seed in any::<u64>(),
        inp in 1usize..4,
        h1 in 2usize..6,
        h2 in 2usize..6,
        out in 1usize..3,
    ) {
        let net = softplus_net(&[inp, h1, h2, out], seed);
        let x = random_matrix(4, inp, seed ^ 1);
        let y = random_matrix(4, out, seed ^ 2);
        let (value, grad) = tape_gradient(&net, &x, &y);
        prop_assert!((value - squared_error(&net, &x, &y)).abs() < 1e-12 * value.max(1.0));
        let fd = fd_gradient(&net, &x, &y, 1e-5);
        for (k, (g, f)) in grad.iter().zip(&fd).enumerate() {
            prop_assert!((g - f).abs() <= 1e-4 * f.abs() + 1e-8, "component {k}: tape {g} vs fd {f}");
        }
    }

    #[test]
    fn eval_forward_is_pure(seed in any::<u64>(), x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let net = softplus_net(&[3, 8, 8, 2], seed);
        let a = net.forward(&x, Mode::Eval, 1).unwrap();
        let b = net.forward(&x, Mode::Eval, 999).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fourier_blocks(seed in any::<u64>(), m in 1usize..6, x in prop::collection::vec(-2.0f64..2.0, 1..4)) {
        let mut emb = FourierFeatureEmbedding::new(x.len(), m, seed);
        emb.scale = 1.7;
        let y = emb.forward(&x).unwrap();
        prop_assert_eq!(y.len(), 2 * m + x.len());
        for k in 0..m {
            let z: f64 = 1.7 * (0..x.len()).map(|j| emb.spectral_weights.get(k, j) * x[j]).sum::<f64>();
            prop_assert!((y[k] - z.sin()).abs() < 1e-12);
            prop_assert!((y[m + k] - z.cos()).abs() < 1e-12);
        }
        prop_assert_eq!(&y[2 * m..], &x[..]);
    }

    #[test]
    fn weights_round_trip_bit_exactly(seed in any::<u64>()) {
        let net = softplus_net(&[2, 5, 3], seed);
        let text = Versioned::new("mlp", net.clone()).to_json().unwrap();
        let back: Mlp = Versioned::from_json(&text, "mlp").unwrap();
        prop_assert_eq!(
            back.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            net.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn activation_values_at_zero(beta in 0.1f64..100.0, slope in 0.0f64..0.5) {
        prop_assert_eq!(Activation::Selu.apply(0.0), 0.0);
        prop_assert_eq!(Activation::LeakyRelu { slope }.apply(0.0), 0.0);
        let sp = Activation::Softplus { beta }.apply(0.0);
        prop_assert!((sp - 2f64.ln() / beta).abs() < 1e-14 * (1.0 + 1.0 / beta));
    }

    #[test]
    fn gradient_of_sum_is_sum_of_gradients(seed in any::<u64>()) {
        let net = softplus_net(&[2, 4, 1], seed);
        let x1 = random_matrix(3, 2, seed ^ 5);
        let x2 = random_matrix(3, 2, seed ^ 6);
        let y = Matrix::zeros(3, 1);
        let (_, g1) = tape_gradient(&net, &x1, &y);
        let (_, g2) = tape_gradient(&net, &x2, &y);
        let (_, g12) = param_grad(&net, |tape, vars| {
            let mut total = None;
            for x in [&x1, &x2] {
                let xv = tape.constant(x.clone());
                let out = net.forward_tape(tape, vars, xv, Mode::Eval, 0)?;
                let sq = tape.square(out);
                let s = tape.sum(sq);
                let s = tape.scale(s, 1.0 / 3.0);
                total = Some(match total { None => s, Some(t) => tape.add(t, s) });
            }
            Ok(total.unwrap())
        })
        .unwrap();
        for ((a, b), c) in g1.iter().zip(&g2).zip(&g12) {
            prop_assert!((a + b - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
    }
}

#[test]
fn dropout_zeroes_at_rate_and_preserves_expectation() {
    let p = 0.3;
    let layer = Layer {
        weight: Matrix::identity(200),
        bias: vec![0.0; 200],
        activation: Activation::Linear,
        dropout: p,
    };
    let net = Mlp::from_layers(vec![layer]).unwrap();
    let x = vec![1.0; 200];
    let mut zeros = 0usize;
    let mut mean = vec![0.0; 200];
    let draws = 400;
    for seed in 0..draws {
        let y = net.forward(&x, Mode::Train, seed).unwrap();
        for (m, v) in mean.iter_mut().zip(&y) {
            if *v == 0.0 {
                zeros += 1;
            } else {
                assert!((v - 1.0 / (1.0 - p)).abs() < 1e-12);
            }
            *m += v / draws as f64;
        }
    }
    let rate = zeros as f64 / (200 * draws) as f64;
    let se = (p * (1.0 - p) / (200 * draws) as f64).sqrt();
    assert!((rate - p).abs() < 5.0 * se, "rate {rate}");
    let eval = net.forward(&x, Mode::Eval, 0).unwrap();
    let avg: f64 = mean.iter().sum::<f64>() / 200.0;
    let per_unit_sd = (p / (1.0 - p)).sqrt();
    assert!((avg - eval[0]).abs() < 5.0 * per_unit_sd / ((200 * draws) as f64).sqrt());
}

#[test]
fn adam_defaults() {
    let c = AdamConfig::default();
    assert_eq!((c.lr, c.beta1, c.beta2, c.eps), (1e-3, 0.9, 0.999, 1e-8));
}
