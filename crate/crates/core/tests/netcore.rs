use conformal_teleop::netcore::{
    forward, pinball, quantile_grad, quantile_levels, quantile_loss, train_quantile, Mlp, ModelFile,
    ModelMeta, QuantilePrediction, Sample, TrainConfig,
};
use conformal_teleop::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

/// `[2, 1, 6, 3]`: one GELU unit, the tanh bottleneck, a linear head with n_a = 1.
fn hand_model() -> Mlp<f64> {
    Mlp::from_parameters(
        &[2, 1, 6, 3],
        vec![
            (vec![0.5, -1.0], vec![0.25]),
            (vec![1.0, -1.0, 0.5, 2.0, 0.0, -0.5], vec![0.0, 0.1, 0.0, 0.0, 0.2, 0.0]),
            (
                vec![
                    0.3, -0.2, 0.1, 0.0, 0.5, -0.4, //
                    1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                    0.0, 0.0, 0.0, 1.0, 0.0, 1.0,
                ],
                vec![0.05, -0.5, 0.5],
            ),
        ],
    )
    .unwrap()
}

#[test]
fn hand_evaluated_forward() {
    // Evaluated independently in double precision:
    // g = gelu(0.75), z = tanh(w2 g + b2), out = W3 z + b3.
    let p = forward(&hand_model(), &[1.0, 0.0]).unwrap();
    let golden = [0.5357794219990735, 0.02263675976676649, 1.038897509979375];
    for (got, want) in [p.a_hat[0], p.q_lo[0], p.q_hi[0]].iter().zip(golden) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
}

#[test]
fn zero_model_predicts_zero() {
    let m = Mlp::<f64>::zeros(&Mlp::<f64>::default_dims(4, 6)).unwrap();
    let p = forward(&m, &[0.3, -2.0, 5.0, 1.0]).unwrap();
    assert!(p.a_hat.iter().chain(&p.q_lo).chain(&p.q_hi).all(|v| *v == 0.0));
    assert_eq!(p.n_a(), 2);
}

#[test]
fn forward_is_deterministic_and_checks_input() {
    let m = Mlp::<f64>::init(&Mlp::<f64>::default_dims(3, 9), 5).unwrap();
    let x = [0.1, 0.2, -0.7];
    let a = forward(&m, &x).unwrap();
    let b = forward(&m, &x).unwrap();
    assert_eq!(a, b);
    assert!(matches!(forward(&m, &[0.1, 0.2]), Err(Error::DimensionMismatch { .. })));
    assert!(forward(&m, &[0.1, f64::NAN, 0.0]).is_err());
}

#[test]
fn pinball_examples() {
    assert!((pinball(0.0f64, 1.0, 0.95) - 0.95).abs() < 1e-15);
    assert!((pinball(1.0f64, 0.0, 0.95) - 0.05).abs() < 1e-15);
    assert_eq!(pinball(0.4f64, 0.4, 0.3), 0.0);
}

#[test]
fn loss_worked_example() {
    let (tau_lo, tau_hi) = quantile_levels(0.1).unwrap();
    let pred = QuantilePrediction::<f64> {
        a_hat: vec![0.0],
        q_lo: vec![0.0],
        q_hi: vec![0.0],
    };
    let (total, parts) = quantile_loss(&pred, &[1.0], tau_lo, tau_hi).unwrap();
    assert_eq!(parts.mse, 1.0);
    assert!((parts.pin_lo - 0.05).abs() < 1e-15);
    assert!((parts.pin_hi - 0.95).abs() < 1e-15);
    assert!((total - 2.0).abs() < 1e-15);
}

#[test]
fn loss_matches_elementwise_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(17);
    for _ in 0..200 {
        let n = rng.random_range(1..6);
        let mut v = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let (a, lo, hi, y) = (v(), v(), v(), v());
        let (tau_lo, tau_hi) = (0.05, 0.95);
        let pred = QuantilePrediction {
            a_hat: a.clone(),
            q_lo: lo.clone(),
            q_hi: hi.clone(),
        };
        let (total, parts) = quantile_loss(&pred, &y, tau_lo, tau_hi).unwrap();

        let (mut mse, mut pl, mut ph) = (0.0, 0.0, 0.0);
        for d in 0..n {
            mse += (a[d] - y[d]) * (a[d] - y[d]);
            let r = y[d] - lo[d];
            pl += if r >= 0.0 { tau_lo * r } else { (tau_lo - 1.0) * r };
            let r = y[d] - hi[d];
            ph += if r >= 0.0 { tau_hi * r } else { (tau_hi - 1.0) * r };
        }
        let k = n as f64;
        assert!((parts.mse - mse / k).abs() < 1e-12);
        assert!((parts.pin_lo - pl / k).abs() < 1e-12);
        assert!((parts.pin_hi - ph / k).abs() < 1e-12);
        assert!((total - (parts.mse + parts.pin_lo + parts.pin_hi)).abs() < 1e-15);
    }
}

proptest! {
    #[test]
    fn pinball_is_midpoint_convex(y in -10.0f64..10.0, p1 in -10.0f64..10.0, gap in 0.0f64..10.0, tau in 0.01f64..0.99) {
        let p3 = p1 + gap;
        let p2 = (p1 + p3) / 2.0;
        prop_assert!(pinball(p2, y, tau) <= (pinball(p1, y, tau) + pinball(p3, y, tau)) / 2.0 + 1e-12);
    }

    #[test]
    fn pinball_zero_only_at_target(p in -5.0f64..5.0, y in -5.0f64..5.0, tau in 0.01f64..0.99) {
        prop_assert!(pinball(p, y, tau) >= 0.0);
        prop_assert_eq!(pinball(p, y, tau) == 0.0, p == y);
    }
}

fn random_model(rng: &mut Xoshiro256PlusPlus, dims: &[usize]) -> Mlp<f64> {
    let mut m = Mlp::init(dims, rng.random()).unwrap();
    for i in 0..m.param_count() {
        let v = m.param(i) + rng.random_range(-0.2..0.2);
        m.set_param(i, v);
    }
    m
}

fn batch_loss(m: &Mlp<f64>, batch: &[&Sample<f64>], tau_lo: f64, tau_hi: f64) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|s| {
            let p = forward(m, &s.input).unwrap();
            quantile_loss(&p, &s.target, tau_lo, tau_hi).unwrap().0
        })
        .sum();
    total / batch.len() as f64
}

/// Smallest distance from any quantile head to its target over the batch.
fn kink_margin(m: &Mlp<f64>, batch: &[&Sample<f64>]) -> f64 {
    batch
        .iter()
        .flat_map(|s| {
            let p = forward(m, &s.input).unwrap();
            let mut r: Vec<f64> = p.q_lo.iter().zip(&s.target).map(|(q, y)| (y - q).abs()).collect();
            r.extend(p.q_hi.iter().zip(&s.target).map(|(q, y)| (y - q).abs()));
            r
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(99);
    let (tau_lo, tau_hi) = (0.05, 0.95);
    let h = 1e-5;
    let mut draws = 0;
    while draws < 100 {
        let dims = [3, rng.random_range(2..6), 6, 6];
        let mut m = random_model(&mut rng, &dims);
        let samples: Vec<Sample<f64>> = (0..rng.random_range(1..4))
            .map(|_| {
                Sample::new(
                    (0..3).map(|_| rng.random_range(-1.5..1.5)).collect(),
                    (0..2).map(|_| rng.random_range(-1.5..1.5)).collect(),
                )
            })
            .collect();
        let batch: Vec<&Sample<f64>> = samples.iter().collect();
        // A perturbation of size h moves outputs by far less than this.
        if kink_margin(&m, &batch) < 1e-3 {
            continue;
        }
        draws += 1;
        let (_, g) = quantile_grad(&m, &batch, tau_lo, tau_hi).unwrap();
        let g = g.flatten();
        for i in 0..m.param_count() {
            let w = m.param(i);
            m.set_param(i, w + h);
            let up = batch_loss(&m, &batch, tau_lo, tau_hi);
            m.set_param(i, w - h);
            let down = batch_loss(&m, &batch, tau_lo, tau_hi);
            m.set_param(i, w);
            let fd = (up - down) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1e-6);
            assert!((g[i] - fd).abs() / scale < 1e-4, "param {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn duplicated_batch_has_the_same_gradient() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
    let m = random_model(&mut rng, &[2, 8, 6, 3]);
    let s = Sample::new(vec![0.4, -0.3], vec![0.7]);
    let (_, one) = quantile_grad(&m, &[&s], 0.05, 0.95).unwrap();
    let (_, five) = quantile_grad(&m, &[&s; 5], 0.05, 0.95).unwrap();
    for (a, b) in one.flatten().iter().zip(five.flatten()) {
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }
}

#[test]
fn perfect_fit_leaves_only_the_kink_subgradient() {
    // With every head on the target, the mean head has zero gradient and
    // each quantile head sits on the r <= 0 branch, d/dpred = 1 - tau.
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let m = random_model(&mut rng, &[2, 4, 6, 3]);
    let x = vec![0.2, 0.9];
    let p = forward(&m, &x).unwrap();
    let mut zeroed = m.clone();
    let last = zeroed.layers().len() - 1;
    {
        let layer = &mut zeroed.layers_mut()[last];
        // Make all three heads produce the mean head's value.
        let row: Vec<f64> = layer.weights[..layer.in_dim].to_vec();
        let b0 = layer.bias[0];
        for r in 1..3 {
            layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim].copy_from_slice(&row);
            layer.bias[r] = b0;
        }
    }
    let s = Sample::new(x.clone(), vec![forward(&zeroed, &x).unwrap().a_hat[0]]);
    let (loss, g) = quantile_grad(&zeroed, &[&s], 0.05, 0.95).unwrap();
    assert_eq!(loss, 0.0);
    let out_bias = &g.bias[last];
    assert_eq!(out_bias[0], 0.0);
    assert!((out_bias[1] - 0.95).abs() < 1e-15);
    assert!((out_bias[2] - 0.05).abs() < 1e-15);
    assert!(p.n_a() == 1);
}

#[test]
fn training_fits_identity_map() {
    let data: Vec<Sample<f64>> = (0..41)
        .map(|i| {
            let x = -1.0 + i as f64 * 0.05;
            Sample::new(vec![x], vec![x])
        })
        .collect();
    let config = TrainConfig {
        epochs: 300,
        batch_size: 1,
        seed: 4,
        ..TrainConfig::default()
    };
    let m = Mlp::init(&[1, 16, 6, 3], 4).unwrap();
    let (m, curve) = train_quantile(m, &data, &config).unwrap();
    assert_eq!(curve.len(), 300);
    let mse: f64 = data
        .iter()
        .map(|s| {
            let p = forward(&m, &s.input).unwrap();
            quantile_loss(&p, &s.target, 0.05, 0.95).unwrap().1.mse
        })
        .sum::<f64>()
        / data.len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let m = Mlp::<f64>::init(&[1, 6, 3], 1).unwrap();
    let data = vec![Sample::new(vec![1.0], vec![2.0])];
    let config = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let (out, curve) = train_quantile(m.clone(), &data, &config).unwrap();
    assert_eq!(out, m);
    assert!(curve.is_empty());
}

#[test]
fn training_is_reproducible() {
    let data: Vec<Sample<f64>> = (0..30)
        .map(|i| Sample::new(vec![i as f64 / 30.0, 1.0], vec![(i % 7) as f64 / 7.0]))
        .collect();
    let config = TrainConfig {
        epochs: 5,
        batch_size: 4,
        seed: 12,
        ..TrainConfig::default()
    };
    let run = || train_quantile(Mlp::init(&[2, 8, 6, 3], 12).unwrap(), &data, &config).unwrap();
    let (a, ca) = run();
    let (b, cb) = run();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
}

#[test]
fn divergence_names_the_epoch() {
    let data = vec![Sample::new(vec![1.0], vec![1e300])];
    let config = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let err = train_quantile(Mlp::init(&[1, 6, 3], 0).unwrap(), &data, &config).unwrap_err();
    assert!(matches!(err, Error::TrainingDiverged { epoch: 0 }), "{err}");
    let err = train_quantile(Mlp::<f64>::init(&[1, 6, 3], 0).unwrap(), &[], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
}

#[test]
fn config_validation() {
    let mut c = TrainConfig::<f64>::default();
    assert!(c.validate().is_ok());
    c.alpha = 1.0;
    assert!(c.validate().is_err());
    c.alpha = 0.1;
    c.batch_size = 0;
    assert!(c.validate().is_err());
    c.batch_size = 1;
    c.learning_rate = 0.0;
    assert!(c.validate().is_err());
}

#[test]
fn architecture_is_enforced() {
    assert!(Mlp::<f64>::init(&[3, 64, 5, 6], 0).is_err());
    assert!(Mlp::<f64>::init(&[3, 6], 0).is_err());
    let m = Mlp::<f64>::init(&Mlp::<f64>::default_dims(5, 9), 0).unwrap();
    assert_eq!(m.layer_dims(), &[5, 64, 64, 6, 9]);
    assert_eq!(m.layer_dims()[m.bottleneck_layer() + 1], 6);
    for (l, w) in m.layers().iter().zip(m.layer_dims().windows(2)) {
        assert_eq!(l.weights.len(), w[0] * w[1]);
        assert_eq!(l.bias.len(), w[1]);
    }
}

#[test]
fn json_round_trip_is_bit_exact() {
    let m = Mlp::<f64>::init(&Mlp::<f64>::default_dims(4, 6), 77).unwrap();
    let meta = ModelMeta {
        kind: "qr".into(),
        layer_dims: m.layer_dims().to_vec(),
        n_a: 2,
        n_s: None,
        n_u: None,
        seed: 77,
        alpha: 0.1,
        input_scale: None,
        env: None,
    };
    let text = ModelFile::from_mlp(&m, meta).to_json().unwrap();
    let back: Mlp<f64> = ModelFile::from_json(&text).unwrap().to_mlp().unwrap();
    let x = [0.11, -0.37, 0.5, 2.0];
    assert_eq!(forward(&m, &x).unwrap(), forward(&back, &x).unwrap());
    assert_eq!(m, back);
}

#[test]
fn single_precision_model_tracks_double() {
    let m = Mlp::<f64>::init(&Mlp::<f64>::default_dims(3, 3), 21).unwrap();
    let m32: Mlp<f32> = m.cast();
    let a = forward(&m, &[0.2, 0.4, -0.1]).unwrap();
    let b = forward(&m32, &[0.2f32, 0.4, -0.1]).unwrap();
    for (x, y) in a.a_hat.iter().zip(&b.a_hat) {
        assert!((x - f64::from(*y)).abs() < 1e-5);
    }
}
