mod common;

use std::sync::Arc;

use common::random_shifts;
use nalgebra::{DMatrix, DVector};
use ncalg::algnn::{
    mean_squared_error, train, AlgNN, LayerSpec, Nonlinearity, Optimizer, Pooling, Sample, TapsMode, TrainConfig,
};
use ncalg::rng;
use ncalg::{ShiftSet, Word};

fn net(s: Arc<ShiftSet>, layers: usize, nl: Nonlinearity, out: usize, seed: u64) -> AlgNN {
    let specs = (0..layers)
        .map(|l| LayerSpec {
            shifts: s.clone(),
            words: TapsMode::Degree.words(s.num_generators(), 3),
            f_in: if l == 0 { 1 } else { 2 },
            f_out: 2,
            nonlinearity: nl,
            pooling: if l + 1 == layers {
                Pooling::Truncate(s.dim() - 2)
            } else {
                Pooling::Identity
            },
        })
        .collect();
    AlgNN::init(specs, out, seed).unwrap()
}

/// ½‖y − t‖² for one sample.
fn half_sq(n: &AlgNN, x: &DMatrix<f64>, t: &DVector<f64>) -> f64 {
    0.5 * (n.predict(x).unwrap() - t).norm_squared()
}

#[test]
fn gradients_match_central_differences() {
    let mut r = rng::seeded(1);
    let s = Arc::new(random_shifts(&mut r, 8, 2, 1.0));
    let mut model = net(s, 2, Nonlinearity::Tanh, 3, 7);
    let x = DMatrix::from_column_slice(8, 1, rng::gaussian_vector(&mut r, 8).as_slice());
    let t = rng::gaussian_vector(&mut r, 3);
    let cache = model.forward(&x).unwrap();
    let grads = model.backward(&cache, &(&cache.output - &t)).unwrap().0;
    let params = model.params();
    let h = 1e-5;
    for k in 0..params.len() {
        let mut p = params.clone();
        p[k] += h;
        model.set_params(&p).unwrap();
        let up = half_sq(&model, &x, &t);
        p[k] -= 2.0 * h;
        model.set_params(&p).unwrap();
        let down = half_sq(&model, &x, &t);
        let fd = (up - down) / (2.0 * h);
        let denom = grads[k].abs().max(fd.abs()).max(1e-6);
        assert!((grads[k] - fd).abs() / denom <= 1e-5, "param {k}: {} vs {fd}", grads[k]);
    }
}

#[test]
fn forward_is_lipschitz_in_the_input() {
    let mut r = rng::seeded(2);
    let s = Arc::new(random_shifts(&mut r, 7, 2, 1.0));
    let model = net(s, 2, Nonlinearity::Relu, 1, 3);
    let factor: f64 = model
        .layers()
        .iter()
        .map(|l| {
            let c = l.certificate().unwrap();
            c.lipschitz * c.norm_bound
        })
        .product();
    for _ in 0..50 {
        let a = DMatrix::from_column_slice(7, 1, rng::gaussian_vector(&mut r, 7).as_slice());
        let b = DMatrix::from_column_slice(7, 1, rng::gaussian_vector(&mut r, 7).as_slice());
        let da = model.layer_map(&a, None).unwrap();
        let db = model.layer_map(&b, None).unwrap();
        assert!((da - db).norm() <= factor * (a - b).norm() * (1.0 + 1e-12));
    }
}

#[test]
fn linear_filter_learns_a_shift() {
    let mut r = rng::seeded(3);
    let n = 5;
    let s = Arc::new(random_shifts(&mut r, n, 2, 1.0));
    let spec = LayerSpec {
        shifts: s.clone(),
        words: Word::all_up_to(2, 1),
        f_in: 1,
        f_out: 1,
        nonlinearity: Nonlinearity::Identity,
        pooling: Pooling::Identity,
    };
    let mut model = AlgNN::init(vec![spec], n, 4).unwrap();
    let data: Vec<Sample> = (0..64)
        .map(|_| {
            let x = rng::gaussian_vector(&mut r, n);
            let y = s.shift(1) * &x;
            Sample::from_signal(x, y)
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 1e-2,
        batch_size: 8,
        il_weight: 0.0,
        seed: 1,
        optimizer: Optimizer::Adam,
    };
    let hist = train(&mut model, &data, &cfg).unwrap();
    assert!(
        mean_squared_error(&model, &data).unwrap() < 1e-6,
        "{:?}",
        hist.loss.last()
    );
}

fn sweep_data(r: &mut rng::SeededRng, s: &ShiftSet) -> Vec<Sample> {
    (0..48)
        .map(|_| {
            let x = rng::gaussian_vector(r, s.dim());
            let y = DVector::from_element(1, (s.shift(0) * s.shift(1) * &x).sum());
            Sample::from_signal(x, y)
        })
        .collect()
}

#[test]
fn heavier_penalty_lowers_integral_lipschitz_constant() {
    let mut r = rng::seeded(5);
    let s = Arc::new(random_shifts(&mut r, 6, 2, 1.0));
    let data = sweep_data(&mut r, &s);
    let mut l1 = Vec::new();
    for weight in [0.0, 0.05, 0.5] {
        let mut model = net(s.clone(), 1, Nonlinearity::Relu, 1, 9);
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 1e-2,
            batch_size: 8,
            il_weight: weight,
            seed: 2,
            optimizer: Optimizer::Adam,
        };
        let hist = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(hist.penalty.len(), 60);
        l1.push(model.max_l1().unwrap());
    }
    assert!(l1[0] > l1[1] && l1[1] > l1[2], "{l1:?}");
}

#[test]
fn training_is_bit_reproducible() {
    let mut r = rng::seeded(6);
    let s = Arc::new(random_shifts(&mut r, 6, 2, 1.0));
    let data = sweep_data(&mut r, &s);
    let run = || {
        let mut model = net(s.clone(), 2, Nonlinearity::Relu, 1, 11);
        let cfg = TrainConfig {
            epochs: 5,
            il_weight: 0.01,
            ..TrainConfig::default()
        };
        let hist = train(&mut model, &data, &cfg).unwrap();
        (hist, model.params())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
}

#[test]
fn divergence_is_reported() {
    let mut r = rng::seeded(7);
    let s = Arc::new(random_shifts(&mut r, 4, 1, 1.0));
    let mut model = net(s, 1, Nonlinearity::Identity, 1, 1);
    let data = vec![Sample::from_signal(
        DVector::from_element(4, 1.0),
        DVector::from_element(1, f64::NAN),
    )];
    let err = train(&mut model, &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, ncalg::Error::Divergence { .. }));
}
