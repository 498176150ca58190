use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use ncalg::algnn::{AlgNN, LayerSpec, Nonlinearity, Pooling, TapsMode};
use ncalg::asm::{apply, apply_streaming, instantiate};
use ncalg::spectral::{joint_block_diagonalize, JbdOptions};
use ncalg::{rng, NcPolynomial, ShiftSet, Word};

fn shifts(n: usize, m: usize, seed: u64) -> ShiftSet {
    let mut r = rng::seeded(seed);
    let s = (0..m)
        .map(|_| rng::gaussian_symmetric(&mut r, n) / (n as f64).sqrt())
        .collect();
    ShiftSet::new(s).unwrap()
}

fn dense_poly(m: usize, degree: usize) -> NcPolynomial {
    let terms = Word::all_up_to(m, degree)
        .into_iter()
        .enumerate()
        .map(|(i, w)| (w, 1.0 / (1 + i) as f64));
    NcPolynomial::from_terms(m, terms).unwrap()
}

fn filtering(c: &mut Criterion) {
    let mut g = c.benchmark_group("filter");
    let p = dense_poly(2, 3);
    for n in [16, 64, 128] {
        let s = shifts(n, 2, 1);
        let x = rng::gaussian_vector(&mut rng::seeded(2), n);
        g.bench_with_input(BenchmarkId::new("instantiate_apply", n), &n, |b, _| {
            b.iter(|| apply(&instantiate(&p, &s).unwrap(), black_box(&x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("streaming", n), &n, |b, _| {
            b.iter(|| apply_streaming(&p, &s, black_box(&x)).unwrap())
        });
    }
    g.finish();
}

/// `Q diag(B_1, …, B_k) Qᵀ` with random symmetric 2×2 blocks.
fn block_instance(blocks: usize, seed: u64) -> ShiftSet {
    let mut r = rng::seeded(seed);
    let n = 2 * blocks;
    let q = rng::random_orthogonal(&mut r, n);
    let s = (0..2)
        .map(|_| {
            let mut d = DMatrix::zeros(n, n);
            for k in 0..blocks {
                d.view_mut((2 * k, 2 * k), (2, 2))
                    .copy_from(&rng::gaussian_symmetric(&mut r, 2));
            }
            let s = &q * d * q.transpose();
            (&s + s.transpose()) * 0.5
        })
        .collect();
    ShiftSet::new(s).unwrap()
}

fn jbd(c: &mut Criterion) {
    let mut g = c.benchmark_group("jbd");
    g.sample_size(10);
    for blocks in [4, 8, 12] {
        let s = block_instance(blocks, 3);
        g.bench_with_input(BenchmarkId::from_parameter(2 * blocks), &s, |b, s| {
            b.iter(|| joint_block_diagonalize(black_box(s), &JbdOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let n = 60;
    let s = Arc::new(shifts(n, 2, 4));
    let specs = (0..2)
        .map(|l| LayerSpec {
            shifts: s.clone(),
            words: TapsMode::Degree.words(2, 3),
            f_in: if l == 0 { 1 } else { 4 },
            f_out: 4,
            nonlinearity: Nonlinearity::Relu,
            pooling: Pooling::Identity,
        })
        .collect();
    let net = AlgNN::init(specs, 1, 5).unwrap();
    let x = DMatrix::from_column_slice(n, 1, rng::gaussian_vector(&mut rng::seeded(6), n).as_slice());
    let mut g = c.benchmark_group("algnn");
    g.bench_function("forward", |b| b.iter(|| net.forward(black_box(&x)).unwrap()));
    let cache = net.forward(&x).unwrap();
    let upstream = cache.output.clone();
    g.bench_function("backward", |b| {
        b.iter(|| net.backward(&cache, black_box(&upstream)).unwrap())
    });
    g.finish();
}

criterion_group!(benches, filtering, jbd, network);
criterion_main!(benches);
