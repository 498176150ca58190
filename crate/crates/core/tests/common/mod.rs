#![allow(dead_code)]

use nalgebra::DMatrix;
use ncalg::linalg::{block_diagonal, spectral_norm};
use ncalg::rng::{self, SeededRng};
use ncalg::{NcPolynomial, ShiftSet, Word};
use rand::Rng;

/// Random polynomial with up to `max_terms` Gaussian coefficients on words
/// of degree at most `max_degree`.
pub fn random_poly(r: &mut SeededRng, m: usize, max_degree: usize, max_terms: usize) -> NcPolynomial {
    let words = Word::all_up_to(m, max_degree);
    let terms = r.random_range(1..=max_terms);
    let picks: Vec<(Word, f64)> = (0..terms)
        .map(|_| {
            let w = words[r.random_range(0..words.len())].clone();
            (w, rng::normal(r))
        })
        .collect();
    NcPolynomial::from_terms(m, picks).unwrap()
}

/// `m` symmetric Gaussian shifts scaled to spectral norm `scale`.
pub fn random_shifts(r: &mut SeededRng, n: usize, m: usize, scale: f64) -> ShiftSet {
    ShiftSet::new(
        (0..m)
            .map(|_| {
                let s = rng::gaussian_symmetric(r, n);
                let norm = spectral_norm(&s);
                s * (scale / norm)
            })
            .collect(),
    )
    .unwrap()
}

/// Nonsymmetric Gaussian shifts with entries scaled by `1/√n`.
pub fn random_general_shifts(r: &mut SeededRng, n: usize, m: usize) -> ShiftSet {
    ShiftSet::new(
        (0..m)
            .map(|_| rng::gaussian_matrix(r, n, n) / (n as f64).sqrt())
            .collect(),
    )
    .unwrap()
}

/// Symmetric shifts that are block diagonal with the given block sizes in a
/// random orthogonal basis. Blocks of size ≥ 2 hold generic symmetric pairs,
/// so no finer invariant decomposition exists.
pub fn conjugated_blocks(r: &mut SeededRng, sizes: &[usize], m: usize) -> ShiftSet {
    let n: usize = sizes.iter().sum();
    let q = rng::random_orthogonal(r, n);
    let shifts = (0..m)
        .map(|_| {
            let blocks: Vec<DMatrix<f64>> = sizes.iter().map(|&k| rng::gaussian_symmetric(r, k)).collect();
            &q * block_diagonal(&blocks) * q.transpose()
        })
        .map(|s| (&s + s.transpose()) * 0.5)
        .collect();
    ShiftSet::new(shifts).unwrap()
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}
