//! Algebraic signal model: shift operators and filter instantiation.
//!
//! A filter `p` is realized as `ρ(p) = Σ_w h_w S_{w1} S_{w2} ⋯ S_{wk}` with
//! the empty word mapped to the identity.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_dim, ensure_generators, Error, Result};
use crate::linalg;
use crate::ncpoly::{NcPolynomial, Word};

/// Largest dimension accepted by [`instantiate`] unless overridden.
pub const DEFAULT_DIM_CAP: usize = 4096;

pub type Signal = DVector<f64>;

/// Ordered list of square shift operators of a common dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSet {
    dim: usize,
    shifts: Vec<DMatrix<f64>>,
}

impl ShiftSet {
    pub fn new(shifts: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = shifts
            .first()
            .ok_or_else(|| Error::InvalidArgument("a shift set needs at least one shift".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidArgument("shift dimension must be positive".into()));
        }
        for s in &shifts {
            if !s.is_square() {
                return Err(Error::InvalidArgument(format!(
                    "shift is {}x{}, not square",
                    s.nrows(),
                    s.ncols()
                )));
            }
            ensure_dim(dim, s.nrows())?;
        }
        Ok(ShiftSet { dim, shifts })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_generators(&self) -> usize {
        self.shifts.len()
    }

    pub fn shift(&self, i: usize) -> &DMatrix<f64> {
        &self.shifts[i]
    }

    pub fn shifts(&self) -> &[DMatrix<f64>] {
        &self.shifts
    }

    pub fn into_shifts(self) -> Vec<DMatrix<f64>> {
        self.shifts
    }

    /// Spectral norms of the individual shifts.
    pub fn norms(&self) -> Vec<f64> {
        self.shifts.iter().map(linalg::spectral_norm).collect()
    }

    pub fn max_norm(&self) -> f64 {
        self.norms().into_iter().fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.shifts.iter().all(|s| linalg::is_symmetric(s, rel_tol))
    }
}

/// A materialized filter `ρ(p)` together with what produced it.
#[derive(Clone, Debug)]
pub struct FilterOperator<'a> {
    pub matrix: DMatrix<f64>,
    pub polynomial: &'a NcPolynomial,
    pub shifts: &'a ShiftSet,
}

fn check_compatible(p: &NcPolynomial, s: &ShiftSet) -> Result<()> {
    ensure_generators(p.num_generators(), s.num_generators())
}

/// Materializes `ρ(p) = p(S_1, …, S_m)` using the default dimension cap.
pub fn instantiate<'a>(p: &'a NcPolynomial, s: &'a ShiftSet) -> Result<FilterOperator<'a>> {
    instantiate_with_cap(p, s, DEFAULT_DIM_CAP)
}

pub fn instantiate_with_cap<'a>(p: &'a NcPolynomial, s: &'a ShiftSet, dim_cap: usize) -> Result<FilterOperator<'a>> {
    check_compatible(p, s)?;
    if s.dim() > dim_cap {
        return Err(Error::DimensionCap {
            dim: s.dim(),
            cap: dim_cap,
        });
    }
    Ok(FilterOperator {
        matrix: polynomial_matrix(p, s.shifts()),
        polynomial: p,
        shifts: s,
    })
}

/// Word expansion of `p` at the given matrices, with prefix products shared
/// across terms. Callers check generator counts.
pub(crate) fn polynomial_matrix(p: &NcPolynomial, shifts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = shifts[0].nrows();
    let mut out = DMatrix::zeros(n, n);
    let mut prefixes: HashMap<Vec<usize>, DMatrix<f64>> = HashMap::new();
    for (w, h) in p.terms() {
        if w.is_unit() {
            for i in 0..n {
                out[(i, i)] += h;
            }
            continue;
        }
        let product = prefix_product(w.letters(), shifts, &mut prefixes);
        out += product * h;
    }
    out
}

fn prefix_product<'c>(
    letters: &[usize],
    shifts: &[DMatrix<f64>],
    cache: &'c mut HashMap<Vec<usize>, DMatrix<f64>>,
) -> &'c DMatrix<f64> {
    if !cache.contains_key(letters) {
        let value = if letters.len() == 1 {
            shifts[letters[0]].clone()
        } else {
            let (head, last) = letters.split_at(letters.len() - 1);
            let prefix = prefix_product(head, shifts, cache);
            prefix * &shifts[last[0]]
        };
        cache.insert(letters.to_vec(), value);
    }
    &cache[letters]
}

/// `y = ρ(p) x`.
pub fn apply(f: &FilterOperator<'_>, x: &Signal) -> Result<Signal> {
    ensure_dim(f.matrix.ncols(), x.len())?;
    Ok(&f.matrix * x)
}

/// `ρ(p) x` without materializing `ρ(p)`.
///
/// Each word is applied right to left; vectors for shared suffixes are
/// computed once.
pub fn apply_streaming(p: &NcPolynomial, s: &ShiftSet, x: &Signal) -> Result<Signal> {
    check_compatible(p, s)?;
    ensure_dim(s.dim(), x.len())?;
    let words: Vec<&Word> = p.terms().map(|(w, _)| w).collect();
    let vectors = word_vectors(words.iter().copied(), s, x);
    let mut y = DVector::zeros(s.dim());
    for ((_, h), v) in p.terms().zip(vectors.iter()) {
        y.axpy(h, v, 1.0);
    }
    Ok(y)
}

/// `S_{w1} S_{w2} ⋯ S_{wk} x` for every word, memoized on suffixes.
///
/// Generator indices and dimensions must already be validated.
pub fn word_vectors<'w>(words: impl IntoIterator<Item = &'w Word>, s: &ShiftSet, x: &Signal) -> Vec<Signal> {
    let mut cache: HashMap<Vec<usize>, Signal> = HashMap::new();
    words
        .into_iter()
        .map(|w| suffix_vector(w.letters(), s, x, &mut cache).clone())
        .collect()
}

fn suffix_vector<'c>(
    letters: &[usize],
    s: &ShiftSet,
    x: &Signal,
    cache: &'c mut HashMap<Vec<usize>, Signal>,
) -> &'c Signal {
    if !cache.contains_key(letters) {
        let value = if letters.is_empty() {
            x.clone()
        } else {
            let tail = suffix_vector(&letters[1..], s, x, cache);
            s.shift(letters[0]) * tail
        };
        cache.insert(letters.to_vec(), value);
    }
    &cache[letters]
}

/// `(S_{w1} ⋯ S_{wk})ᵀ y = S_{wk}ᵀ ⋯ S_{w1}ᵀ y` for every word, memoized on
/// prefixes.
pub fn word_vectors_transposed<'w>(words: impl IntoIterator<Item = &'w Word>, s: &ShiftSet, y: &Signal) -> Vec<Signal> {
    let mut cache: HashMap<Vec<usize>, Signal> = HashMap::new();
    words
        .into_iter()
        .map(|w| prefix_vector_t(w.letters(), s, y, &mut cache).clone())
        .collect()
}

fn prefix_vector_t<'c>(
    letters: &[usize],
    s: &ShiftSet,
    y: &Signal,
    cache: &'c mut HashMap<Vec<usize>, Signal>,
) -> &'c Signal {
    if !cache.contains_key(letters) {
        let value = if letters.is_empty() {
            y.clone()
        } else {
            let (head, last) = letters.split_at(letters.len() - 1);
            let inner = prefix_vector_t(head, s, y, cache);
            s.shift(last[0]).tr_mul(inner)
        };
        cache.insert(letters.to_vec(), value);
    }
    &cache[letters]
}

/// Upper bound on ‖ρ(p)‖₂, plus the exact norm when `ρ(p)` is small enough to
/// materialize.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormBound {
    pub bound: f64,
    pub exact: Option<f64>,
}

/// `Σ_w |h_w| Π_j ‖S_{wj}‖₂`.
pub fn operator_norm_bound(p: &NcPolynomial, s: &ShiftSet) -> Result<NormBound> {
    check_compatible(p, s)?;
    let norms = s.norms();
    let bound = norm_bound_with(p, &norms);
    let exact = if s.dim() <= linalg::DENSE_SVD_CAP {
        Some(linalg::spectral_norm(&polynomial_matrix(p, s.shifts())))
    } else {
        None
    };
    Ok(NormBound { bound, exact })
}

pub(crate) fn norm_bound_with(p: &NcPolynomial, shift_norms: &[f64]) -> f64 {
    p.terms()
        .map(|(w, h)| h.abs() * w.letters().iter().map(|&l| shift_norms[l]).product::<f64>())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncpoly::tests::example_filter;
    use crate::rng;

    fn w(letters: &[usize]) -> Word {
        Word::new(letters.to_vec())
    }

    fn cyclic(n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| if j == (i + n - 1) % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn unit_is_identity() {
        let s = ShiftSet::new(vec![cyclic(4), DMatrix::identity(4, 4) * 2.0]).unwrap();
        let one = NcPolynomial::one(2).unwrap();
        let f = instantiate(&one, &s).unwrap();
        assert_eq!(f.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn example_filter_at_identities() {
        let s = ShiftSet::new(vec![DMatrix::identity(2, 2), DMatrix::identity(2, 2)]).unwrap();
        let p = example_filter();
        let f = instantiate(&p, &s).unwrap();
        assert_eq!(f.matrix, DMatrix::identity(2, 2) * 7.0);
    }

    #[test]
    fn commutator_of_ladder_operators() {
        let s1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let s2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let s = ShiftSet::new(vec![s1, s2]).unwrap();
        let p = NcPolynomial::from_terms(2, [(w(&[0, 1]), 1.0), (w(&[1, 0]), -1.0)]).unwrap();
        let f = instantiate(&p, &s).unwrap();
        assert_eq!(f.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
    }

    #[test]
    fn apply_examples() {
        let s = ShiftSet::new(vec![cyclic(3)]).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);

        let one = NcPolynomial::one(1).unwrap();
        assert_eq!(apply(&instantiate(&one, &s).unwrap(), &x).unwrap(), x);

        let zero = NcPolynomial::zero(1).unwrap();
        assert_eq!(apply(&instantiate(&zero, &s).unwrap(), &x).unwrap(), DVector::zeros(3));

        let g = NcPolynomial::generator(1, 0).unwrap();
        let y = apply(&instantiate(&g, &s).unwrap(), &x).unwrap();
        assert_eq!(y, DVector::from_vec(vec![3.0, 1.0, 2.0]));

        let short = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            apply(&instantiate(&g, &s).unwrap(), &short),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn streaming_word_semantics() {
        let mut r = rng::seeded(11);
        let s = ShiftSet::new(vec![
            rng::gaussian_matrix(&mut r, 5, 5),
            rng::gaussian_matrix(&mut r, 5, 5),
        ])
        .unwrap();
        let x = rng::gaussian_vector(&mut r, 5);
        let one = NcPolynomial::one(2).unwrap();
        assert_eq!(apply_streaming(&one, &s, &x).unwrap(), x);
        let p = NcPolynomial::monomial(2, w(&[1, 0]), 1.0).unwrap();
        let expected = s.shift(1) * (s.shift(0) * &x);
        assert!((apply_streaming(&p, &s, &x).unwrap() - expected).norm() < 1e-12);
    }

    #[test]
    fn transposed_words_are_adjoints() {
        let mut r = rng::seeded(12);
        let s = ShiftSet::new(vec![
            rng::gaussian_matrix(&mut r, 4, 4),
            rng::gaussian_matrix(&mut r, 4, 4),
        ])
        .unwrap();
        let x = rng::gaussian_vector(&mut r, 4);
        let y = rng::gaussian_vector(&mut r, 4);
        let words = Word::all_up_to(2, 3);
        let fwd = word_vectors(&words, &s, &x);
        let adj = word_vectors_transposed(&words, &s, &y);
        for (a, b) in fwd.iter().zip(&adj) {
            assert!((y.dot(a) - x.dot(b)).abs() < 1e-10 * (1.0 + y.dot(a).abs()));
        }
    }

    #[test]
    fn mismatches_rejected() {
        let s = ShiftSet::new(vec![cyclic(3)]).unwrap();
        let p = NcPolynomial::one(2).unwrap();
        assert!(matches!(instantiate(&p, &s), Err(Error::GeneratorMismatch { .. })));
        let q = NcPolynomial::one(1).unwrap();
        assert!(matches!(
            instantiate_with_cap(&q, &s, 2),
            Err(Error::DimensionCap { dim: 3, cap: 2 })
        ));
        assert!(ShiftSet::new(vec![cyclic(3), cyclic(4)]).is_err());
        assert!(ShiftSet::new(vec![]).is_err());
        assert!(ShiftSet::new(vec![DMatrix::zeros(2, 3)]).is_err());
    }

    #[test]
    fn norm_bound_examples() {
        let s = ShiftSet::new(vec![rng::random_orthogonal(&mut rng::seeded(2), 5)]).unwrap();
        let one = NcPolynomial::one(1).unwrap();
        let b = operator_norm_bound(&one, &s).unwrap();
        assert_eq!(b.bound, 1.0);
        let two_g = NcPolynomial::monomial(1, w(&[0]), 2.0).unwrap();
        let b = operator_norm_bound(&two_g, &s).unwrap();
        assert!((b.bound - 2.0).abs() < 1e-12);
        assert!((b.exact.unwrap() - 2.0).abs() < 1e-12);
    }
}
