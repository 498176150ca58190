//! Lipschitz (`L₀`) and integral-Lipschitz (`L₁`) constants of a filter's
//! matrix-polynomial representation.
//!
//! Both constants are taken over the product of operator-norm balls of
//! radius `B`, with the tuple norm `max_i ‖x_i − x̃_i‖₂`. For a word `w` of
//! degree `k`:
//!
//! * telescoping `x_{w1}⋯x_{wk} − x̃_{w1}⋯x̃_{wk}` gives `k · B^{k-1}`;
//! * the partial derivative in `x_i` applied to `H x_i` replaces each
//!   occurrence of `x_i` by `H x_i`, giving `occ_i(w) · B^k` for `‖H‖ <= 1`.
//!
//! Summing `|h_w|` times these gives the analytic certificates. The
//! empirical estimators sample the same quantities and are lower bounds.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::asm::polynomial_matrix;
use crate::error::{ensure_generators, Error, Result};
use crate::linalg::spectral_norm;
use crate::ncpoly::{NcPolynomial, Word};
use crate::rng;
use crate::spectral::SpectralDecomposition;

/// Softmax temperature of the trainable penalty.
pub const IL_TEMPERATURE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateMethod {
    Analytic,
    Empirical,
}

/// Where the suprema are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CertificateDomain {
    /// Operator-norm ball of radius `B`.
    #[default]
    Ball,
    /// Only the realized block frequencies of a spectral decomposition.
    Blocks,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub radius: f64,
    pub l0_bound: f64,
    pub l1_bounds: Vec<f64>,
    pub l1_bound: f64,
    pub method: CertificateMethod,
    pub domain: CertificateDomain,
}

impl LipschitzCertificate {
    pub fn analytic(p: &NcPolynomial, radius: f64) -> Result<Self> {
        let l1_bounds = analytic_l1(p, radius)?;
        Ok(LipschitzCertificate {
            radius,
            l0_bound: analytic_l0(p, radius)?,
            l1_bound: l1_bounds.iter().copied().fold(0.0, f64::max),
            l1_bounds,
            method: CertificateMethod::Analytic,
            domain: CertificateDomain::Ball,
        })
    }

    pub fn empirical(p: &NcPolynomial, radius: f64, trials: usize, seed: u64) -> Result<Self> {
        let l1_bounds = empirical_l1(p, radius, trials, seed)?;
        Ok(LipschitzCertificate {
            radius,
            l0_bound: empirical_l0(p, radius, trials, seed)?,
            l1_bound: l1_bounds.iter().copied().fold(0.0, f64::max),
            l1_bounds,
            method: CertificateMethod::Empirical,
            domain: CertificateDomain::Ball,
        })
    }
}

/// Report written by the `lip` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub radius: f64,
    pub domain: CertificateDomain,
    pub l0_analytic: f64,
    pub l1_analytic: Vec<f64>,
    pub l0_empirical: f64,
    pub l1_empirical: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

fn check_radius(b: f64) -> Result<()> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "certificate radius must be positive, got {b}"
        )));
    }
    Ok(())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("at least one trial is required".into()));
    }
    Ok(())
}

/// `Σ_w |h_w| · deg(w) · B^{deg(w)−1}`.
pub fn analytic_l0(p: &NcPolynomial, b: f64) -> Result<f64> {
    check_radius(b)?;
    Ok(p.terms()
        .filter(|(w, _)| !w.is_unit())
        .map(|(w, h)| h.abs() * w.degree() as f64 * b.powi(w.degree() as i32 - 1))
        .sum())
}

/// Per generator `i`: `Σ_w |h_w| · occ_i(w) · B^{deg(w)}`.
pub fn analytic_l1(p: &NcPolynomial, b: f64) -> Result<Vec<f64>> {
    check_radius(b)?;
    let mut out = vec![0.0; p.num_generators()];
    for (w, h) in p.terms() {
        let scale = h.abs() * b.powi(w.degree() as i32);
        for &l in w.letters() {
            out[l] += scale;
        }
    }
    Ok(out)
}

/// Random matrix with spectral norm at most `b`; half the draws sit on the
/// boundary of the ball.
fn sample_in_ball(r: &mut impl Rng, d: usize, b: f64) -> DMatrix<f64> {
    let g = rng::gaussian_matrix(r, d, d);
    let norm = spectral_norm(&g);
    if norm == 0.0 {
        return g;
    }
    let radius = if r.random_bool(0.5) {
        b
    } else {
        b * r.random_range(0.05..1.0)
    };
    g * (radius / norm)
}

fn random_direction(r: &mut impl Rng, d: usize) -> DMatrix<f64> {
    let g = rng::gaussian_matrix(r, d, d);
    let norm = spectral_norm(&g);
    if norm == 0.0 {
        DMatrix::identity(d, d)
    } else {
        g / norm
    }
}

/// Pulls `x` back into the ball of radius `b` if needed.
fn clamp_to_ball(x: DMatrix<f64>, b: f64) -> DMatrix<f64> {
    let n = spectral_norm(&x);
    if n > b {
        x * (b / n)
    } else {
        x
    }
}

fn tuple_distance(x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| spectral_norm(&(a - b)))
        .fold(0.0, f64::max)
}

/// Pairs closer than `1e-9·b` are skipped: at that scale the quotient is
/// dominated by rounding in the two evaluations.
fn lipschitz_ratio(p: &NcPolynomial, x: &[DMatrix<f64>], y: &[DMatrix<f64>], b: f64) -> f64 {
    let dist = tuple_distance(x, y);
    if dist <= 1e-9 * b {
        return 0.0;
    }
    spectral_norm(&(polynomial_matrix(p, x) - polynomial_matrix(p, y))) / dist
}

/// Sampled lower bound on `L₀` over the ball of radius `b`. Matrix sizes
/// cycle through 1, 2, 3, 4 with the trial index.
pub fn empirical_l0(p: &NcPolynomial, b: f64, trials: usize, seed: u64) -> Result<f64> {
    check_radius(b)?;
    check_trials(trials)?;
    let m = p.num_generators();
    let mut best = 0.0_f64;
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let d = 1 + t % 4;
        let x: Vec<DMatrix<f64>> = (0..m).map(|_| sample_in_ball(&mut r, d, b)).collect();
        let y: Vec<DMatrix<f64>> = if t % 2 == 0 {
            (0..m).map(|_| sample_in_ball(&mut r, d, b)).collect()
        } else {
            // Nearby pair: local slope.
            let eta = b * 10f64.powf(r.random_range(-4.0..-1.0));
            x.iter()
                .map(|xi| clamp_to_ball(xi + random_direction(&mut r, d) * eta, b))
                .collect()
        };
        best = best.max(lipschitz_ratio(p, &x, &y, b));
    }
    Ok(best)
}

/// `‖D_{p|x_i}(x){H x_i}‖₂` by the word-wise product rule.
pub fn integral_derivative_norm(p: &NcPolynomial, x: &[DMatrix<f64>], generator: usize, h: &DMatrix<f64>) -> f64 {
    let d = h.nrows();
    let direction = h * &x[generator];
    let mut total = DMatrix::zeros(d, d);
    for (w, coef) in p.terms() {
        let letters = w.letters();
        for (pos, &l) in letters.iter().enumerate() {
            if l != generator {
                continue;
            }
            let prefix = letters[..pos]
                .iter()
                .fold(DMatrix::identity(d, d), |acc, &k| acc * &x[k]);
            let suffix = letters[pos + 1..]
                .iter()
                .fold(DMatrix::identity(d, d), |acc, &k| acc * &x[k]);
            total += prefix * &direction * suffix * coef;
        }
    }
    spectral_norm(&total)
}

/// Sampled lower bound on each per-generator `L₁` over the ball of radius `b`.
pub fn empirical_l1(p: &NcPolynomial, b: f64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    check_radius(b)?;
    check_trials(trials)?;
    let m = p.num_generators();
    let mut best = vec![0.0_f64; m];
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        let d = 1 + t % 4;
        let x: Vec<DMatrix<f64>> = (0..m).map(|_| sample_in_ball(&mut r, d, b)).collect();
        for (i, slot) in best.iter_mut().enumerate() {
            let h = random_direction(&mut r, d);
            *slot = slot.max(integral_derivative_norm(p, &x, i, &h));
        }
    }
    Ok(best)
}

/// `L₀` sampled locally around the realized block frequencies of `d`.
pub fn empirical_l0_at_blocks(p: &NcPolynomial, d: &SpectralDecomposition, trials: usize, seed: u64) -> Result<f64> {
    ensure_generators(p.num_generators(), d.num_generators())?;
    check_trials(trials)?;
    let mut best = 0.0_f64;
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        for j in 0..d.num_blocks() {
            let x = d.block_shifts(j);
            let k = x[0].nrows();
            let scale = x.iter().map(spectral_norm).fold(0.0, f64::max).max(1.0);
            let eta = 1e-6 * scale;
            let y: Vec<DMatrix<f64>> = x.iter().map(|xi| xi + random_direction(&mut r, k) * eta).collect();
            best = best.max(lipschitz_ratio(p, x, &y, scale));
        }
    }
    Ok(best)
}

/// Per-generator `L₁` evaluated at the realized block frequencies of `d`.
pub fn empirical_l1_at_blocks(
    p: &NcPolynomial,
    d: &SpectralDecomposition,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    ensure_generators(p.num_generators(), d.num_generators())?;
    check_trials(trials)?;
    let mut best = vec![0.0_f64; p.num_generators()];
    for t in 0..trials {
        let mut r = rng::stream(seed, t as u64);
        for j in 0..d.num_blocks() {
            let x = d.block_shifts(j);
            let k = x[0].nrows();
            for (i, slot) in best.iter_mut().enumerate() {
                let h = random_direction(&mut r, k);
                *slot = slot.max(integral_derivative_norm(p, x, i, &h));
            }
        }
    }
    Ok(best)
}

/// Smoothed maximum of the analytic `L₁` components with its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct IlPenalty {
    /// `τ · log Σ_i exp(L₁_i / τ)`.
    pub value: f64,
    /// Unsmoothed `max_i L₁_i`.
    pub exact_max: f64,
    /// Derivative of `value` with respect to each coefficient, in the order
    /// of the words passed in.
    pub gradient: Vec<f64>,
}

pub fn il_penalty(p: &NcPolynomial, b: f64) -> Result<(IlPenalty, Vec<Word>)> {
    let words: Vec<Word> = p.terms().map(|(w, _)| w.clone()).collect();
    let coeffs: Vec<f64> = p.terms().map(|(_, c)| c).collect();
    let pen = il_penalty_on(&words, &coeffs, p.num_generators(), b, IL_TEMPERATURE)?;
    Ok((pen, words))
}

/// Penalty for a filter given as coefficients on a fixed word list.
pub fn il_penalty_on(
    words: &[Word],
    coeffs: &[f64],
    num_generators: usize,
    b: f64,
    temperature: f64,
) -> Result<IlPenalty> {
    check_radius(b)?;
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let mut comps = vec![0.0; num_generators];
    for (w, &h) in words.iter().zip(coeffs) {
        let scale = h.abs() * b.powi(w.degree() as i32);
        for &l in w.letters() {
            comps[l] += scale;
        }
    }
    let exact_max = comps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = comps.iter().map(|c| ((c - exact_max) / temperature).exp()).sum();
    let value = exact_max + temperature * sum_exp.ln();
    let weights: Vec<f64> = comps
        .iter()
        .map(|c| ((c - exact_max) / temperature).exp() / sum_exp)
        .collect();
    let gradient = words
        .iter()
        .zip(coeffs)
        .map(|(w, &h)| {
            if h == 0.0 {
                return 0.0;
            }
            let scale = h.signum() * b.powi(w.degree() as i32);
            w.letters().iter().map(|&l| weights[l] * scale).sum()
        })
        .collect();
    Ok(IlPenalty {
        value,
        exact_max,
        gradient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncpoly::tests::example_filter;

    fn w(letters: &[usize]) -> Word {
        Word::new(letters.to_vec())
    }

    #[test]
    fn analytic_l0_examples() {
        let lin = NcPolynomial::monomial(1, w(&[0]), -2.5).unwrap();
        assert_eq!(analytic_l0(&lin, 1.0).unwrap(), 2.5);
        assert_eq!(analytic_l0(&lin, 7.0).unwrap(), 2.5);
        let sq = NcPolynomial::monomial(1, w(&[0, 0]), 1.0).unwrap();
        assert_eq!(analytic_l0(&sq, 1.0).unwrap(), 2.0);
        assert_eq!(analytic_l0(&example_filter(), 1.0).unwrap(), 13.0);
        assert!(analytic_l0(&sq, 0.0).is_err());
    }

    #[test]
    fn analytic_l1_examples() {
        let lin = NcPolynomial::monomial(1, w(&[0]), 3.0).unwrap();
        assert_eq!(analytic_l1(&lin, 1.0).unwrap(), vec![3.0]);
        let sq = NcPolynomial::monomial(1, w(&[0, 0]), 1.0).unwrap();
        assert_eq!(analytic_l1(&sq, 1.0).unwrap(), vec![2.0]);
        let l1 = analytic_l1(&example_filter(), 1.0).unwrap();
        assert_eq!(l1, vec![6.0, 7.0]);
    }

    #[test]
    fn empirical_linear_is_tight() {
        let g = NcPolynomial::generator(2, 0).unwrap();
        let l0 = empirical_l0(&g, 1.0, 64, 1).unwrap();
        assert!((l0 - 1.0).abs() < 1e-6, "{l0}");
        let zero = NcPolynomial::zero(2).unwrap();
        assert_eq!(empirical_l0(&zero, 1.0, 16, 1).unwrap(), 0.0);
        assert_eq!(
            empirical_l1(&NcPolynomial::one(2).unwrap(), 1.0, 16, 1).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(empirical_l0(&g, 1.0, 0, 1).is_err());
    }

    #[test]
    fn scalar_square_derivative() {
        let sq = NcPolynomial::monomial(1, w(&[0, 0]), 1.0).unwrap();
        let t = 0.7;
        let x = [DMatrix::from_element(1, 1, t)];
        let h = DMatrix::from_element(1, 1, 1.0);
        let v = integral_derivative_norm(&sq, &x, 0, &h);
        assert!((v - 2.0 * t * t).abs() < 1e-15);
        // Commutative sanity: approaches |λ p'(λ)| = 2 at λ = 1.
        let est = empirical_l1(&sq, 1.0, 400, 3).unwrap()[0];
        assert!(est <= 2.0 + 1e-9 && est > 1.9, "{est}");
    }

    #[test]
    fn penalty_floor_and_limits() {
        let zero = NcPolynomial::zero(3).unwrap();
        let (pen, _) = il_penalty(&zero, 1.0).unwrap();
        assert!((pen.value - IL_TEMPERATURE * 3f64.ln()).abs() < 1e-15);
        assert!(pen.gradient.is_empty());

        let word = NcPolynomial::monomial(2, w(&[0, 1]), 2.0).unwrap();
        let words = vec![w(&[0, 1])];
        let sharp = il_penalty_on(&words, &[2.0], 2, 1.0, 1e-9).unwrap();
        assert!((sharp.value - 2.0).abs() < 1e-8);
        let (pen, _) = il_penalty(&word, 1.0).unwrap();
        assert_eq!(pen.exact_max, 2.0);

        let doubled = il_penalty_on(&words, &[4.0], 2, 1.0, 1e-9).unwrap();
        assert!((doubled.value - 2.0 * sharp.value).abs() < 1e-8);

        let at_zero = il_penalty_on(&[w(&[0])], &[0.0], 2, 1.0, IL_TEMPERATURE).unwrap();
        assert_eq!(at_zero.gradient, vec![0.0]);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let words = Word::all_up_to(2, 2);
        let coeffs = [0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.05];
        let pen = il_penalty_on(&words, &coeffs, 2, 0.9, 0.05).unwrap();
        let h = 1e-6;
        for k in 0..coeffs.len() {
            let mut up = coeffs;
            let mut dn = coeffs;
            up[k] += h;
            dn[k] -= h;
            let fd = (il_penalty_on(&words, &up, 2, 0.9, 0.05).unwrap().value
                - il_penalty_on(&words, &dn, 2, 0.9, 0.05).unwrap().value)
                / (2.0 * h);
            assert!((fd - pen.gradient[k]).abs() < 1e-6, "{k}: {fd} vs {}", pen.gradient[k]);
        }
    }

    #[test]
    fn certificates_monotone_in_radius() {
        let p = example_filter();
        let a = LipschitzCertificate::analytic(&p, 0.5).unwrap();
        let b = LipschitzCertificate::analytic(&p, 1.5).unwrap();
        assert!(a.l0_bound <= b.l0_bound && a.l1_bound <= b.l1_bound);
        assert_eq!(b.l1_bound, b.l1_bounds.iter().copied().fold(0.0, f64::max));
    }
}
