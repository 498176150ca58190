//! Affine perturbations `T(S) = T₀ + T₁ S` of shift operators.

use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::asm::ShiftSet;
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{frobenius, spectral_norm};
use crate::rng;

/// Relative slack on `‖T‖_F <= δ‖T‖₂` for rounding in the norms.
const DELTA_SLACK: f64 = 1e-12;

/// `(T₀, T₁, δ)` with normal `T_i`, `‖T_i‖₂ < 1` and `‖T_i‖_F <= δ‖T_i‖₂`.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationModel {
    t0: DMatrix<f64>,
    t1: DMatrix<f64>,
    delta: f64,
}

fn realized_ratio(t: &DMatrix<f64>) -> Option<f64> {
    let s = spectral_norm(t);
    (s > 0.0).then(|| frobenius(t) / s)
}

impl PerturbationModel {
    /// Model with δ set to the realized `max_i ‖T_i‖_F / ‖T_i‖₂` (1 when both
    /// matrices vanish).
    pub fn new(t0: DMatrix<f64>, t1: DMatrix<f64>) -> Result<Self> {
        let delta = [realized_ratio(&t0), realized_ratio(&t1)]
            .into_iter()
            .flatten()
            .fold(1.0, f64::max);
        Self::with_delta(t0, t1, delta)
    }

    pub fn with_delta(t0: DMatrix<f64>, t1: DMatrix<f64>, delta: f64) -> Result<Self> {
        if !t0.is_square() || !t1.is_square() {
            return Err(Error::InvalidArgument("T₀ and T₁ must be square".into()));
        }
        ensure_dim(t0.nrows(), t1.nrows())?;
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("δ must be positive, got {delta}")));
        }
        let model = PerturbationModel { t0, t1, delta };
        model.validate()?;
        Ok(model)
    }

    pub fn zero(n: usize) -> Self {
        PerturbationModel {
            t0: DMatrix::zeros(n, n),
            t1: DMatrix::zeros(n, n),
            delta: 1.0,
        }
    }

    /// Checks every invariant of the model.
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("T₀", &self.t0), ("T₁", &self.t1)] {
            let s = spectral_norm(t);
            let f = frobenius(t);
            if s >= 1.0 {
                return Err(Error::InvalidArgument(format!("‖{name}‖₂ = {s} is not below 1")));
            }
            if s > 0.1 {
                warn!("‖{name}‖₂ = {s:.3} is large for a small perturbation");
            }
            if f > self.delta * s * (1.0 + DELTA_SLACK) {
                return Err(Error::InvalidArgument(format!(
                    "‖{name}‖_F = {f} exceeds δ‖{name}‖₂ = {}",
                    self.delta * s
                )));
            }
            let comm = (t * t.transpose() - t.transpose() * t).norm();
            if comm > 1e-10 * f * f {
                return Err(Error::InvalidArgument(format!("{name} is not normal")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.t0.nrows()
    }

    pub fn t0(&self) -> &DMatrix<f64> {
        &self.t0
    }

    pub fn t1(&self) -> &DMatrix<f64> {
        &self.t1
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `εP`: both matrices scaled, δ unchanged.
    pub fn scaled(&self, eps: f64) -> PerturbationModel {
        PerturbationModel {
            t0: &self.t0 * eps,
            t1: &self.t1 * eps,
            delta: self.delta,
        }
    }

    /// `T(S) = T₀ + T₁ S`.
    pub fn apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.t0 + &self.t1 * s
    }

    pub fn is_zero(&self) -> bool {
        self.t0.iter().all(|&v| v == 0.0) && self.t1.iter().all(|&v| v == 0.0)
    }
}

/// `S̃_i = S_i + T₀ + T₁ S_i`.
pub fn perturb_shifts(s: &ShiftSet, p: &PerturbationModel) -> Result<ShiftSet> {
    ensure_dim(s.dim(), p.dim())?;
    ShiftSet::new(s.shifts().iter().map(|si| si + p.apply(si)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorms {
    /// `max_i ‖T₀ + T₁ S_i‖₂`.
    pub sup_t: f64,
    /// `‖T₁‖₂`, the norm of the derivative `H ↦ T₁ H`.
    pub sup_dt: f64,
}

pub fn perturbation_norms(s: &ShiftSet, p: &PerturbationModel) -> Result<PerturbationNorms> {
    ensure_dim(s.dim(), p.dim())?;
    let sup_t = s
        .shifts()
        .iter()
        .map(|si| spectral_norm(&p.apply(si)))
        .fold(0.0, f64::max);
    Ok(PerturbationNorms {
        sup_t,
        sup_dt: spectral_norm(&p.t1),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    /// `T₁ = 0`.
    Absolute,
    /// `T₀ = 0`.
    Relative,
    Mixed,
}

/// Perturbation spec file: `{kind, magnitude, delta_cap, seed}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    pub delta_cap: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn sample(&self, n: usize) -> Result<PerturbationModel> {
        sample_perturbation(n, self.kind, self.magnitude, self.delta_cap, self.seed)
    }
}

/// Symmetric matrix with `‖T‖₂ = eps` and `‖T‖_F <= delta_cap · eps`,
/// obtained by zeroing the smallest eigenvalues of a random symmetric draw.
fn sample_normal(r: &mut impl rand::Rng, n: usize, eps: f64, delta_cap: f64) -> DMatrix<f64> {
    let g = rng::gaussian_symmetric(r, n);
    let eig = SymmetricEigen::new(g);
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let top = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    for v in &mut values {
        *v *= eps / top;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()));
    // Never drop the largest eigenvalue, so ‖T‖₂ stays at eps.
    for &k in &order[..n - 1] {
        let fro = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fro <= delta_cap * eps * (1.0 + DELTA_SLACK) {
            break;
        }
        values[k] = 0.0;
    }
    let q = &eig.eigenvectors;
    let t = q * DMatrix::from_diagonal(&DVector::from_vec(values)) * q.transpose();
    (&t + t.transpose()) * 0.5
}

/// Random model of the given kind with `‖T_i‖₂ = magnitude` for every used
/// `T_i` and realized `δ <= delta_cap`.
pub fn sample_perturbation(
    n: usize,
    kind: PerturbationKind,
    magnitude: f64,
    delta_cap: f64,
    seed: u64,
) -> Result<PerturbationModel> {
    if !(magnitude > 0.0 && magnitude <= 0.5) {
        return Err(Error::InvalidArgument(format!(
            "perturbation magnitude must lie in (0, 0.5], got {magnitude}"
        )));
    }
    if !(delta_cap >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta_cap {delta_cap} is infeasible: ‖T‖_F >= ‖T‖₂ always"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    let mut r0 = rng::stream(seed, 0);
    let mut r1 = rng::stream(seed, 1);
    let zero = DMatrix::zeros(n, n);
    let (t0, t1) = match kind {
        PerturbationKind::Absolute => (sample_normal(&mut r0, n, magnitude, delta_cap), zero),
        PerturbationKind::Relative => (zero, sample_normal(&mut r1, n, magnitude, delta_cap)),
        PerturbationKind::Mixed => (
            sample_normal(&mut r0, n, magnitude, delta_cap),
            sample_normal(&mut r1, n, magnitude, delta_cap),
        ),
    };
    PerturbationModel::new(t0, t1)
}
