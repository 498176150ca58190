//! First-order stability bounds under affine shift perturbations and their
//! empirical verification by ε-sweeps.
//!
//! For a filter `p` with Lipschitz constant `L₀` and integral-Lipschitz
//! constant `L₁` on the ball of radius `B`, the deviation
//! `‖p(S)x − p(S̃)x‖` is bounded by
//! `mδ (L₀ sup‖T(S_i)‖ + L₁ ‖D_T‖) ‖x‖` plus a term quadratic in `‖T‖`.
//! The verifiers scale a perturbation by each `ε`, compare the observed
//! deviation against the first-order bound and fit the quadratic slack.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algnn::{AlgNN, Layer, LayerCertificate};
use crate::asm::{apply_streaming, polynomial_matrix, ShiftSet, Signal};
use crate::error::{ensure_dim, ensure_generators, Error, Result};
use crate::linalg::top_right_singular_vector;
use crate::lipconst::{analytic_l0, analytic_l1};
use crate::ncpoly::NcPolynomial;
use crate::perturb::{perturb_shifts, perturbation_norms, PerturbationModel};

/// Default cap on the quadratic slack, as a multiple of the first-order slope.
pub const DEFAULT_C2_CAP_FACTOR: f64 = 1e3;
/// Relative tolerance of the small-ε slope test.
pub const SLOPE_TOL: f64 = 1e-6;
/// Absolute slack, relative to `‖x‖`, absorbing rounding in the deviation.
const ROUNDING_SLACK: f64 = 1e-12;

/// `‖p(S)x − p(S̃)x‖₂`.
pub fn filter_deviation(p: &NcPolynomial, s: &ShiftSet, s_tilde: &ShiftSet, x: &Signal) -> Result<f64> {
    ensure_dim(s.dim(), s_tilde.dim())?;
    ensure_generators(s.num_generators(), s_tilde.num_generators())?;
    let a = apply_streaming(p, s, x)?;
    let b = apply_streaming(p, s_tilde, x)?;
    Ok((a - b).norm())
}

/// Smallest radius covering both the shifts and their perturbed versions.
pub fn required_radius(s: &ShiftSet, p: &PerturbationModel) -> Result<f64> {
    let st = perturb_shifts(s, p)?;
    Ok(s.max_norm().max(st.max_norm()))
}

/// Constants entering a first-order bound. For a single filter `lipschitz`
/// is 1 and `norm_bound` is the filter's operator-norm bound at `radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConstants {
    pub m: usize,
    pub delta: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
    #[serde(rename = "L1")]
    pub l1: f64,
    #[serde(rename = "sup_T")]
    pub sup_t: f64,
    #[serde(rename = "sup_DT")]
    pub sup_dt: f64,
    pub radius: f64,
    pub lipschitz: f64,
    pub norm_bound: f64,
}

impl StabilityConstants {
    /// `δ m (L₀ sup_T + L₁ sup_DT)`.
    pub fn first_order_factor(&self) -> f64 {
        self.delta * self.m as f64 * (self.l0 * self.sup_t + self.l1 * self.sup_dt)
    }
}

fn check_radius(radius: f64, required: f64) -> Result<()> {
    if radius < required * (1.0 - 1e-12) {
        return Err(Error::RadiusTooSmall { radius, required });
    }
    Ok(())
}

/// Filter constants at radius `b` for perturbation `pm`.
pub fn filter_constants(p: &NcPolynomial, s: &ShiftSet, pm: &PerturbationModel, b: f64) -> Result<StabilityConstants> {
    ensure_generators(s.num_generators(), p.num_generators())?;
    check_radius(b, required_radius(s, pm)?)?;
    let norms = perturbation_norms(s, pm)?;
    let radii = vec![b; p.num_generators()];
    Ok(StabilityConstants {
        m: s.num_generators(),
        delta: pm.delta(),
        l0: analytic_l0(p, b)?,
        l1: analytic_l1(p, b)?.into_iter().fold(0.0, f64::max),
        sup_t: norms.sup_t,
        sup_dt: norms.sup_dt,
        radius: b,
        lipschitz: 1.0,
        norm_bound: crate::asm::norm_bound_with(p, &radii),
    })
}

/// `(mδL₀ sup_T + mδL₁ sup_DT) ‖x‖`, without the quadratic remainder.
pub fn filter_deviation_bound(
    p: &NcPolynomial,
    s: &ShiftSet,
    pm: &PerturbationModel,
    x_norm: f64,
    b: f64,
) -> Result<f64> {
    Ok(filter_constants(p, s, pm, b)?.first_order_factor() * x_norm)
}

/// Layer constants with `B` enlarged, if needed, to cover the perturbed
/// shifts.
pub fn layer_constants(layer: &Layer, pm: &PerturbationModel) -> Result<StabilityConstants> {
    let radius = layer.certificate_radius.max(required_radius(&layer.shifts, pm)?);
    let cert = layer.certificate_at(radius)?;
    let norms = perturbation_norms(&layer.shifts, pm)?;
    Ok(from_certificate(&cert, pm.delta(), norms.sup_t, norms.sup_dt))
}

fn from_certificate(cert: &LayerCertificate, delta: f64, sup_t: f64, sup_dt: f64) -> StabilityConstants {
    StabilityConstants {
        m: cert.num_generators,
        delta,
        l0: cert.l0,
        l1: cert.l1,
        sup_t,
        sup_dt,
        radius: cert.radius,
        lipschitz: cert.lipschitz,
        norm_bound: cert.norm_bound,
    }
}

/// `C_ℓ δ ‖x‖ m (L₀ sup_T + L₁ sup_DT)` for one layer.
pub fn layer_deviation_bound(layer: &Layer, pm: &PerturbationModel, x_norm: f64) -> Result<f64> {
    let c = layer_constants(layer, pm)?;
    Ok(c.lipschitz * c.first_order_factor() * x_norm)
}

/// `Σ_ℓ Δ_ℓ (Π_{r≥ℓ} C_r)(Π_{r>ℓ} B_r)(Π_{r<ℓ} C_r B_r) ‖x‖` from per-layer
/// `Δ_ℓ`, `C_ℓ` and `B_ℓ`.
pub fn network_bound_from_constants(
    deltas: &[f64],
    lipschitz: &[f64],
    norm_bounds: &[f64],
    x_norm: f64,
) -> Result<f64> {
    let l = deltas.len();
    ensure_dim(l, lipschitz.len())?;
    ensure_dim(l, norm_bounds.len())?;
    let mut total = 0.0;
    for k in 0..l {
        let after_c: f64 = lipschitz[k..].iter().product();
        let after_b: f64 = norm_bounds[k + 1..].iter().product();
        let before: f64 = (0..k).map(|r| lipschitz[r] * norm_bounds[r]).product();
        total += deltas[k] * after_c * after_b * before;
    }
    Ok(total * x_norm)
}

fn network_constants(net: &AlgNN, perturbations: &[PerturbationModel]) -> Result<Vec<StabilityConstants>> {
    ensure_dim(net.layers().len(), perturbations.len())?;
    net.layers()
        .iter()
        .zip(perturbations)
        .enumerate()
        .map(|(l, (layer, pm))| {
            layer_constants(layer, pm).map_err(|e| match e {
                Error::MissingCertificate(_) => Error::MissingCertificate(l),
                other => other,
            })
        })
        .collect()
}

fn network_bound_with(constants: &[StabilityConstants], x_norm: f64) -> Result<f64> {
    let deltas: Vec<f64> = constants.iter().map(StabilityConstants::first_order_factor).collect();
    let cs: Vec<f64> = constants.iter().map(|c| c.lipschitz).collect();
    let bs: Vec<f64> = constants.iter().map(|c| c.norm_bound).collect();
    network_bound_from_constants(&deltas, &cs, &bs, x_norm)
}

/// First-order network bound with one perturbation per layer.
pub fn network_deviation_bound(net: &AlgNN, perturbations: &[PerturbationModel], x_norm: f64) -> Result<f64> {
    network_bound_with(&network_constants(net, perturbations)?, x_norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Bounded,
    Violated,
    Inconclusive,
}

/// One point of the ε-sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs_first_order: f64,
    /// `max(0, lhs − rhs_first_order)`.
    pub residual: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// The slack cap is this factor times the first-order slope.
    pub c2_cap_factor: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            c2_cap_factor: DEFAULT_C2_CAP_FACTOR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    /// Deviation at the largest ε.
    pub lhs: f64,
    /// First-order bound at the largest ε.
    pub rhs_first_order: f64,
    /// Smallest `c₂` with every residual at most `c₂ε²`.
    pub quadratic_slack: f64,
    /// Least-squares fit of the residuals against `ε²`.
    pub c2_least_squares: f64,
    /// Cap that `quadratic_slack` must respect.
    pub c2_cap: f64,
    /// Constants of the unscaled perturbation, one entry per layer.
    pub constants: Vec<StabilityConstants>,
    pub probes: Vec<Probe>,
    pub verdict: Verdict,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    c2_fit: f64,
    c2_least_squares: f64,
    c2_cap: f64,
    verdict: Verdict,
    lhs_over_rhs: f64,
    constants: &'a [StabilityConstants],
}

impl StabilityReport {
    /// `lhs / rhs` at the smallest ε (0 when both vanish).
    pub fn tightness(&self) -> f64 {
        self.probes.last().map_or(0.0, |p| {
            if p.rhs_first_order > 0.0 {
                p.lhs / p.rhs_first_order
            } else {
                0.0
            }
        })
    }

    /// One JSON record per probe followed by a summary record.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            let _ = writeln!(out, "{}", serde_json::to_string(p).expect("plain struct"));
        }
        let summary = SummaryRecord {
            c2_fit: self.quadratic_slack,
            c2_least_squares: self.c2_least_squares,
            c2_cap: self.c2_cap,
            verdict: self.verdict,
            lhs_over_rhs: self.tightness(),
            constants: &self.constants,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("plain struct"));
        out
    }
}

fn sorted_epsilons(epsilons: &[f64]) -> Result<Vec<f64>> {
    if epsilons.is_empty() || epsilons.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument("epsilons must be positive and finite".into()));
    }
    let mut eps = epsilons.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    eps.dedup();
    Ok(eps)
}

/// Fits the quadratic slack and applies the verdict rule to a sweep.
fn assess(
    probes: Vec<Probe>,
    constants: Vec<StabilityConstants>,
    x_norm: f64,
    opts: &VerifyOptions,
) -> StabilityReport {
    let finite = probes
        .iter()
        .all(|p| p.lhs.is_finite() && p.rhs_first_order.is_finite());
    let num: f64 = probes.iter().map(|p| p.residual * p.epsilon.powi(2)).sum();
    let den: f64 = probes.iter().map(|p| p.epsilon.powi(4)).sum();
    let c2_least_squares = if den > 0.0 { num / den } else { f64::NAN };
    let envelope = probes
        .iter()
        .map(|p| p.residual / p.epsilon.powi(2))
        .fold(0.0, f64::max);

    let smallest = probes.last().expect("at least one probe");
    let rhs_slope = smallest.rhs_first_order / smallest.epsilon;
    let lhs_slope = smallest.lhs / smallest.epsilon;
    let slack = ROUNDING_SLACK * x_norm.max(f64::MIN_POSITIVE);
    let c2_cap = (opts.c2_cap_factor * rhs_slope).max(slack / smallest.epsilon.powi(2));

    let verdict = if !finite || !envelope.is_finite() || !c2_least_squares.is_finite() {
        Verdict::Inconclusive
    } else {
        let slope_ok = lhs_slope <= rhs_slope * (1.0 + SLOPE_TOL) + slack / smallest.epsilon;
        if slope_ok && envelope <= c2_cap {
            Verdict::Bounded
        } else {
            Verdict::Violated
        }
    };
    let first = probes[0];
    StabilityReport {
        lhs: first.lhs,
        rhs_first_order: first.rhs_first_order,
        quadratic_slack: envelope,
        c2_least_squares,
        c2_cap,
        constants,
        probes,
        verdict,
    }
}

fn probe(epsilon: f64, lhs: f64, rhs: f64) -> Probe {
    Probe {
        epsilon,
        lhs,
        rhs_first_order: rhs,
        residual: (lhs - rhs).max(0.0),
    }
}

/// ε-sweep of a single filter. The certificate radius is `radius` enlarged,
/// if necessary, to cover every probed perturbed shift set; the constants
/// in the report carry the radius actually used.
pub fn verify_filter_stability(
    p: &NcPolynomial,
    s: &ShiftSet,
    pm: &PerturbationModel,
    x: &Signal,
    epsilons: &[f64],
    radius: Option<f64>,
    opts: &VerifyOptions,
) -> Result<StabilityReport> {
    let eps = sorted_epsilons(epsilons)?;
    ensure_dim(s.dim(), x.len())?;
    let mut b = radius.unwrap_or(0.0);
    for &e in &eps {
        b = b.max(required_radius(s, &pm.scaled(e))?);
    }
    if b <= 0.0 {
        b = 1.0;
    }
    let x_norm = x.norm();
    let mut probes = Vec::with_capacity(eps.len());
    for &e in &eps {
        let scaled = pm.scaled(e);
        let st = perturb_shifts(s, &scaled)?;
        let lhs = filter_deviation(p, s, &st, x)?;
        let rhs = filter_deviation_bound(p, s, &scaled, x_norm, b)?;
        probes.push(probe(e, lhs, rhs));
    }
    let constants = vec![filter_constants(p, s, pm, b.max(required_radius(s, pm)?))?];
    Ok(assess(probes, constants, x_norm, opts))
}

/// ε-sweep of the layer stack (readout excluded) with one perturbation per
/// layer.
pub fn verify_network_stability(
    net: &AlgNN,
    perturbations: &[PerturbationModel],
    x: &DMatrix<f64>,
    epsilons: &[f64],
    opts: &VerifyOptions,
) -> Result<StabilityReport> {
    let eps = sorted_epsilons(epsilons)?;
    ensure_dim(net.layers().len(), perturbations.len())?;
    let mut radii: Vec<f64> = net.layers().iter().map(|l| l.certificate_radius).collect();
    for &e in &eps {
        for ((r, layer), pm) in radii.iter_mut().zip(net.layers()).zip(perturbations) {
            *r = r.max(required_radius(&layer.shifts, &pm.scaled(e))?);
        }
    }
    let mut fixed = net.clone();
    let mut layers: Vec<Layer> = fixed.layers().to_vec();
    for (layer, r) in layers.iter_mut().zip(&radii) {
        layer.certificate_radius = *r;
    }
    fixed = AlgNN::new(layers, fixed.readout().clone(), fixed.seed())?;

    let x_norm = x.norm();
    let clean = fixed.layer_map(x, None)?;
    let mut probes = Vec::with_capacity(eps.len());
    for &e in &eps {
        let scaled: Vec<PerturbationModel> = perturbations.iter().map(|p| p.scaled(e)).collect();
        let shifted = fixed
            .layers()
            .iter()
            .zip(&scaled)
            .map(|(l, p)| perturb_shifts(&l.shifts, p).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        let lhs = (fixed.layer_map(x, Some(&shifted))? - &clean).norm();
        let rhs = network_deviation_bound(&fixed, &scaled, x_norm)?;
        probes.push(probe(e, lhs, rhs));
    }
    let constants = network_constants(&fixed, perturbations)?;
    Ok(assess(probes, constants, x_norm, opts))
}

/// Unit signal aligned with the top right singular vector of
/// `p(S) − p(S̃)` for the given (already scaled) perturbation.
pub fn adversarial_signal(p: &NcPolynomial, s: &ShiftSet, pm: &PerturbationModel) -> Result<Signal> {
    ensure_generators(s.num_generators(), p.num_generators())?;
    let st = perturb_shifts(s, pm)?;
    let diff = polynomial_matrix(p, s.shifts()) - polynomial_matrix(p, st.shifts());
    if diff.iter().all(|&v| v == 0.0) {
        let mut e = DVector::zeros(s.dim());
        e[0] = 1.0;
        return Ok(e);
    }
    Ok(top_right_singular_vector(&diff))
}
