//! Restricted strong-convexity and smoothness constants of the lifted
//! objective over rank-one states inside a voltage envelope, and sampling
//! checks of the resulting sandwich `m‖V‖_F² ≤ ‖H(V)‖² ≤ M‖V‖_F²`.

use crate::measurement::{MeasurementKind, MeasurementPlan, MeteredElement, VoltageEnvelope};
use crate::solvers::objective::LegacyForward;
use crate::solvers::{factor_from_vector, Factor};
use crate::sparse::SparseAccumulator;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("the plan has no legacy measurements")]
    NoLegacyMeters,
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("start state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub m: f64,
    pub m_bound: f64,
    /// Empirical difference-quotient smoothness, when estimated.
    pub m_emp: Option<f64>,
    pub kappa: f64,
    pub envelope: VoltageEnvelope,
    /// Set when the plan has no voltage meters, so `m = 0` says nothing.
    pub lower_vacuous: bool,
    /// `Σ` of the per-element upper bounds on `Σ_ℓ Tr(H_ℓ V)²`.
    pub upper_sum: f64,
    /// `Σ` of the per-element lower bounds.
    pub lower_sum: f64,
}

#[derive(Default)]
struct Group {
    max_scale_sqr: f64,
    /// Coefficient `c` with `|S|² ≤ c·V̄⁴` for the element's complex power.
    coupling_sqr: f64,
    voltage_scales_sqr: Vec<f64>,
}

/// Per-element bounds: a `|V|²` meter gives `scale²|Vₙ|⁴`; the P and Q meters
/// of one flow end together give at most `max(scale²)·(|Y_self|+|Y_mutual|)²V̄⁴`
/// (that is `4|y|²V̄⁴` for an untapped line without charging); the P and Q
/// injections at a bus give at most `max(scale²)·(Σ_ν|Y_nν|)²V̄⁴`. Only
/// voltage meters contribute to the lower sum.
pub fn analytic_bounds(
    plan: &MeasurementPlan,
    envelope: VoltageEnvelope,
) -> Result<BoundsReport, AnalysisError> {
    if plan.is_empty() {
        return Err(AnalysisError::NoLegacyMeters);
    }
    let net = plan.network();
    let ybus = net.ybus();
    let row_abs: Vec<f64> = {
        let mut sums = vec![0.0; net.n_buses()];
        for (i, row) in ybus.rows() {
            sums[i] = row.iter().map(|(_, y)| y.norm()).sum();
        }
        sums
    };
    let mut groups: BTreeMap<MeteredElement, Group> = BTreeMap::new();
    for m in &plan.measurements {
        let element = m.kind.element();
        let g = groups.entry(element).or_default();
        let s2 = m.scale * m.scale;
        g.max_scale_sqr = g.max_scale_sqr.max(s2);
        match m.kind {
            MeasurementKind::VmagSq { .. } => g.voltage_scales_sqr.push(s2),
            MeasurementKind::Pinj { bus } | MeasurementKind::Qinj { bus } => {
                g.coupling_sqr = row_abs[bus].powi(2)
            }
            MeasurementKind::Pflow { branch, from_end }
            | MeasurementKind::Qflow { branch, from_end } => {
                let s = net.branches()[branch].stamp();
                let (y_self, y_mutual) = if from_end {
                    (s.yff, s.yft)
                } else {
                    (s.ytt, s.ytf)
                };
                g.coupling_sqr = (y_self.norm() + y_mutual.norm()).powi(2);
            }
        }
    }
    let hi4 = envelope.v_hi.powi(4);
    let lo4 = envelope.v_lo.powi(4);
    let mut upper_sum = 0.0;
    let mut lower_sum = 0.0;
    for g in groups.values() {
        if g.voltage_scales_sqr.is_empty() {
            upper_sum += g.max_scale_sqr * g.coupling_sqr * hi4;
        } else {
            upper_sum += g.voltage_scales_sqr.iter().sum::<f64>() * hi4;
            lower_sum += g.voltage_scales_sqr.iter().sum::<f64>() * lo4;
        }
    }
    let n2 = (net.n_buses() as f64).powi(2);
    let m = lower_sum / (n2 * hi4);
    let m_bound = upper_sum / (n2 * lo4);
    Ok(BoundsReport {
        m,
        m_bound,
        m_emp: None,
        kappa: if m > 0.0 { m_bound / m } else { f64::INFINITY },
        envelope,
        lower_vacuous: lower_sum == 0.0,
        upper_sum,
        lower_sum,
    })
}

/// `‖H(uuᴴ)‖² = Σ_ℓ (uᴴH_ℓu)²`.
pub fn lifted_norm_sqr(plan: &MeasurementPlan, u: &Factor) -> f64 {
    LegacyForward::compute(plan, u)
        .values
        .iter()
        .map(|v| v * v)
        .sum()
}

/// `‖uuᴴ‖_F² = ‖uᴴu‖_F²`.
fn lifted_frob_sqr(u: &Factor) -> f64 {
    (u.adjoint() * u).norm_squared()
}

/// Largest `‖∇f(V₀) − ∇f(V)‖_F / ‖V₀ − V‖_F` over `trials` random rank-one
/// `V` drawn from the envelope, with `V₀ = u₀u₀ᴴ`.
pub fn empirical_smoothness(
    plan: &MeasurementPlan,
    u0: &[Complex64],
    envelope: VoltageEnvelope,
    trials: usize,
    seed: u64,
) -> Result<f64, AnalysisError> {
    if plan.is_empty() {
        return Err(AnalysisError::NoLegacyMeters);
    }
    if u0.len() != plan.n_buses() {
        return Err(AnalysisError::StateLength {
            expected: plan.n_buses(),
            got: u0.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = factor_from_vector(u0);
    let f0 = LegacyForward::compute(plan, &u0);
    let mut best: f64 = 0.0;
    for _ in 0..trials {
        let u = factor_from_vector(&envelope.sample(plan.n_buses(), None, &mut rng));
        let f = LegacyForward::compute(plan, &u);
        let mut acc = SparseAccumulator::default();
        for (l, m) in plan.measurements.iter().enumerate() {
            acc.add_scaled(&m.h, f0.values[l] - f.values[l]);
        }
        let cross = (u0.adjoint() * &u).norm_squared();
        let dv = (lifted_frob_sqr(&u0) + lifted_frob_sqr(&u) - 2.0 * cross)
            .max(0.0)
            .sqrt();
        if dv > 0.0 {
            best = best.max(acc.frobenius_norm() / dv);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichViolation {
    pub sample: usize,
    pub ratio: f64,
    /// The offending state as `[re, im]` pairs.
    pub state: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub passed: bool,
    pub samples: usize,
    pub m: f64,
    pub m_bound: f64,
    /// Extremes of `‖H(V)‖² / ‖V‖_F²` over the samples.
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub violation: Option<SandwichViolation>,
}

pub const SANDWICH_SLACK: f64 = 1e-9;

/// Samples rank-one states in the envelope and checks both sides of the
/// sandwich with relative slack [`SANDWICH_SLACK`]. Stops at the first
/// violation.
pub fn verify_sandwich(
    plan: &MeasurementPlan,
    envelope: VoltageEnvelope,
    samples: usize,
    seed: u64,
) -> Result<SandwichReport, AnalysisError> {
    if samples == 0 {
        return Err(AnalysisError::NoSamples);
    }
    let bounds = analytic_bounds(plan, envelope)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slack = Some(plan.network().slack());
    let mut report = SandwichReport {
        passed: true,
        samples,
        m: bounds.m,
        m_bound: bounds.m_bound,
        min_ratio: f64::INFINITY,
        max_ratio: 0.0,
        violation: None,
    };
    for k in 0..samples {
        let v = envelope.sample(plan.n_buses(), slack, &mut rng);
        let u = factor_from_vector(&v);
        let ratio = lifted_norm_sqr(plan, &u) / lifted_frob_sqr(&u);
        report.min_ratio = report.min_ratio.min(ratio);
        report.max_ratio = report.max_ratio.max(ratio);
        let low_ok = ratio >= bounds.m * (1.0 - SANDWICH_SLACK);
        let high_ok = ratio <= bounds.m_bound * (1.0 + SANDWICH_SLACK);
        if !(low_ok && high_ok) {
            report.passed = false;
            report.violation = Some(SandwichViolation {
                sample: k,
                ratio,
                state: v.iter().map(|c| [c.re, c.im]).collect(),
            });
            break;
        }
    }
    Ok(report)
}
