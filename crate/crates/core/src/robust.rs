//! Outlier-robust factored solvers. Each step fits an outlier indicator `τ`
//! by hard thresholding the residuals, then descends on the meters outside
//! its support. PMU blocks are never thresholded.

use crate::measurement::MeasurementPlan;
use crate::solvers::objective::{add_pmu_gradient, pmu_objective, LegacyForward};
use crate::solvers::{
    check_inputs, descend, resolve_step, ConvergenceTrace, DescentOracle, Factor, FactorState,
    SolveError, SolverConfig,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
#[error("threshold budget {gamma} exceeds the vector length {len}")]
pub struct ThresholdError {
    pub gamma: usize,
    pub len: usize,
}

/// Sparse outlier estimate: `tau` agrees with the residual on `support` and
/// is zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierIndicator {
    pub tau: Vec<f64>,
    /// Ascending indices of the nonzero entries of `tau`.
    pub support: Vec<usize>,
    pub budget: usize,
}

/// Order by decreasing magnitude, lower index first among equal magnitudes.
fn by_magnitude(values: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b))
}

/// Keeps the `gamma` entries of `chi` with the largest magnitude and zeroes
/// the rest.
///
/// The kept entries are the suspected outliers: placing them in `τ` cancels
/// their residual, which is how the operator "throws them away" from the
/// fit.
pub fn hard_threshold(chi: &[f64], gamma: usize) -> Result<OutlierIndicator, ThresholdError> {
    if gamma > chi.len() {
        return Err(ThresholdError {
            gamma,
            len: chi.len(),
        });
    }
    let mut order: Vec<usize> = (0..chi.len()).collect();
    if gamma < chi.len() {
        order.select_nth_unstable_by(gamma, by_magnitude(chi));
    }
    let mut support: Vec<usize> = order[..gamma]
        .iter()
        .copied()
        .filter(|&i| chi[i] != 0.0)
        .collect();
    support.sort_unstable();
    let mut tau = vec![0.0; chi.len()];
    for &i in &support {
        tau[i] = chi[i];
    }
    Ok(OutlierIndicator {
        tau,
        support,
        budget: gamma,
    })
}

/// `⌈ρL⌉`, treating products within rounding of an integer as that integer.
pub fn outlier_budget(rho: f64, len: usize) -> usize {
    let x = rho * len as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_rho(rho: f64) -> Result<(), SolveError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(SolveError::Config(format!(
            "rho must lie in [0, 1), got {rho}"
        )));
    }
    Ok(())
}

fn threshold_at(
    plan: &MeasurementPlan,
    forward: &LegacyForward,
    budget: usize,
) -> (OutlierIndicator, Vec<bool>) {
    let chi = forward.residuals(plan);
    let indicator = hard_threshold(&chi, budget).expect("budget is at most the plan length");
    let mut mask = vec![false; chi.len()];
    for &i in &indicator.support {
        mask[i] = true;
    }
    (indicator, mask)
}

/// Gradient over the meters outside the support of `τ = D_⌈ρL⌉(z − h(u))`;
/// meters in the support contribute exactly zero. Includes the PMU term
/// when the plan has PMU blocks.
pub fn truncated_gradient(
    u: &Factor,
    plan: &MeasurementPlan,
    rho: f64,
) -> Result<(Factor, OutlierIndicator), SolveError> {
    check_rho(rho)?;
    if plan.has_pmu() && u.ncols() != 1 {
        return Err(SolveError::Unsupported(
            "PMU blocks need a rank-one factor".into(),
        ));
    }
    let forward = LegacyForward::compute(plan, u);
    let (indicator, mask) = threshold_at(plan, &forward, outlier_budget(rho, plan.len()));
    let mut g = forward.gradient(plan, |l| !mask[l]);
    add_pmu_gradient(u, plan, &mut g);
    Ok((g, indicator))
}

/// Trimmed objective `½ Σ_{ℓ ∉ supp τ} (z_ℓ − h_ℓ(u))²` with `τ` fitted at
/// `u`, plus the PMU term.
pub fn trimmed_objective(u: &Factor, plan: &MeasurementPlan, rho: f64) -> Result<f64, SolveError> {
    check_rho(rho)?;
    let forward = LegacyForward::compute(plan, u);
    let (_, mask) = threshold_at(plan, &forward, outlier_budget(rho, plan.len()));
    Ok(forward.objective(plan, |l| !mask[l]) + pmu_objective(u, plan))
}

struct RobustOracle<'a> {
    plan: &'a MeasurementPlan,
    budget: usize,
    supports: Vec<Vec<usize>>,
}

impl DescentOracle for RobustOracle<'_> {
    fn objective(&mut self, u: &Factor) -> Result<f64, SolveError> {
        let forward = LegacyForward::compute(self.plan, u);
        let (_, mask) = threshold_at(self.plan, &forward, self.budget);
        Ok(forward.objective(self.plan, |l| !mask[l]) + pmu_objective(u, self.plan))
    }

    fn gradient(&mut self, u: &Factor) -> Result<Factor, SolveError> {
        let forward = LegacyForward::compute(self.plan, u);
        let (indicator, mask) = threshold_at(self.plan, &forward, self.budget);
        let mut g = forward.gradient(self.plan, |l| !mask[l]);
        add_pmu_gradient(u, self.plan, &mut g);
        self.supports.push(indicator.support);
        Ok(g)
    }
}

/// Convergence trace of a robust solve; objectives are trimmed objectives and
/// `supports[k]` is the outlier support used for step `k + 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustTrace {
    pub trace: ConvergenceTrace,
    pub supports: Vec<Vec<usize>>,
}

fn robust_solve(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
    rho: f64,
    accelerated: bool,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, RobustTrace), SolveError> {
    check_rho(rho)?;
    check_inputs(plan, u0, config)?;
    let eta = resolve_step(plan, u0, config)?;
    let mut oracle = RobustOracle {
        plan,
        budget: outlier_budget(rho, plan.len()),
        supports: Vec::new(),
    };
    let (state, trace) = descend(&mut oracle, u0, eta, config, accelerated, truth)?;
    Ok((
        state,
        RobustTrace {
            trace,
            supports: oracle.supports,
        },
    ))
}

/// Robust factored gradient descent; `ρ = 0` reproduces [`crate::solvers::fgd_solve`].
pub fn rfgd_solve(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
    rho: f64,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, RobustTrace), SolveError> {
    robust_solve(plan, u0, config, rho, false, truth)
}

/// Robust accelerated descent; the residual is thresholded at the
/// interpolated point `u⁺` each step is taken from.
pub fn ragd_solve(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
    rho: f64,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, RobustTrace), SolveError> {
    robust_solve(plan, u0, config, rho, true, truth)
}

/// Indices of the `k` meters with the largest raw-unit deviation
/// `|z_ℓ − h_ℓ(u)| / scale_ℓ`, largest first, lower index first on ties.
pub fn identify_outliers(
    u: &Factor,
    plan: &MeasurementPlan,
    k: usize,
) -> Result<Vec<usize>, SolveError> {
    if k > plan.len() {
        return Err(SolveError::Config(format!(
            "asked for {k} outliers among {} meters",
            plan.len()
        )));
    }
    if u.nrows() != plan.n_buses() {
        return Err(SolveError::Shape(format!(
            "factor has {} rows for {} buses",
            u.nrows(),
            plan.n_buses()
        )));
    }
    let n = plan.n_buses();
    let raw: Vec<f64> = plan
        .measurements
        .iter()
        .map(|m| (m.z - m.value(u.as_slice(), n)) / m.scale)
        .collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(by_magnitude(&raw));
    order.truncate(k);
    Ok(order)
}
