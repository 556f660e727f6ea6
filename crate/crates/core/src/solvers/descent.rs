use super::objective::{augmented_objective, gradient_augmented};
use super::{
    auto_step_size, distance, ConvergenceTrace, Factor, FactorState, IterRecord, SolveError,
    SolverConfig, StepSize, Termination,
};
use crate::measurement::MeasurementPlan;
use num_complex::Complex64;
use std::time::Instant;

/// Objective and descent direction seen by the generic first-order loop.
pub trait DescentOracle {
    /// Value recorded in the trace and used by the objective-change test.
    fn objective(&mut self, u: &Factor) -> Result<f64, SolveError>;
    /// Direction evaluated at the point the step is taken from.
    fn gradient(&mut self, u: &Factor) -> Result<Factor, SolveError>;
}

/// Least-squares objective, PMU-augmented when the plan has PMU blocks.
pub struct PlainOracle<'a> {
    pub plan: &'a MeasurementPlan,
}

impl DescentOracle for PlainOracle<'_> {
    fn objective(&mut self, u: &Factor) -> Result<f64, SolveError> {
        augmented_objective(u, self.plan)
    }

    fn gradient(&mut self, u: &Factor) -> Result<Factor, SolveError> {
        gradient_augmented(u, self.plan)
    }
}

pub(crate) fn check_inputs(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
) -> Result<(), SolveError> {
    config.validate()?;
    if u0.nrows() != plan.n_buses() || u0.ncols() != config.rank {
        return Err(SolveError::Shape(format!(
            "start is {}×{}, expected {}×{}",
            u0.nrows(),
            u0.ncols(),
            plan.n_buses(),
            config.rank
        )));
    }
    if plan.has_pmu() && config.rank != 1 {
        return Err(SolveError::Unsupported(
            "PMU augmentation needs rank 1".into(),
        ));
    }
    Ok(())
}

/// Resolves the configured step size. A stalled power iteration falls back
/// to the best estimate with a warning.
pub(crate) fn resolve_step(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
) -> Result<f64, SolveError> {
    match config.step_size {
        StepSize::Fixed(eta) => Ok(eta),
        StepSize::Auto => match auto_step_size(plan, u0, config.step_scale, config.seed) {
            Ok(est) => Ok(est.eta),
            Err(SolveError::StepSizeNotConverged { estimate, source }) => {
                log::warn!("{source}; using eta = {}", estimate.eta);
                Ok(estimate.eta)
            }
            Err(e) => Err(e),
        },
    }
}

fn pad_truth(
    truth: Option<&[Complex64]>,
    n: usize,
    r: usize,
) -> Result<Option<Factor>, SolveError> {
    match truth {
        None => Ok(None),
        Some(t) if t.len() != n => Err(SolveError::Shape(format!(
            "truth has length {}, expected {n}",
            t.len()
        ))),
        Some(t) => {
            let mut f = Factor::zeros(n, r);
            f.column_mut(0).copy_from_slice(t);
            Ok(Some(f))
        }
    }
}

/// Generic first-order loop. Without acceleration it runs
/// `u_{k+1} = u_k − η·d(u_k)`; with it, the first step is plain and later
/// steps descend from `u⁺ = u_k + μ_k(u_k − u_{k−1})`.
pub fn descend(
    oracle: &mut impl DescentOracle,
    u0: &Factor,
    eta: f64,
    config: &SolverConfig,
    accelerated: bool,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, ConvergenceTrace), SolveError> {
    let start = Instant::now();
    let truth = pad_truth(truth, u0.nrows(), u0.ncols())?;
    let dist = |u: &Factor| truth.as_ref().map(|t| distance(u, t).unwrap_or(f64::NAN));
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;

    let mut u = u0.clone();
    let mut prev: Option<Factor> = None;
    let mut obj = oracle.objective(&u)?;
    let mut records = vec![IterRecord {
        iter: 0,
        objective: obj,
        dist_to_truth: dist(&u),
        iterate_change: 0.0,
        elapsed_ms: elapsed(),
    }];
    let diverged = |iteration: usize, records: Vec<IterRecord>| SolveError::Diverged {
        iteration,
        trace: Box::new(ConvergenceTrace {
            records,
            termination: Termination::Diverged,
            step_size: eta,
        }),
    };
    if !obj.is_finite() {
        return Err(diverged(0, records));
    }

    let mut termination = Termination::MaxIters;
    for k in 0..config.max_iters {
        let momentum = match &prev {
            Some(p) if accelerated => {
                let mu = config.momentum.at(k);
                (mu != 0.0).then_some((mu, p))
            }
            _ => None,
        };
        let point = match momentum {
            Some((mu, p)) => &u + (&u - p) * Complex64::new(mu, 0.0),
            None => u.clone(),
        };
        let g = oracle.gradient(&point)?;
        let next = point - g * Complex64::new(eta, 0.0);
        let base = u.norm();
        let step = (&next - &u).norm();
        let change = if base > 0.0 { step / base } else { step };
        let next_obj = oracle.objective(&next)?;
        records.push(IterRecord {
            iter: k + 1,
            objective: next_obj,
            dist_to_truth: dist(&next),
            iterate_change: change,
            elapsed_ms: elapsed(),
        });
        if !next_obj.is_finite() || !change.is_finite() {
            return Err(diverged(k + 1, records));
        }
        let obj_change = (next_obj - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        prev = Some(std::mem::replace(&mut u, next));
        obj = next_obj;
        if change < config.tol_iterate {
            termination = Termination::TolIterate;
            break;
        }
        if obj_change < config.tol_objective {
            termination = Termination::TolObjective;
            break;
        }
    }
    let iteration = records.len() - 1;
    Ok((
        FactorState { u, iteration },
        ConvergenceTrace {
            records,
            termination,
            step_size: eta,
        },
    ))
}

/// Factored gradient descent `u_{k+1} = u_k − η∇g(u_k)`; the augmented
/// gradient is used when the plan carries PMU blocks.
pub fn fgd_solve(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, ConvergenceTrace), SolveError> {
    check_inputs(plan, u0, config)?;
    let eta = resolve_step(plan, u0, config)?;
    descend(&mut PlainOracle { plan }, u0, eta, config, false, truth)
}

/// Accelerated variant of [`fgd_solve`] with the configured momentum.
pub fn agd_solve(
    plan: &MeasurementPlan,
    u0: &Factor,
    config: &SolverConfig,
    truth: Option<&[Complex64]>,
) -> Result<(FactorState, ConvergenceTrace), SolveError> {
    check_inputs(plan, u0, config)?;
    let eta = resolve_step(plan, u0, config)?;
    descend(&mut PlainOracle { plan }, u0, eta, config, true, truth)
}
