use super::objective::LegacyForward;
use super::{power_iteration, Factor, SolveError};
use crate::measurement::MeasurementPlan;
use crate::sparse::{SparseAccumulator, SparseMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 500;

/// Ingredients of the automatic step size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSizeEstimate {
    pub eta: f64,
    /// Difference-quotient estimate of the smoothness constant `M`.
    pub smoothness: f64,
    /// `‖V₀‖₂`.
    pub v0_norm: f64,
    /// `‖∇f(V₀)‖₂`.
    pub gradient_norm: f64,
    /// `‖Σ Φₙᴴ Φₙ‖₂`, zero without PMU blocks.
    pub pmu_norm: f64,
}

/// `scale / (M‖V₀‖₂ + ‖∇f(V₀)‖₂ + ‖ΣΦᴴΦ‖₂)`.
pub fn step_size_formula(
    scale: f64,
    smoothness: f64,
    v0_norm: f64,
    gradient_norm: f64,
    pmu_norm: f64,
) -> f64 {
    scale / (smoothness * v0_norm + gradient_norm + pmu_norm)
}

/// `Σ w_ℓ H_ℓ` as one sparse matrix.
fn weighted_sum(plan: &MeasurementPlan, weights: impl Fn(usize) -> f64) -> SparseAccumulator {
    let mut acc = SparseAccumulator::default();
    for (l, m) in plan.measurements.iter().enumerate() {
        let w = weights(l);
        if w != 0.0 {
            acc.add_scaled(&m.h, w);
        }
    }
    acc
}

/// Spectral norm of a Hermitian matrix from the top eigenvalue of `A²`.
fn hermitian_norm(a: &SparseMatrix, seed: u64) -> Result<f64, (f64, super::PowerIterationError)> {
    if a.nnz() == 0 {
        return Ok(0.0);
    }
    match power_iteration(
        a.n_rows(),
        |x| a.mul_vec(&a.mul_vec(x)),
        seed,
        POWER_TOL,
        POWER_MAX_ITERS,
    ) {
        Ok((l, _)) => Ok(l.max(0.0).sqrt()),
        Err(e) => Err((e.estimate.max(0.0).sqrt(), e)),
    }
}

fn gram_frob_sqr(a: &Factor, b: &Factor) -> f64 {
    (a.adjoint() * b).norm_squared()
}

/// Automatic step size at `u0`. `M` is the difference quotient
/// `‖∇f(V₀) − ∇f(V₁)‖_F / ‖V₀ − V₁‖_F` for `V₁ = u₁u₁ᴴ`, `u₁ = u₀ + δ`, with
/// `δ` a seeded random direction of norm `10⁻³‖u₀‖_F`.
///
/// If a power iteration stalls, the error carries the estimate built from
/// the best available norms.
pub fn auto_step_size(
    plan: &MeasurementPlan,
    u0: &Factor,
    step_scale: f64,
    seed: u64,
) -> Result<StepSizeEstimate, SolveError> {
    let norm_u0 = u0.norm();
    if !norm_u0.is_finite() || norm_u0 <= 0.0 {
        return Err(SolveError::Config(
            "automatic step size needs a nonzero finite start".into(),
        ));
    }
    if u0.nrows() != plan.n_buses() {
        return Err(SolveError::Shape(format!(
            "factor has {} rows for {} buses",
            u0.nrows(),
            plan.n_buses()
        )));
    }
    let n = plan.n_buses();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut delta = Factor::from_fn(n, u0.ncols(), |_, _| {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    delta *= Complex64::new(1e-3 * norm_u0 / delta.norm(), 0.0);
    let u1 = u0 + &delta;

    let f0 = LegacyForward::compute(plan, u0);
    let f1 = LegacyForward::compute(plan, &u1);
    let diff = weighted_sum(plan, |l| f0.values[l] - f1.values[l]).frobenius_norm();
    let dv = (gram_frob_sqr(u0, u0) + gram_frob_sqr(&u1, &u1) - 2.0 * gram_frob_sqr(u0, &u1))
        .max(0.0)
        .sqrt();
    let smoothness = if dv > 0.0 { diff / dv } else { 0.0 };

    let v0_norm = if u0.ncols() == 1 {
        norm_u0 * norm_u0
    } else {
        (u0.adjoint() * u0).symmetric_eigen().eigenvalues.max()
    };

    let mut stalled = None;
    let grad = weighted_sum(plan, |l| f0.values[l] - plan.measurements[l].z).finish(n);
    let gradient_norm = hermitian_norm(&grad, seed.wrapping_add(1)).unwrap_or_else(|(best, e)| {
        stalled = Some(e);
        best
    });
    let pmu_norm = if plan.has_pmu() {
        let apply = |x: &[Complex64]| {
            let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
            for block in &plan.pmu {
                let y = block.phi.mul_vec(x);
                for (i, row) in block.phi.rows() {
                    for (j, phi) in row.iter() {
                        out[j] += phi.conj() * y[i];
                    }
                }
            }
            out
        };
        match power_iteration(n, apply, seed.wrapping_add(2), POWER_TOL, POWER_MAX_ITERS) {
            Ok((l, _)) => l,
            Err(e) => {
                stalled = Some(e);
                e.estimate
            }
        }
    } else {
        0.0
    };

    let estimate = StepSizeEstimate {
        eta: step_size_formula(step_scale, smoothness, v0_norm, gradient_norm, pmu_norm),
        smoothness,
        v0_norm,
        gradient_norm,
        pmu_norm,
    };
    match stalled {
        None => Ok(estimate),
        Some(source) => Err(SolveError::StepSizeNotConverged {
            estimate: Box::new(estimate),
            source,
        }),
    }
}
