//! Factored gradient solvers for the least-squares state estimation
//! objective `g(u) = ½ Σ (z_ℓ − Tr(H_ℓ u uᴴ))²`, plus the Gauss-Newton
//! baseline, initializers and the rotation-invariant distance.

mod descent;
mod gauss_newton;
mod init;
pub(crate) mod objective;
mod spectral;
mod step;

pub use descent::{agd_solve, descend, fgd_solve, DescentOracle, PlainOracle};
pub(crate) use descent::{check_inputs, resolve_step};
pub use gauss_newton::{
    gn_refine, gn_solve, gradient_inf_norm, GnConfig, GnOutcome, RefineOutcome,
};
pub use init::{dc_initialize, flat_initialize, Initialization};
pub use objective::{
    augmented_objective, gradient_augmented, gradient_g, objective_g, LegacyForward,
};
pub use spectral::{power_iteration, rank_one_extract, PowerIterationError};
pub use step::{auto_step_size, step_size_formula, StepSizeEstimate};

use crate::measurement::MeasurementError;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// `N×r` complex factor; `V = u·uᴴ`.
pub type Factor = DMatrix<Complex64>;

pub fn factor_from_vector(v: &[Complex64]) -> Factor {
    Factor::from_column_slice(v.len(), 1, v)
}

#[derive(Clone, Debug)]
pub struct FactorState {
    pub u: Factor,
    pub iteration: usize,
}

impl FactorState {
    /// The rank-one state vector (first column).
    pub fn vector(&self) -> Vec<Complex64> {
        self.u.column(0).iter().copied().collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("objective became non-finite at iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Box<ConvergenceTrace>,
    },
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("the normal matrix is singular; the system is unobservable with this plan")]
    Unobservable,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("matrix has no positive eigenvalue (largest is {0})")]
    DegenerateMatrix(f64),
    #[error(transparent)]
    PowerIteration(#[from] PowerIterationError),
    #[error("step size estimate did not settle; best eta = {}", estimate.eta)]
    StepSizeNotConverged {
        estimate: Box<StepSizeEstimate>,
        source: PowerIterationError,
    },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    /// `μ_k = (k − 2)/(k + 1)`, including the negative value at `k = 1`.
    NesterovSchedule,
    Constant(f64),
}

impl Momentum {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Momentum::NesterovSchedule => (k as f64 - 2.0) / (k as f64 + 1.0),
            Momentum::Constant(mu) => mu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub step_size: StepSize,
    /// Leading constant of the automatic step size.
    pub step_scale: f64,
    pub max_iters: usize,
    /// Relative iterate change `‖u_{k+1} − u_k‖_F / ‖u_k‖_F`.
    pub tol_iterate: f64,
    /// Relative objective change.
    pub tol_objective: f64,
    pub momentum: Momentum,
    pub rank: usize,
    /// Seeds the perturbation used to estimate the smoothness constant.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: StepSize::Auto,
            step_scale: 1.0 / 16.0,
            max_iters: 50_000,
            tol_iterate: 1e-7,
            tol_objective: 1e-9,
            momentum: Momentum::NesterovSchedule,
            rank: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        if let StepSize::Fixed(eta) = self.step_size {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(SolveError::Config(format!(
                    "step size must be non-negative, got {eta}"
                )));
            }
        }
        if let Momentum::Constant(mu) = self.momentum {
            if !(0.0..1.0).contains(&mu) {
                return Err(SolveError::Config(format!(
                    "constant momentum must lie in [0, 1), got {mu}"
                )));
            }
        }
        if self.rank == 0 {
            return Err(SolveError::Config("rank must be at least 1".into()));
        }
        if self.step_scale.is_nan() || self.step_scale <= 0.0 {
            return Err(SolveError::Config("step_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TolIterate,
    TolObjective,
    MaxIters,
    /// Gauss-Newton first-order condition met.
    FirstOrder,
    /// Gauss-Newton objective grew for five consecutive iterations.
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub dist_to_truth: Option<f64>,
    pub iterate_change: f64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub records: Vec<IterRecord>,
    pub termination: Termination,
    pub step_size: f64,
}

impl ConvergenceTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.iter)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    /// First iteration whose distance to the truth is at most `tol`.
    pub fn first_within(&self, tol: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.dist_to_truth.is_some_and(|d| d <= tol))
            .map(|r| r.iter)
    }

    /// CSV with columns `iter,objective,dist_to_truth,iterate_change,elapsed_ms`.
    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter",
            "objective",
            "dist_to_truth",
            "iterate_change",
            "elapsed_ms",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.objective.to_string(),
                r.dist_to_truth.map_or(String::new(), |d| d.to_string()),
                r.iterate_change.to_string(),
                format!("{:.3}", r.elapsed_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Minimum distance between two factors over global rotations: a phase for
/// `r = 1`, an `r×r` unitary (orthogonal Procrustes) otherwise. The aligned
/// difference is formed explicitly so that equal factors give zero to
/// rounding, not to its square root.
pub fn distance(u: &Factor, v: &Factor) -> Result<f64, SolveError> {
    if u.shape() != v.shape() {
        return Err(SolveError::Shape(format!(
            "{:?} vs {:?}",
            u.shape(),
            v.shape()
        )));
    }
    let cross = v.adjoint() * u;
    let rotation = if cross.len() == 1 {
        let c = cross[(0, 0)];
        let phase = if c.norm() > 0.0 {
            c / c.norm()
        } else {
            Complex64::new(1.0, 0.0)
        };
        DMatrix::from_element(1, 1, phase)
    } else {
        let svd = cross.svd(true, true);
        let (w, q) = (
            svd.u.expect("left factor requested"),
            svd.v_t.expect("right factor requested"),
        );
        w * q
    };
    Ok((u - v * rotation).norm())
}

/// Distance between two state vectors up to a global phase.
pub fn vector_distance(u: &[Complex64], v: &[Complex64]) -> f64 {
    assert_eq!(u.len(), v.len());
    let cross: Complex64 = v.iter().zip(u).map(|(a, b)| a.conj() * b).sum();
    let phase = if cross.norm() > 0.0 {
        cross / cross.norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    u.iter()
        .zip(v)
        .map(|(a, b)| (a - b * phase).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Rotates `v` so that entry `slack` is real and non-negative.
pub fn gauge_align(v: &[Complex64], slack: usize) -> Vec<Complex64> {
    let s = v[slack];
    if s.norm() == 0.0 {
        return v.to_vec();
    }
    let rot = s.conj() / s.norm();
    v.iter().map(|x| x * rot).collect()
}

/// `‖v̂ − v‖₂ / ‖v‖₂` after aligning the estimate to the slack-bus gauge.
pub fn rmse(estimate: &[Complex64], truth: &[Complex64], slack: usize) -> f64 {
    let aligned = gauge_align(estimate, slack);
    let truth = gauge_align(truth, slack);
    let err: f64 = aligned
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    let norm: f64 = truth.iter().map(|x| x.norm_sqr()).sum();
    (err / norm).sqrt()
}
