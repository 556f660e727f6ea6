//! Gauss-Newton in rectangular coordinates `x = [Re v; Im v]`. Legacy-only
//! plans fix the gauge by dropping `Im v_slack`; PMU phasors pin the angle
//! reference themselves, so PMU plans keep every coordinate.

use super::{gauge_align, ConvergenceTrace, Factor, IterRecord, SolveError, Termination};
use crate::measurement::MeasurementPlan;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnConfig {
    pub max_iters: usize,
    /// Threshold on `‖Jᵀr‖_∞`.
    pub tol_first_order: f64,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            tol_first_order: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GnOutcome {
    pub v: Vec<Complex64>,
    pub trace: ConvergenceTrace,
    /// `‖Jᵀr‖_∞` at `v`.
    pub first_order: f64,
}

#[derive(Clone, Debug)]
pub struct RefineOutcome {
    pub v: Vec<Complex64>,
    pub objective: f64,
    pub first_order: f64,
    pub iterations: usize,
    pub warning: Option<String>,
}

const DIVERGENCE_STREAK: usize = 5;
const REFINE_ITERS: usize = 5;

struct Layout {
    n: usize,
    /// Column of `Im v_i`, `None` for the gauge-fixed slack.
    im_col: Vec<Option<usize>>,
    params: usize,
}

impl Layout {
    fn new(plan: &MeasurementPlan) -> Self {
        let n = plan.n_buses();
        let skip = (!plan.has_pmu()).then(|| plan.network().slack());
        let mut next = n;
        let im_col = (0..n)
            .map(|i| {
                if Some(i) == skip {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect();
        Self {
            n,
            im_col,
            params: next,
        }
    }

    fn prepare(&self, plan: &MeasurementPlan, v: &[Complex64]) -> Vec<Complex64> {
        if plan.has_pmu() {
            v.to_vec()
        } else {
            gauge_align(v, plan.network().slack())
        }
    }

    fn apply(&self, v: &mut [Complex64], delta: &DVector<f64>) {
        for (i, x) in v.iter_mut().enumerate() {
            x.re += delta[i];
            if let Some(c) = self.im_col[i] {
                x.im += delta[c];
            }
        }
    }
}

/// Sparse Jacobian rows of the measurement model and the residuals `z − h(v)`.
struct Linearization {
    rows: Vec<Vec<(usize, f64)>>,
    residuals: Vec<f64>,
}

impl Linearization {
    fn compute(plan: &MeasurementPlan, layout: &Layout, v: &[Complex64]) -> Self {
        let mut rows = Vec::with_capacity(plan.len() + 2 * plan.pmu.len());
        let mut residuals = Vec::with_capacity(rows.capacity());
        for m in &plan.measurements {
            let mut value = 0.0;
            let mut row = Vec::new();
            for (i, h_row) in m.h.rows() {
                let s = h_row.dot(v);
                value += (v[i].conj() * s).re;
                row.push((i, 2.0 * s.re));
                if let Some(c) = layout.im_col[i] {
                    row.push((c, 2.0 * s.im));
                }
            }
            rows.push(row);
            residuals.push(m.z - value);
        }
        for block in &plan.pmu {
            let res = block.residual(v);
            for (i, phi_row) in block.phi.rows() {
                let mut re_row = Vec::new();
                let mut im_row = Vec::new();
                for (j, phi) in phi_row.iter() {
                    re_row.push((j, phi.re));
                    im_row.push((j, phi.im));
                    if let Some(c) = layout.im_col[j] {
                        re_row.push((c, -phi.im));
                        im_row.push((c, phi.re));
                    }
                }
                rows.push(re_row);
                residuals.push(-res[i].re);
                rows.push(im_row);
                residuals.push(-res[i].im);
            }
        }
        Self { rows, residuals }
    }

    fn objective(&self) -> f64 {
        0.5 * self.residuals.iter().map(|r| r * r).sum::<f64>()
    }

    fn gradient(&self, params: usize) -> DVector<f64> {
        let mut g = DVector::zeros(params);
        for (row, r) in self.rows.iter().zip(&self.residuals) {
            for &(c, j) in row {
                g[c] += j * r;
            }
        }
        g
    }

    fn normal_matrix(&self, params: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(params, params);
        for row in &self.rows {
            for &(c1, j1) in row {
                for &(c2, j2) in row {
                    a[(c1, c2)] += j1 * j2;
                }
            }
        }
        a
    }

    fn step(&self, params: usize) -> Result<DVector<f64>, SolveError> {
        if self.rows.len() < params {
            return Err(SolveError::Unobservable);
        }
        let a = self.normal_matrix(params);
        let scale = a.diagonal().max();
        let chol = a.cholesky().ok_or(SolveError::Unobservable)?;
        let pivot = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(f64::INFINITY, |m, &d| m.min(d * d));
        if pivot.is_nan() || pivot <= 1e-14 * scale {
            return Err(SolveError::Unobservable);
        }
        Ok(chol.solve(&self.gradient(params)))
    }
}

/// `‖Jᵀr‖_∞` of the least-squares objective at `v`.
pub fn gradient_inf_norm(plan: &MeasurementPlan, v: &[Complex64]) -> f64 {
    let layout = Layout::new(plan);
    let v = layout.prepare(plan, v);
    Linearization::compute(plan, &layout, &v)
        .gradient(layout.params)
        .amax()
}

/// Gauss-Newton with the analytic Jacobian. The trace ends with
/// [`Termination::Diverged`] when the objective grows five times in a row or
/// stops being finite; `v` is then the last finite iterate.
pub fn gn_solve(
    plan: &MeasurementPlan,
    v0: &[Complex64],
    config: &GnConfig,
    truth: Option<&[Complex64]>,
) -> Result<GnOutcome, SolveError> {
    let layout = Layout::new(plan);
    if v0.len() != layout.n {
        return Err(SolveError::Shape(format!(
            "start has length {}, expected {}",
            v0.len(),
            layout.n
        )));
    }
    let start = Instant::now();
    let dist = |v: &[Complex64]| truth.map(|t| super::vector_distance(v, t));
    let mut v = layout.prepare(plan, v0);
    let mut lin = Linearization::compute(plan, &layout, &v);
    if lin.rows.len() < layout.params {
        return Err(SolveError::Unobservable);
    }
    let mut obj = lin.objective();
    let mut first_order = lin.gradient(layout.params).amax();
    let mut records = vec![IterRecord {
        iter: 0,
        objective: obj,
        dist_to_truth: dist(&v),
        iterate_change: 0.0,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    }];
    let mut termination = Termination::MaxIters;
    let mut streak = 0;
    if first_order < config.tol_first_order {
        termination = Termination::FirstOrder;
    } else {
        for k in 1..=config.max_iters {
            let delta = lin.step(layout.params)?;
            let mut next = v.clone();
            layout.apply(&mut next, &delta);
            let next_lin = Linearization::compute(plan, &layout, &next);
            let next_obj = next_lin.objective();
            let change = delta.norm() / norm(&v).max(f64::MIN_POSITIVE);
            records.push(IterRecord {
                iter: k,
                objective: next_obj,
                dist_to_truth: dist(&next),
                iterate_change: change,
                elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            });
            if !next_obj.is_finite() {
                termination = Termination::Diverged;
                break;
            }
            streak = if next_obj > obj { streak + 1 } else { 0 };
            v = next;
            lin = next_lin;
            obj = next_obj;
            first_order = lin.gradient(layout.params).amax();
            if streak >= DIVERGENCE_STREAK {
                termination = Termination::Diverged;
                break;
            }
            if first_order < config.tol_first_order {
                termination = Termination::FirstOrder;
                break;
            }
        }
    }
    Ok(GnOutcome {
        v,
        trace: ConvergenceTrace {
            records,
            termination,
            step_size: 1.0,
        },
        first_order,
    })
}

fn norm(v: &[Complex64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// A few Gauss-Newton steps from a rank-one factor, keeping the iterate with
/// the lowest objective (the start included). Solver failures leave the
/// input unchanged and set `warning`.
pub fn gn_refine(plan: &MeasurementPlan, u: &Factor) -> Result<RefineOutcome, SolveError> {
    if u.ncols() != 1 || u.nrows() != plan.n_buses() {
        return Err(SolveError::Shape(format!(
            "refinement needs an {}×1 factor, got {}×{}",
            plan.n_buses(),
            u.nrows(),
            u.ncols()
        )));
    }
    let layout = Layout::new(plan);
    let v0 = layout.prepare(plan, u.as_slice());
    let lin0 = Linearization::compute(plan, &layout, &v0);
    let mut best = RefineOutcome {
        objective: lin0.objective(),
        first_order: lin0.gradient(layout.params).amax(),
        v: v0.clone(),
        iterations: 0,
        warning: None,
    };
    let config = GnConfig {
        max_iters: 1,
        ..GnConfig::default()
    };
    let mut v = v0;
    for k in 1..=REFINE_ITERS {
        if best.first_order < config.tol_first_order {
            break;
        }
        match gn_solve(plan, &v, &config, None) {
            Ok(out) => {
                let obj = out.trace.final_objective();
                if !obj.is_finite() {
                    best.warning = Some(format!(
                        "refinement produced a non-finite objective at step {k}"
                    ));
                    break;
                }
                v = out.v;
                if obj <= best.objective {
                    best = RefineOutcome {
                        v: v.clone(),
                        objective: obj,
                        first_order: out.first_order,
                        iterations: k,
                        warning: None,
                    };
                }
            }
            Err(e) => {
                log::warn!("refinement skipped: {e}");
                best.warning = Some(e.to_string());
                break;
            }
        }
    }
    Ok(best)
}
