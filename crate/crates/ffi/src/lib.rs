//! C ABI over `gridse`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`GridseStatus`]; on failure the message is available from
//! [`gridse_last_error`] on the same thread until the next failing call.
//! Complex vectors are passed as separate real and imaginary arrays.

use gridse::grid::{CaseFormat, Network};
use gridse::harness::{self, ExperimentConfig, HarnessError, InitKind, SolverKind};
use gridse::measurement::{
    default_plan, MeasurementError, MeasurementPlan, NoiseLevels, PlanProfile,
};
use gridse::robust::hard_threshold;
use gridse::solvers::{rmse, SolveError, StepSize, Termination};
use num_complex::Complex64;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Case = 3,
    Measurement = 4,
    Diverged = 5,
    Unobservable = 6,
    Solver = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridseSolver {
    Fgd = 0,
    Agd = 1,
    Rfgd = 2,
    Ragd = 3,
    GaussNewton = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridseProfile {
    PaperLegacy = 0,
    Full = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridseInit {
    /// DC start for plain solvers, flat start for robust ones.
    Default = 0,
    Dc = 1,
    Flat = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridseTermination {
    TolIterate = 0,
    TolObjective = 1,
    MaxIters = 2,
    FirstOrder = 3,
    Diverged = 4,
}

/// Estimation settings. `step_size <= 0` selects the automatic rule;
/// `rho < 0` selects the default budget of twice `identify` over the plan
/// length.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GridseSolveOptions {
    pub solver: GridseSolver,
    pub init: GridseInit,
    pub step_scale: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tol_iterate: f64,
    pub tol_objective: f64,
    pub rho: f64,
    /// Meters to flag after a robust solve.
    pub identify: usize,
    pub refine: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GridseSolveSummary {
    pub iterations: usize,
    pub termination: GridseTermination,
    pub final_objective: f64,
    /// `‖Jᵀr‖_∞` at the returned estimate.
    pub first_order: f64,
    pub step_size: f64,
    /// Number of entries written to the `flagged` buffer.
    pub flagged: usize,
}

pub struct GridseNetwork(Arc<Network>);

pub struct GridsePlan(MeasurementPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: GridseStatus, msg: impl Into<String>) -> GridseStatus {
    set_error(msg);
    status
}

fn solve_status(e: &SolveError) -> GridseStatus {
    match e {
        SolveError::Diverged { .. } => GridseStatus::Diverged,
        SolveError::Unobservable => GridseStatus::Unobservable,
        SolveError::Config(_) | SolveError::Shape(_) | SolveError::Unsupported(_) => {
            GridseStatus::InvalidArgument
        }
        SolveError::Measurement(_) => GridseStatus::Measurement,
        _ => GridseStatus::Solver,
    }
}

fn harness_status(e: &HarnessError) -> GridseStatus {
    match e {
        HarnessError::Case(_) => GridseStatus::Case,
        HarnessError::Measurement(_) => GridseStatus::Measurement,
        HarnessError::Solve(s) => solve_status(s),
        HarnessError::Config(_) | HarnessError::Json(_) => GridseStatus::InvalidArgument,
        HarnessError::Io(_) | HarnessError::Csv(_) => GridseStatus::Io,
    }
}

fn measurement_fail(e: MeasurementError) -> GridseStatus {
    fail(GridseStatus::Measurement, e.to_string())
}

/// Runs `f`, turning panics into [`GridseStatus::Panic`].
fn guard(f: impl FnOnce() -> GridseStatus) -> GridseStatus {
    catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|_| fail(GridseStatus::Panic, "internal panic"))
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, GridseStatus> {
    if s.is_null() {
        return Err(fail(GridseStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        fail(
            GridseStatus::InvalidArgument,
            "string argument is not UTF-8",
        )
    })
}

unsafe fn complex_in(
    re: *const f64,
    im: *const f64,
    n: usize,
) -> Result<Vec<Complex64>, GridseStatus> {
    if re.is_null() || im.is_null() {
        return Err(fail(GridseStatus::NullPointer, "state buffer is null"));
    }
    let re = std::slice::from_raw_parts(re, n);
    let im = std::slice::from_raw_parts(im, n);
    Ok(re
        .iter()
        .zip(im)
        .map(|(&a, &b)| Complex64::new(a, b))
        .collect())
}

unsafe fn complex_out(v: &[Complex64], re: *mut f64, im: *mut f64) -> GridseStatus {
    if re.is_null() || im.is_null() {
        return fail(GridseStatus::NullPointer, "output buffer is null");
    }
    for (k, c) in v.iter().enumerate() {
        *re.add(k) = c.re;
        *im.add(k) = c.im;
    }
    GridseStatus::Ok
}

fn check_len(got: usize, expected: usize) -> Result<(), GridseStatus> {
    if got != expected {
        return Err(fail(
            GridseStatus::InvalidArgument,
            format!("buffer length {got}, expected {expected}"),
        ));
    }
    Ok(())
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gridse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a MATPOWER `.m` or JSON case; the names `case14` and `case118`
/// resolve to the bundled cases when no such file exists.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridse_network_load(
    path: *const c_char,
    out: *mut *mut GridseNetwork,
) -> GridseStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridseStatus::NullPointer, "out is null");
        }
        let path = tri!(text(path));
        match harness::load_case(Path::new(path), None) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(GridseNetwork(Arc::new(net))));
                GridseStatus::Ok
            }
            Err(e) => fail(GridseStatus::Case, e.to_string()),
        }
    })
}

/// Parses case text; `json` selects the JSON format, MATPOWER otherwise.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridse_network_parse(
    source: *const c_char,
    json: bool,
    out: *mut *mut GridseNetwork,
) -> GridseStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridseStatus::NullPointer, "out is null");
        }
        let source = tri!(text(source));
        let format = if json {
            CaseFormat::Json
        } else {
            CaseFormat::MatpowerM
        };
        match Network::parse(source, format) {
            Ok(net) => {
                *out = Box::into_raw(Box::new(GridseNetwork(Arc::new(net))));
                GridseStatus::Ok
            }
            Err(e) => fail(GridseStatus::Case, e.to_string()),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn gridse_network_free(net: *mut GridseNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Bus count, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn gridse_network_n_buses(net: *const GridseNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.n_buses())
}

/// Internal index of the slack bus, or `SIZE_MAX` for a null handle.
///
/// # Safety
/// `net` must be null or a live network handle.
#[no_mangle]
pub unsafe extern "C" fn gridse_network_slack(net: *const GridseNetwork) -> usize {
    net.as_ref().map_or(usize::MAX, |n| n.0.slack())
}

/// Draws a true state with uniform magnitudes in `[0.95, 1.05]`, uniform
/// angles in `[−0.35π, 0.35π]` and the slack angle at 0.
///
/// # Safety
/// `re` and `im` must each hold `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn gridse_sample_true_state(
    net: *const GridseNetwork,
    seed: u64,
    re: *mut f64,
    im: *mut f64,
    n: usize,
) -> GridseStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(GridseStatus::NullPointer, "network is null");
        };
        tri!(check_len(n, net.0.n_buses()));
        complex_out(&harness::sample_true_state(&net.0, seed), re, im)
    })
}

/// Builds a standard meter layout with readings generated from the state
/// (`re`, `im`) under the default noise levels scaled by `noise_scale`,
/// then normalizes it.
///
/// # Safety
/// `re` and `im` must each hold `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gridse_plan_generate(
    net: *const GridseNetwork,
    profile: GridseProfile,
    re: *const f64,
    im: *const f64,
    n: usize,
    noise_scale: f64,
    seed: u64,
    out: *mut *mut GridsePlan,
) -> GridseStatus {
    guard(|| {
        let Some(net) = net.as_ref() else {
            return fail(GridseStatus::NullPointer, "network is null");
        };
        if out.is_null() {
            return fail(GridseStatus::NullPointer, "out is null");
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return fail(
                GridseStatus::InvalidArgument,
                "noise scale must be non-negative",
            );
        }
        tri!(check_len(n, net.0.n_buses()));
        let truth = tri!(complex_in(re, im, n));
        let base = NoiseLevels::default();
        let noise = NoiseLevels {
            flow: base.flow * noise_scale,
            injection: base.injection * noise_scale,
            voltage: base.voltage * noise_scale,
            pmu: base.pmu * noise_scale,
        };
        let profile = match profile {
            GridseProfile::PaperLegacy => PlanProfile::PaperLegacy,
            GridseProfile::Full => PlanProfile::Full,
        };
        let plan = default_plan(net.0.clone(), profile, &[], &noise)
            .and_then(|p| p.generate(&truth, seed))
            .and_then(|p| p.normalize());
        match plan {
            Ok(p) => {
                *out = Box::into_raw(Box::new(GridsePlan(p)));
                GridseStatus::Ok
            }
            Err(e) => measurement_fail(e),
        }
    })
}

/// Replaces `count` legacy readings by `factor` times their noise-free value
/// at the true state. The corrupted indices are written to `indices` (room
/// for `count` entries), ascending. Readings are rescaled to the plan's
/// normalization.
///
/// # Safety
/// `re`/`im` must hold `n` doubles, `indices` `count` writable entries.
#[no_mangle]
pub unsafe extern "C" fn gridse_plan_inject_outliers(
    plan: *mut GridsePlan,
    re: *const f64,
    im: *const f64,
    n: usize,
    count: usize,
    factor: f64,
    seed: u64,
    indices: *mut usize,
) -> GridseStatus {
    use rand::SeedableRng;
    guard(|| {
        let Some(plan) = plan.as_mut() else {
            return fail(GridseStatus::NullPointer, "plan is null");
        };
        if indices.is_null() && count > 0 {
            return fail(GridseStatus::NullPointer, "indices is null");
        }
        tri!(check_len(n, plan.0.n_buses()));
        let truth = tri!(complex_in(re, im, n));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        match plan.0.inject_outliers(&truth, count, factor, &mut rng) {
            Ok(picked) => {
                for (k, i) in picked.into_iter().enumerate() {
                    *indices.add(k) = i;
                }
                GridseStatus::Ok
            }
            Err(e) => measurement_fail(e),
        }
    })
}

/// # Safety
/// `plan` must be null or a live plan handle.
#[no_mangle]
pub unsafe extern "C" fn gridse_plan_len(plan: *const GridsePlan) -> usize {
    plan.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `plan` must be null or a handle from this library that is not used again.
#[no_mangle]
pub unsafe extern "C" fn gridse_plan_free(plan: *mut GridsePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

/// Options matching the library defaults for `solver`.
#[no_mangle]
pub extern "C" fn gridse_solve_options_default(solver: GridseSolver) -> GridseSolveOptions {
    let d = gridse::solvers::SolverConfig::default();
    GridseSolveOptions {
        solver,
        init: GridseInit::Default,
        step_scale: d.step_scale,
        step_size: 0.0,
        max_iters: d.max_iters,
        tol_iterate: d.tol_iterate,
        tol_objective: d.tol_objective,
        rho: -1.0,
        identify: 0,
        refine: true,
    }
}

fn experiment_config(o: &GridseSolveOptions) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        solver: match o.solver {
            GridseSolver::Fgd => SolverKind::Fgd,
            GridseSolver::Agd => SolverKind::Agd,
            GridseSolver::Rfgd => SolverKind::Rfgd,
            GridseSolver::Ragd => SolverKind::Ragd,
            GridseSolver::GaussNewton => SolverKind::Gn,
        },
        init: match o.init {
            GridseInit::Default => None,
            GridseInit::Dc => Some(InitKind::Dc),
            GridseInit::Flat => Some(InitKind::Flat),
        },
        refine: o.refine,
        identify: Some(o.identify),
        rho: (o.rho >= 0.0).then_some(o.rho),
        ..ExperimentConfig::default()
    };
    cfg.outliers.count = o.identify;
    let s = &mut cfg.solver_config;
    s.step_scale = o.step_scale;
    s.step_size = if o.step_size > 0.0 {
        StepSize::Fixed(o.step_size)
    } else {
        StepSize::Auto
    };
    s.max_iters = o.max_iters;
    s.tol_iterate = o.tol_iterate;
    s.tol_objective = o.tol_objective;
    cfg
}

/// Estimates the state from `plan`, writing the gauge-aligned estimate to
/// `re`/`im` (`n` entries) and, for robust solvers, up to `flagged_cap`
/// flagged meter indices to `flagged`. `summary` may be null.
///
/// # Safety
/// Buffers must have the stated sizes; `flagged` may be null when
/// `flagged_cap` is 0.
#[no_mangle]
pub unsafe extern "C" fn gridse_solve(
    plan: *const GridsePlan,
    options: *const GridseSolveOptions,
    re: *mut f64,
    im: *mut f64,
    n: usize,
    flagged: *mut usize,
    flagged_cap: usize,
    summary: *mut GridseSolveSummary,
) -> GridseStatus {
    guard(|| {
        let (Some(plan), Some(options)) = (plan.as_ref(), options.as_ref()) else {
            return fail(GridseStatus::NullPointer, "plan or options is null");
        };
        tri!(check_len(n, plan.0.n_buses()));
        let cfg = experiment_config(options);
        if let Err(e) = cfg.solver_config.validate() {
            return fail(solve_status(&e), e.to_string());
        }
        let est = match harness::estimate(&plan.0, &cfg, None) {
            Ok(e) => e,
            Err(e) => return fail(harness_status(&e), e.to_string()),
        };
        tri!(match complex_out(&est.v, re, im) {
            GridseStatus::Ok => Ok(()),
            s => Err(s),
        });
        let written = est.identified.len().min(flagged_cap);
        if written > 0 && flagged.is_null() {
            return fail(GridseStatus::NullPointer, "flagged is null");
        }
        for (k, &i) in est.identified.iter().take(written).enumerate() {
            *flagged.add(k) = i;
        }
        if let Some(s) = summary.as_mut() {
            *s = GridseSolveSummary {
                iterations: est.trace.iterations(),
                termination: match est.trace.termination {
                    Termination::TolIterate => GridseTermination::TolIterate,
                    Termination::TolObjective => GridseTermination::TolObjective,
                    Termination::MaxIters => GridseTermination::MaxIters,
                    Termination::FirstOrder => GridseTermination::FirstOrder,
                    Termination::Diverged => GridseTermination::Diverged,
                },
                final_objective: est.trace.final_objective(),
                first_order: est.first_order,
                step_size: est.trace.step_size,
                flagged: written,
            };
        }
        GridseStatus::Ok
    })
}

/// Relative error `‖v̂ − v‖₂ / ‖v‖₂` after pinning both slack angles to 0;
/// NaN on a null argument.
///
/// # Safety
/// All four buffers must hold `n` doubles; `slack < n`.
#[no_mangle]
pub unsafe extern "C" fn gridse_rmse(
    est_re: *const f64,
    est_im: *const f64,
    true_re: *const f64,
    true_im: *const f64,
    n: usize,
    slack: usize,
) -> f64 {
    let (Ok(a), Ok(b)) = (
        complex_in(est_re, est_im, n),
        complex_in(true_re, true_im, n),
    ) else {
        return f64::NAN;
    };
    if slack >= n {
        set_error("slack index out of range");
        return f64::NAN;
    }
    rmse(&a, &b, slack)
}

/// Keeps the `gamma` largest-magnitude entries of `chi` (ties to the lower
/// index) and zeroes the rest into `out`.
///
/// # Safety
/// `chi` and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gridse_hard_threshold(
    chi: *const f64,
    len: usize,
    gamma: usize,
    out: *mut f64,
) -> GridseStatus {
    guard(|| {
        if chi.is_null() || out.is_null() {
            return fail(GridseStatus::NullPointer, "buffer is null");
        }
        match hard_threshold(std::slice::from_raw_parts(chi, len), gamma) {
            Ok(t) => {
                std::slice::from_raw_parts_mut(out, len).copy_from_slice(&t.tau);
                GridseStatus::Ok
            }
            Err(e) => fail(GridseStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs a Monte-Carlo experiment described by a JSON config and returns the
/// report JSON through `out`; release it with [`gridse_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gridse_bench_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> GridseStatus {
    guard(|| {
        if out.is_null() {
            return fail(GridseStatus::NullPointer, "out is null");
        }
        let cfg: ExperimentConfig = match serde_json::from_str(tri!(text(config_json))) {
            Ok(c) => c,
            Err(e) => return fail(GridseStatus::InvalidArgument, e.to_string()),
        };
        match harness::run_experiment(cfg) {
            Ok(report) => match CString::new(report.to_json()) {
                Ok(s) => {
                    *out = s.into_raw();
                    GridseStatus::Ok
                }
                Err(_) => fail(GridseStatus::Panic, "report contains NUL"),
            },
            Err(e) => fail(harness_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gridse_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
