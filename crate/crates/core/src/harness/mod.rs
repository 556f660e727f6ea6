//! Monte-Carlo benchmark engine: sample a true state, generate readings,
//! estimate, and score every trial.

pub mod cli;

use crate::grid::{CaseError, CaseFormat, Network};
use crate::measurement::{
    default_plan, MeasurementError, MeasurementPlan, NoiseLevels, PlanProfile, VoltageEnvelope,
};
use crate::robust::{identify_outliers, ragd_solve, rfgd_solve};
use crate::solvers::{
    agd_solve, dc_initialize, factor_from_vector, fgd_solve, flat_initialize, gauge_align,
    gn_refine, gn_solve, gradient_inf_norm, rank_one_extract, rmse, ConvergenceTrace, Factor,
    GnConfig, SolveError, SolverConfig, Termination,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

pub const REPORT_SCHEMA: u32 = 1;

const IEEE14: &str = include_str!("../../data/case14.m");
const IEEE118: &str = include_str!("../../data/case118.m");

/// Bundled cases by name, matched on the file stem (`ieee118.m`, `case118`).
pub fn builtin_case(name: &str) -> Option<&'static str> {
    let stem = Path::new(name).file_stem()?.to_str()?.to_ascii_lowercase();
    match stem.as_str() {
        "case14" | "ieee14" => Some(IEEE14),
        "case118" | "ieee118" => Some(IEEE118),
        _ => None,
    }
}

/// Reads `path`, falling back to a bundled case of the same name when the
/// file does not exist.
pub fn load_case(path: &Path, format: Option<CaseFormat>) -> Result<Network, CaseError> {
    if !path.exists() {
        if let Some(text) = path.to_str().and_then(builtin_case) {
            return Network::parse(text, CaseFormat::MatpowerM);
        }
    }
    Network::from_file(path, format)
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Fgd,
    Agd,
    Rfgd,
    Ragd,
    Gn,
}

impl SolverKind {
    pub fn is_robust(self) -> bool {
        matches!(self, SolverKind::Rfgd | SolverKind::Ragd)
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Fgd => "fgd",
            SolverKind::Agd => "agd",
            SolverKind::Rfgd => "rfgd",
            SolverKind::Ragd => "ragd",
            SolverKind::Gn => "gn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Dc,
    Flat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub count: usize,
    pub factor: f64,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            count: 0,
            factor: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub case: PathBuf,
    pub format: Option<CaseFormat>,
    pub profile: PlanProfile,
    /// External bus ids carrying a PMU.
    pub pmu_buses: Vec<u32>,
    pub solver: SolverKind,
    pub refine: bool,
    pub trials: usize,
    pub noise: NoiseLevels,
    pub outliers: OutlierConfig,
    /// Outlier fraction for the robust solvers; defaults to twice the
    /// injected count over the plan length.
    pub rho: Option<f64>,
    /// How many meters to flag after a robust solve; defaults to the
    /// injected count.
    pub identify: Option<usize>,
    /// Defaults to the DC start, or the flat start for robust solvers.
    pub init: Option<InitKind>,
    pub normalize: bool,
    pub seed: u64,
    pub envelope: VoltageEnvelope,
    pub solver_config: SolverConfig,
    pub gn: GnConfig,
    /// A trial converges when its final `‖Jᵀr‖_∞` is below `gn.tol_first_order`
    /// and its RMSE is at most this value.
    pub rmse_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            case: PathBuf::from("case118.m"),
            format: None,
            profile: PlanProfile::PaperLegacy,
            pmu_buses: Vec::new(),
            solver: SolverKind::Fgd,
            refine: true,
            trials: 100,
            noise: NoiseLevels::default(),
            outliers: OutlierConfig::default(),
            rho: None,
            identify: None,
            init: None,
            normalize: true,
            seed: 0,
            envelope: VoltageEnvelope::default(),
            solver_config: SolverConfig::default(),
            gn: GnConfig::default(),
            rmse_threshold: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self, plan_len: usize) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be at least 1".into()));
        }
        if self.outliers.count > 0 && self.outliers.count >= plan_len {
            return Err(HarnessError::Config(format!(
                "{} outliers requested for a plan with {plan_len} meters",
                self.outliers.count
            )));
        }
        if let Some(rho) = self.rho {
            if !(0.0..1.0).contains(&rho) {
                return Err(HarnessError::Config(format!(
                    "rho must lie in [0, 1), got {rho}"
                )));
            }
        }
        self.solver_config.validate()?;
        Ok(())
    }

    fn init_kind(&self) -> InitKind {
        self.init.unwrap_or(if self.solver.is_robust() {
            InitKind::Flat
        } else {
            InitKind::Dc
        })
    }

    fn rho_for(&self, plan_len: usize) -> f64 {
        self.rho
            .unwrap_or_else(|| (2 * self.outliers.count) as f64 / plan_len as f64)
            .min(1.0 - f64::EPSILON)
    }
}

/// Independent stream for `(seed, trial, purpose)`.
fn stream(seed: u64, trial: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((trial as u64) << 8 | purpose);
    rng
}

/// Uniform magnitudes in `[0.95, 1.05]` and angles in `[−0.35π, 0.35π]`,
/// slack angle 0.
pub fn sample_true_state(network: &Network, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VoltageEnvelope::default().sample(network.n_buses(), Some(network.slack()), &mut rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    /// `None` when the solver failed.
    pub rmse: Option<f64>,
    pub rmse_unrefined: Option<f64>,
    pub iterations: usize,
    pub termination: Option<Termination>,
    pub first_order: Option<f64>,
    pub converged: bool,
    pub outlier_true_indices: Vec<usize>,
    /// `None` for solvers that do not flag meters.
    pub outlier_identified_indices: Option<Vec<usize>>,
    pub hit_count: usize,
    pub error: Option<String>,
    /// Wall-clock time of the solve, excluding case parsing and plan setup.
    #[serde(skip)]
    pub elapsed_ms: f64,
    #[serde(skip)]
    pub refine_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub mean_rmse: Option<f64>,
    /// Percentage of trials that converged.
    pub convergence_rate: f64,
    pub mean_iterations: f64,
    /// Percentage of injected outliers that were flagged.
    pub identification_rate: Option<f64>,
    #[serde(skip)]
    pub mean_runtime_ms: f64,
    #[serde(skip)]
    pub mean_refine_ms: f64,
}

impl Aggregates {
    pub fn from_rows(rows: &[TrialRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let rmses: Vec<f64> = rows.iter().filter_map(|r| r.rmse).collect();
        let injected: usize = rows
            .iter()
            .filter(|r| r.outlier_identified_indices.is_some())
            .map(|r| r.outlier_true_indices.len())
            .sum();
        let hits: usize = rows.iter().map(|r| r.hit_count).sum();
        Self {
            mean_rmse: (!rmses.is_empty()).then(|| rmses.iter().sum::<f64>() / rmses.len() as f64),
            convergence_rate: 100.0 * rows.iter().filter(|r| r.converged).count() as f64 / n,
            mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
            identification_rate: (injected > 0).then(|| 100.0 * hits as f64 / injected as f64),
            mean_runtime_ms: rows.iter().map(|r| r.elapsed_ms).sum::<f64>() / n,
            mean_refine_ms: rows.iter().map(|r| r.refine_ms).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema: u32,
    pub case: String,
    pub solver: SolverKind,
    pub seed: u64,
    pub plan_len: usize,
    pub trials: Vec<TrialRow>,
    pub aggregates: Aggregates,
}

impl BenchmarkReport {
    /// Checks that the aggregates match a recomputation from the rows.
    pub fn validate(&self) -> Result<(), String> {
        let again = Aggregates::from_rows(&self.trials);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        let same_opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(x), Some(y)) => close(x, y),
            (None, None) => true,
            _ => false,
        };
        if !same_opt(self.aggregates.mean_rmse, again.mean_rmse)
            || !close(self.aggregates.convergence_rate, again.convergence_rate)
            || !close(self.aggregates.mean_iterations, again.mean_iterations)
            || !same_opt(
                self.aggregates.identification_rate,
                again.identification_rate,
            )
        {
            return Err(format!(
                "aggregates {:?} disagree with rows {:?}",
                self.aggregates, again
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per trial; list columns are `;`-separated.
    pub fn write_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "trial",
            "rmse",
            "rmse_unrefined",
            "iterations",
            "converged",
            "first_order",
            "outlier_true_indices",
            "outlier_identified_indices",
            "hit_count",
            "error",
        ])?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        let list = |v: &[usize]| {
            v.iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(";")
        };
        for r in &self.trials {
            w.write_record([
                r.trial.to_string(),
                opt(r.rmse),
                opt(r.rmse_unrefined),
                r.iterations.to_string(),
                r.converged.to_string(),
                opt(r.first_order),
                list(&r.outlier_true_indices),
                r.outlier_identified_indices
                    .as_deref()
                    .map_or(String::new(), list),
                r.hit_count.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-trial wall-clock times, kept out of the deterministic report.
    pub fn write_timing_csv(&self, out: impl Write) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trial", "elapsed_ms", "refine_ms"])?;
        for r in &self.trials {
            w.write_record([
                r.trial.to_string(),
                format!("{:.3}", r.elapsed_ms),
                format!("{:.3}", r.refine_ms),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let pct = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.1}%"));
        format!(
            "case       {}\nsolver     {}\ntrials     {}\nmean RMSE  {}\nconverged  {:.1}%\nmean iters {:.1}\nidentified {}\nmean time  {:.2} ms (+{:.2} ms refine)\n",
            self.case,
            self.solver.name(),
            self.trials.len(),
            a.mean_rmse.map_or("-".to_string(), |v| format!("{v:.3e}")),
            a.convergence_rate,
            a.mean_iterations,
            pct(a.identification_rate),
            a.mean_runtime_ms,
            a.mean_refine_ms,
        )
    }
}

/// Everything a trial needs besides its index.
pub struct Experiment {
    pub network: Arc<Network>,
    pub config: ExperimentConfig,
    base: MeasurementPlan,
    pmu: Vec<usize>,
}

/// Data of one trial before estimation.
pub struct TrialInstance {
    pub truth: Vec<Complex64>,
    pub plan: MeasurementPlan,
    pub outliers: Vec<usize>,
}

/// What the estimator returned for one trial.
pub struct TrialEstimate {
    pub v: Vec<Complex64>,
    pub unrefined: Vec<Complex64>,
    pub identified: Vec<usize>,
    pub trace: ConvergenceTrace,
    pub first_order: f64,
    pub elapsed_ms: f64,
    pub refine_ms: f64,
}

impl Experiment {
    pub fn new(network: Arc<Network>, config: ExperimentConfig) -> Result<Self, HarnessError> {
        let pmu = config
            .pmu_buses
            .iter()
            .map(|&id| {
                network
                    .index_of(id)
                    .ok_or_else(|| HarnessError::Config(format!("PMU bus {id} is not in the case")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let base = default_plan(network.clone(), config.profile, &[], &config.noise)?;
        let final_len = base.len()
            - base
                .measurements
                .iter()
                .filter(|m| m.kind.located_at_bus().is_some_and(|b| pmu.contains(&b)))
                .count();
        config.validate(final_len)?;
        Ok(Self {
            network,
            config,
            base,
            pmu,
        })
    }

    pub fn load(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let network = Arc::new(load_case(&config.case, config.format)?);
        Self::new(network, config)
    }

    /// Truth, readings and outliers of trial `trial`; identical across runs
    /// and independent of the total trial count.
    pub fn instance(&self, trial: usize) -> Result<TrialInstance, HarnessError> {
        let seed = self.config.seed;
        let truth = self.config.envelope.sample(
            self.network.n_buses(),
            Some(self.network.slack()),
            &mut stream(seed, trial, 0),
        );
        let mut plan = self
            .base
            .generate_with(&truth, &mut stream(seed, trial, 1))?;
        if !self.pmu.is_empty() {
            plan = plan.attach_pmu(
                &self.pmu,
                self.config.noise.pmu,
                &truth,
                &mut stream(seed, trial, 2),
            )?;
        }
        let outliers = if self.config.outliers.count > 0 {
            plan.inject_outliers(
                &truth,
                self.config.outliers.count,
                self.config.outliers.factor,
                &mut stream(seed, trial, 3),
            )?
        } else {
            Vec::new()
        };
        if self.config.normalize {
            plan = plan.normalize()?;
        }
        Ok(TrialInstance {
            truth,
            plan,
            outliers,
        })
    }

    pub fn estimate(
        &self,
        plan: &MeasurementPlan,
        truth: Option<&[Complex64]>,
    ) -> Result<TrialEstimate, HarnessError> {
        estimate(plan, &self.config, truth)
    }

    pub fn run_trial(&self, trial: usize) -> Result<TrialRow, HarnessError> {
        let slack = self.network.slack();
        let inst = self.instance(trial)?;
        let mut row = TrialRow {
            trial,
            rmse: None,
            rmse_unrefined: None,
            iterations: 0,
            termination: None,
            first_order: None,
            converged: false,
            outlier_true_indices: inst.outliers.clone(),
            outlier_identified_indices: self.config.solver.is_robust().then(Vec::new),
            hit_count: 0,
            error: None,
            elapsed_ms: 0.0,
            refine_ms: 0.0,
        };
        match self.estimate(&inst.plan, None) {
            Ok(est) => {
                let r = rmse(&est.v, &inst.truth, slack);
                row.rmse = Some(r);
                row.rmse_unrefined = Some(rmse(&est.unrefined, &inst.truth, slack));
                row.iterations = est.trace.iterations();
                row.termination = Some(est.trace.termination);
                row.first_order = Some(est.first_order);
                row.converged = est.first_order < self.config.gn.tol_first_order
                    && r <= self.config.rmse_threshold;
                row.hit_count = est
                    .identified
                    .iter()
                    .filter(|i| inst.outliers.contains(i))
                    .count();
                row.outlier_identified_indices =
                    self.config.solver.is_robust().then_some(est.identified);
                row.elapsed_ms = est.elapsed_ms;
                row.refine_ms = est.refine_ms;
            }
            Err(HarnessError::Solve(e)) => {
                if let SolveError::Diverged { trace, .. } = &e {
                    row.iterations = trace.iterations();
                }
                row.error = Some(e.to_string());
            }
            Err(e) => return Err(e),
        }
        Ok(row)
    }

    /// Runs every trial on the rayon pool; rows come back in trial order.
    pub fn run(&self) -> Result<BenchmarkReport, HarnessError> {
        let trials = (0..self.config.trials)
            .into_par_iter()
            .map(|t| self.run_trial(t))
            .collect::<Result<Vec<_>, _>>()?;
        let case = self.config.case.file_name().map_or_else(
            || self.config.case.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        Ok(BenchmarkReport {
            schema: REPORT_SCHEMA,
            case,
            solver: self.config.solver,
            seed: self.config.seed,
            plan_len: self.base.len(),
            aggregates: Aggregates::from_rows(&trials),
            trials,
        })
    }
}

/// Initializes, solves and refines on `plan` as `cfg` prescribes; `truth`, when given, fills
/// the distance column of the trace.
pub fn estimate(
    plan: &MeasurementPlan,
    cfg: &ExperimentConfig,
    truth: Option<&[Complex64]>,
) -> Result<TrialEstimate, HarnessError> {
    let u0: Factor = match cfg.init_kind() {
        InitKind::Dc => dc_initialize(plan).u,
        InitKind::Flat => flat_initialize(plan),
    };
    let start = Instant::now();
    let mut identified = Vec::new();
    let truth = truth.filter(|t| t.len() == plan.n_buses());
    let (u, trace) = match cfg.solver {
        SolverKind::Fgd => {
            let (s, t) = fgd_solve(plan, &u0, &cfg.solver_config, truth)?;
            (s.u, t)
        }
        SolverKind::Agd => {
            let (s, t) = agd_solve(plan, &u0, &cfg.solver_config, truth)?;
            (s.u, t)
        }
        SolverKind::Rfgd | SolverKind::Ragd => {
            let rho = cfg.rho_for(plan.len());
            let solve = if cfg.solver == SolverKind::Rfgd {
                rfgd_solve
            } else {
                ragd_solve
            };
            let (s, t) = solve(plan, &u0, &cfg.solver_config, rho, truth)?;
            let k = cfg.identify.unwrap_or(cfg.outliers.count);
            identified = identify_outliers(&s.u, plan, k)?;
            (s.u, t.trace)
        }
        SolverKind::Gn => {
            let out = gn_solve(plan, u0.as_slice(), &cfg.gn, truth)?;
            (factor_from_vector(&out.v), out.trace)
        }
    };
    let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
    let cleaned;
    let final_plan = if identified.is_empty() {
        plan
    } else {
        cleaned = plan.without(&identified);
        &cleaned
    };
    let slack = plan.network().slack();
    let u = if u.ncols() > 1 {
        factor_from_vector(&rank_one_extract(&(&u * u.adjoint()), slack)?)
    } else {
        u
    };
    let unrefined = gauge_align(u.as_slice(), slack);
    let refine_start = Instant::now();
    let v = if cfg.refine && cfg.solver != SolverKind::Gn {
        gn_refine(final_plan, &u)?.v
    } else {
        u.as_slice().to_vec()
    };
    let refine_ms = refine_start.elapsed().as_secs_f64() * 1e3;
    Ok(TrialEstimate {
        first_order: gradient_inf_norm(final_plan, &v),
        v: gauge_align(&v, slack),
        unrefined,
        identified,
        trace,
        elapsed_ms,
        refine_ms,
    })
}

/// Loads the case and runs the configured experiment.
pub fn run_experiment(config: ExperimentConfig) -> Result<BenchmarkReport, HarnessError> {
    Experiment::load(config)?.run()
}
