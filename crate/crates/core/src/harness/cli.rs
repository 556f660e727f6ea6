use super::{
    load_case, Experiment, ExperimentConfig, HarnessError, InitKind, OutlierConfig, SolverKind,
};
use crate::analysis::{analytic_bounds, empirical_smoothness, verify_sandwich};
use crate::measurement::{plan_from_json, plan_to_json, PlanProfile};
use crate::solvers::{rmse, StepSize};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Parser, Debug)]
#[command(
    name = "gridse",
    version,
    about = "Power-grid state estimation by factored gradient descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a measurement-set JSON generated from a sampled true state.
    Gen(GenArgs),
    /// Run one estimation, print RMSE and iterations, write the trace CSV.
    Solve(SolveArgs),
    /// Run a Monte-Carlo benchmark.
    Bench(BenchArgs),
    /// Report the analytic bounds and check the sandwich inequality.
    Bounds(BoundsArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ProfileArg {
    PaperLegacy,
    Full,
}

impl From<ProfileArg> for PlanProfile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::PaperLegacy => PlanProfile::PaperLegacy,
            ProfileArg::Full => PlanProfile::Full,
        }
    }
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Case file (MATPOWER `.m` or JSON); `case14` and `case118` are bundled.
    #[arg(long)]
    case: Option<PathBuf>,
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    /// Comma-separated external bus ids carrying a PMU.
    #[arg(long, value_delimiter = ',')]
    pmu: Vec<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of corrupted legacy meters.
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long)]
    outlier_factor: Option<f64>,
    /// Drop all measurement noise.
    #[arg(long)]
    noiseless: bool,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long, value_enum)]
    init: Option<InitKind>,
    #[arg(long)]
    step_scale: Option<f64>,
    /// Fixed step size, bypassing the automatic rule.
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    no_refine: bool,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Trial whose realization is written.
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Measurement-set JSON written by `gen`; generated from the seed when absent.
    #[arg(long)]
    measurements: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    trial: usize,
    /// Directory for `trace.csv` and `estimate.json`.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long)]
    trials: Option<usize>,
    /// Directory for the report, per-trial table and timings.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: OutputFormat,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Difference-quotient trials for the empirical smoothness estimate.
    #[arg(long, default_value_t = 100)]
    smoothness_trials: usize,
}

fn config_error(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn build_config(
    plan: &PlanArgs,
    solver: Option<&SolverArgs>,
) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &plan.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text)
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(case) = &plan.case {
        cfg.case = case.clone();
    } else if plan.config.is_none() {
        return Err(config_error("--case is required"));
    }
    if let Some(p) = plan.profile {
        cfg.profile = p.into();
    }
    if !plan.pmu.is_empty() {
        cfg.pmu_buses = plan.pmu.clone();
    }
    if let Some(seed) = plan.seed {
        cfg.seed = seed;
    }
    if let Some(count) = plan.outliers {
        cfg.outliers = OutlierConfig {
            count,
            ..cfg.outliers
        };
    }
    if let Some(factor) = plan.outlier_factor {
        cfg.outliers.factor = factor;
    }
    if plan.noiseless {
        cfg.noise = crate::measurement::NoiseLevels::zero();
    }
    if let Some(s) = solver {
        if let Some(kind) = s.solver {
            cfg.solver = kind;
        }
        if s.init.is_some() {
            cfg.init = s.init;
        }
        if let Some(scale) = s.step_scale {
            cfg.solver_config.step_scale = scale;
        }
        if let Some(eta) = s.step_size {
            cfg.solver_config.step_size = StepSize::Fixed(eta);
        }
        if let Some(n) = s.max_iters {
            cfg.solver_config.max_iters = n;
        }
        if s.rho.is_some() {
            cfg.rho = s.rho;
        }
        if s.no_refine {
            cfg.refine = false;
        }
    }
    Ok(cfg)
}

fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn run_gen(args: GenArgs) -> Result<(), HarnessError> {
    let cfg = build_config(&args.plan, None)?;
    let exp = Experiment::load(cfg)?;
    let inst = exp.instance(args.trial)?;
    let json = plan_to_json(&inst.plan, Some(&inst.truth)) + "\n";
    match args.output {
        Some(path) => write_file(&path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn run_solve(args: SolveArgs) -> Result<(), HarnessError> {
    let cfg = build_config(&args.plan, Some(&args.solver))?;
    let exp = Experiment::load(cfg)?;
    let (plan, truth) = match &args.measurements {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let (plan, truth) = plan_from_json(exp.network.clone(), &text)?;
            let plan = if exp.config.normalize && !plan.is_normalized() {
                plan.normalize()?
            } else {
                plan
            };
            (plan, truth)
        }
        None => {
            let inst = exp.instance(args.trial)?;
            (inst.plan, Some(inst.truth))
        }
    };
    let est = exp.estimate(&plan, truth.as_deref())?;
    let slack = exp.network.slack();
    if let Some(t) = &truth {
        println!("rmse        {:.6e}", rmse(&est.v, t, slack));
    }
    println!("iterations  {}", est.trace.iterations());
    println!("termination {:?}", est.trace.termination);
    println!("first-order {:.3e}", est.first_order);
    println!("step size   {:.6e}", est.trace.step_size);
    if !est.identified.is_empty() {
        println!("flagged     {:?}", est.identified);
    }
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir)?;
        est.trace
            .write_csv(fs::File::create(dir.join("trace.csv"))?)?;
        let doc = serde_json::json!({
            "schema": 1,
            "solver": exp.config.solver,
            "iterations": est.trace.iterations(),
            "termination": est.trace.termination,
            "first_order": est.first_order,
            "step_size": est.trace.step_size,
            "identified": est.identified,
            "estimate": est.v.iter().map(|c| [c.re, c.im]).collect::<Vec<_>>(),
        });
        write_file(
            &dir.join("estimate.json"),
            &(serde_json::to_string_pretty(&doc)? + "\n"),
        )?;
    }
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<(), HarnessError> {
    let mut cfg = build_config(&args.plan, Some(&args.solver))?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    let report = Experiment::load(cfg)?.run()?;
    print!("{}", report.summary());
    if let Some(dir) = &args.output {
        fs::create_dir_all(dir)?;
        match args.format {
            OutputFormat::Json => write_file(&dir.join("report.json"), &report.to_json())?,
            OutputFormat::Csv => report.write_csv(fs::File::create(dir.join("trials.csv"))?)?,
        }
        report.write_timing_csv(fs::File::create(dir.join("timing.csv"))?)?;
    } else if args.format == OutputFormat::Json {
        print!("{}", report.to_json());
    } else {
        report.write_csv(std::io::stdout().lock())?;
    }
    Ok(())
}

fn run_bounds(args: BoundsArgs) -> Result<(), HarnessError> {
    let cfg = build_config(&args.plan, None)?;
    let network = Arc::new(load_case(&cfg.case, cfg.format)?);
    let exp = Experiment::new(network, cfg)?;
    let inst = exp.instance(0)?;
    let mut bounds = analytic_bounds(&inst.plan, exp.config.envelope)
        .map_err(|e| config_error(e.to_string()))?;
    bounds.m_emp = Some(
        empirical_smoothness(
            &inst.plan,
            &inst.truth,
            exp.config.envelope,
            args.smoothness_trials,
            exp.config.seed,
        )
        .map_err(|e| config_error(e.to_string()))?,
    );
    let sandwich = verify_sandwich(
        &inst.plan,
        exp.config.envelope,
        args.samples,
        exp.config.seed,
    )
    .map_err(|e| config_error(e.to_string()))?;
    let doc = serde_json::json!({ "bounds": bounds, "sandwich": sandwich });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}

/// Exit code for a failure: 1 for bad input, 2 for a failed run.
fn exit_code(e: &HarnessError) -> i32 {
    match e {
        HarnessError::Config(_) | HarnessError::Case(_) => 1,
        _ => 2,
    }
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            eprintln!("\n{}", Cli::command().render_usage());
            return 1;
        }
    };
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Solve(a) => run_solve(a),
        Command::Bench(a) => run_bench(a),
        Command::Bounds(a) => run_bounds(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
