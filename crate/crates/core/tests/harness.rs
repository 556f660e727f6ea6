mod common;

use common::*;
use gridse::harness::*;
use gridse::measurement::NoiseLevels;
use std::f64::consts::PI;

fn config(solver: SolverKind, trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        case: data("case14.m"),
        solver,
        trials,
        seed: 11,
        ..ExperimentConfig::default()
    }
}

#[test]
fn true_states_respect_the_envelope() {
    let net = case("case118.m");
    let mut mags = Vec::new();
    for seed in 0..90 {
        let v = sample_true_state(&net, seed);
        assert_eq!(v[net.slack()].arg(), 0.0);
        for c in &v {
            assert!((0.95..=1.05).contains(&c.norm()));
            assert!(c.arg().abs() <= 0.35 * PI + 1e-12);
            mags.push(c.norm());
        }
    }
    assert!(mags.len() >= 10_000);
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    assert!((mean - 1.0).abs() < 0.01);
    assert_eq!(sample_true_state(&net, 3), sample_true_state(&net, 3));
}

#[test]
fn noiseless_single_trial_is_exact() {
    let cfg = ExperimentConfig {
        noise: NoiseLevels::zero(),
        ..config(SolverKind::Fgd, 1)
    };
    let report = run_experiment(cfg).unwrap();
    assert_eq!(report.trials.len(), 1);
    assert!(report.trials[0].rmse.unwrap() <= 1e-5);
    assert!(report.trials[0].converged);
}

#[test]
fn reports_are_deterministic_and_self_consistent() {
    let a = run_experiment(config(SolverKind::Agd, 6)).unwrap();
    let b = run_experiment(config(SolverKind::Agd, 6)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let mut csv_a = Vec::new();
    let mut csv_b = Vec::new();
    a.write_csv(&mut csv_a).unwrap();
    b.write_csv(&mut csv_b).unwrap();
    assert_eq!(csv_a, csv_b);
    a.validate().unwrap();
    let back: BenchmarkReport = serde_json::from_str(&a.to_json()).unwrap();
    assert_eq!(back.trials.len(), 6);
    back.validate().unwrap();
}

#[test]
fn trials_do_not_depend_on_the_trial_count() {
    let few = run_experiment(config(SolverKind::Fgd, 2)).unwrap();
    let many = run_experiment(config(SolverKind::Fgd, 5)).unwrap();
    let rows = |r: &BenchmarkReport| serde_json::to_value(&r.trials).unwrap();
    assert_eq!(
        rows(&few).as_array().unwrap()[..],
        rows(&many).as_array().unwrap()[..2]
    );
}

#[test]
fn validator_rejects_tampered_aggregates() {
    let mut r = run_experiment(config(SolverKind::Fgd, 2)).unwrap();
    r.aggregates.convergence_rate = 12.0;
    assert!(r.validate().is_err());
}

#[test]
fn robust_runs_report_identification() {
    let cfg = ExperimentConfig {
        outliers: OutlierConfig {
            count: 5,
            factor: 5.0,
        },
        ..config(SolverKind::Ragd, 4)
    };
    let r = run_experiment(cfg).unwrap();
    for t in &r.trials {
        assert_eq!(t.outlier_true_indices.len(), 5);
        assert_eq!(t.outlier_identified_indices.as_ref().unwrap().len(), 5);
    }
    assert!(r.aggregates.identification_rate.unwrap() > 100.0 * 5.0 / 54.0);
    let plain = ExperimentConfig {
        outliers: OutlierConfig {
            count: 5,
            factor: 5.0,
        },
        ..config(SolverKind::Fgd, 1)
    };
    assert_eq!(
        run_experiment(plain)
            .unwrap()
            .aggregates
            .identification_rate,
        None
    );
}

#[test]
fn rmse_ignores_the_global_phase_of_the_estimate() {
    use gridse::solvers::rmse;
    use num_complex::Complex64;
    let net = case("case14.m");
    let truth = sample_true_state(&net, 1);
    let est: Vec<Complex64> = truth
        .iter()
        .map(|c| c * Complex64::new(1.001, 0.0))
        .collect();
    let base = rmse(&est, &truth, net.slack());
    for theta in [0.3, -2.0, PI] {
        let rotated: Vec<Complex64> = est
            .iter()
            .map(|c| c * Complex64::from_polar(1.0, theta))
            .collect();
        assert!((rmse(&rotated, &truth, net.slack()) - base).abs() < 1e-14);
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let cfg = ExperimentConfig {
        trials: 0,
        ..config(SolverKind::Fgd, 1)
    };
    assert!(matches!(run_experiment(cfg), Err(HarnessError::Config(_))));
    let cfg = ExperimentConfig {
        outliers: OutlierConfig {
            count: 54,
            factor: 5.0,
        },
        ..config(SolverKind::Fgd, 1)
    };
    assert!(matches!(run_experiment(cfg), Err(HarnessError::Config(_))));
    let cfg = ExperimentConfig {
        pmu_buses: vec![999],
        ..config(SolverKind::Fgd, 1)
    };
    assert!(matches!(run_experiment(cfg), Err(HarnessError::Config(_))));
    let cfg = ExperimentConfig {
        case: "missing.m".into(),
        ..config(SolverKind::Fgd, 1)
    };
    assert!(matches!(run_experiment(cfg), Err(HarnessError::Case(_))));
}

#[test]
fn divergent_trials_are_recorded_not_fatal() {
    let mut cfg = config(SolverKind::Fgd, 2);
    cfg.solver_config.step_size = gridse::solvers::StepSize::Fixed(50.0);
    let r = run_experiment(cfg).unwrap();
    assert!(r
        .trials
        .iter()
        .all(|t| t.error.is_some() && t.rmse.is_none() && !t.converged));
    assert_eq!(r.aggregates.mean_rmse, None);
    assert_eq!(r.aggregates.convergence_rate, 0.0);
}

#[test]
fn config_round_trips_through_json() {
    let cfg = ExperimentConfig {
        pmu_buses: vec![4, 9],
        rho: Some(0.1),
        ..config(SolverKind::Rfgd, 3)
    };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(
        serde_json::from_str::<ExperimentConfig>(&text).unwrap(),
        cfg
    );
    let sparse: ExperimentConfig = serde_json::from_str(r#"{"solver": "ragd"}"#).unwrap();
    assert_eq!(sparse.trials, 100);
    assert_eq!(sparse.solver, SolverKind::Ragd);
}
