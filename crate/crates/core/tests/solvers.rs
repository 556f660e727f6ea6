mod common;

use common::*;
use gridse::harness::sample_true_state;
use gridse::measurement::{default_plan, MeasurementPlan, NoiseLevels, PlanProfile};
use gridse::solvers::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noiseless_case14(seed: u64) -> (MeasurementPlan, Vec<num_complex::Complex64>) {
    let net = case("case14.m");
    let truth = sample_true_state(&net, seed);
    let plan = default_plan(net, PlanProfile::PaperLegacy, &[], &NoiseLevels::zero())
        .unwrap()
        .generate(&truth, seed)
        .unwrap()
        .normalize()
        .unwrap();
    (plan, truth)
}

#[test]
fn gradient_matches_finite_differences_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let n = 2 + rand::Rng::random_range(&mut rng, 0..7);
        let net = random_network(&mut rng, n);
        let plan = random_plan(&mut rng, net);
        for r in [1, 2] {
            let u = random_factor(&mut rng, n, r);
            let fd = finite_difference(&u, 1e-5, |x| objective_g(x, &plan));
            assert!(relative_error(&gradient_g(&u, &plan), &fd) < 1e-6);
        }
    }
}

#[test]
fn pmu_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = random_network(&mut rng, 6);
    let truth = sample_true_state(&net, 1);
    let plan = default_plan(net, PlanProfile::Full, &[1, 4], &NoiseLevels::default())
        .unwrap()
        .generate(&truth, 2)
        .unwrap()
        .normalize()
        .unwrap();
    let u = random_factor(&mut rng, 6, 1);
    let fd = finite_difference(&u, 1e-5, |x| augmented_objective(x, &plan).unwrap());
    assert!(relative_error(&gradient_augmented(&u, &plan).unwrap(), &fd) < 1e-6);
    assert!(matches!(
        gradient_augmented(&random_factor(&mut rng, 6, 2), &plan),
        Err(SolveError::Unsupported(_))
    ));
}

#[test]
fn unit_momentum_schedule_reduces_agd_to_fgd() {
    let (plan, _) = noiseless_case14(3);
    let u0 = dc_initialize(&plan).u;
    let mut cfg = SolverConfig {
        max_iters: 300,
        ..SolverConfig::default()
    };
    let (f, tf) = fgd_solve(&plan, &u0, &cfg, None).unwrap();
    cfg.momentum = Momentum::Constant(0.0);
    let (a, ta) = agd_solve(&plan, &u0, &cfg, None).unwrap();
    assert_eq!(f.u, a.u);
    assert_eq!(tf.iterations(), ta.iterations());
    assert_eq!(tf.final_objective(), ta.final_objective());
}

#[test]
fn zero_step_leaves_the_start_untouched() {
    let (plan, _) = noiseless_case14(4);
    let u0 = dc_initialize(&plan).u;
    let cfg = SolverConfig {
        step_size: StepSize::Fixed(0.0),
        ..SolverConfig::default()
    };
    let (s, t) = fgd_solve(&plan, &u0, &cfg, None).unwrap();
    assert_eq!(s.u, u0);
    assert_eq!(t.termination, Termination::TolIterate);
}

#[test]
fn oversized_step_is_reported_as_divergence() {
    let (plan, _) = noiseless_case14(5);
    let u0 = dc_initialize(&plan).u;
    let cfg = SolverConfig {
        step_size: StepSize::Fixed(50.0),
        ..SolverConfig::default()
    };
    match fgd_solve(&plan, &u0, &cfg, None) {
        Err(SolveError::Diverged { iteration, trace }) => {
            assert!(iteration >= 1);
            assert_eq!(trace.termination, Termination::Diverged);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn trace_distance_decreases_overall() {
    let (plan, truth) = noiseless_case14(6);
    let u0 = dc_initialize(&plan).u;
    let (_, t) = agd_solve(&plan, &u0, &SolverConfig::default(), Some(&truth)).unwrap();
    let first = t.records[0].dist_to_truth.unwrap();
    let last = t.records.last().unwrap().dist_to_truth.unwrap();
    assert!(last < 1e-3 * first);
    let mut csv = Vec::new();
    t.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("iter,objective,dist_to_truth,iterate_change,elapsed_ms\n"));
    assert_eq!(text.lines().count(), t.records.len() + 1);
}

#[test]
fn rank_two_factor_converges_to_rank_one_truth() {
    let (plan, truth) = noiseless_case14(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut u0 = random_factor(&mut rng, 14, 2) * num_complex::Complex64::new(0.05, 0.0);
    u0.set_column(0, &dc_initialize(&plan).u.column(0));
    let cfg = SolverConfig {
        rank: 2,
        ..SolverConfig::default()
    };
    let (s, _) = agd_solve(&plan, &u0, &cfg, None).unwrap();
    let v = rank_one_extract(&(&s.u * s.u.adjoint()), 0).unwrap();
    assert!(rmse(&v, &truth, 0) < 1e-3, "rmse {}", rmse(&v, &truth, 0));
}

#[test]
fn gauss_newton_recovers_noiseless_truth() {
    let (plan, truth) = noiseless_case14(9);
    let start = dc_initialize(&plan).u;
    let out = gn_solve(&plan, start.as_slice(), &GnConfig::default(), Some(&truth)).unwrap();
    assert_eq!(out.trace.termination, Termination::FirstOrder);
    assert!(rmse(&out.v, &truth, 0) < 1e-8);
    assert!(out.first_order < 1e-8);
}

#[test]
fn refinement_never_worsens_the_objective() {
    let net = case("case14.m");
    let truth = sample_true_state(&net, 10);
    let plan = default_plan(net, PlanProfile::PaperLegacy, &[], &NoiseLevels::default())
        .unwrap()
        .generate(&truth, 11)
        .unwrap()
        .normalize()
        .unwrap();
    let u0 = dc_initialize(&plan).u;
    let cfg = SolverConfig {
        max_iters: 200,
        ..SolverConfig::default()
    };
    let (s, _) = fgd_solve(&plan, &u0, &cfg, None).unwrap();
    let before = objective_g(&s.u, &plan);
    let refined = gn_refine(&plan, &s.u).unwrap();
    assert!(refined.objective <= before);
    assert!(refined.first_order < gradient_inf_norm(&plan, s.u.as_slice()));
}

#[test]
fn gauss_newton_flags_an_underdetermined_plan() {
    let net = case("case14.m");
    let truth = sample_true_state(&net, 12);
    let plan = default_plan(net, PlanProfile::PaperLegacy, &[], &NoiseLevels::zero())
        .unwrap()
        .generate(&truth, 1)
        .unwrap();
    let few = plan.without(
        &(0..plan.len())
            .filter(|i| !(14..24).contains(i))
            .collect::<Vec<_>>(),
    );
    let start = flat_initialize(&few);
    assert!(matches!(
        gn_solve(&few, start.as_slice(), &GnConfig::default(), None),
        Err(SolveError::Unobservable)
    ));
    let refined = gn_refine(&few, &start).unwrap();
    assert!(refined.warning.is_some());
    assert_eq!(refined.v, start.as_slice());
}

#[test]
fn step_size_scales_with_the_knob() {
    let (plan, _) = noiseless_case14(13);
    let u0 = dc_initialize(&plan).u;
    let a = auto_step_size(&plan, &u0, 1.0 / 16.0, 0).unwrap();
    let b = auto_step_size(&plan, &u0, 1.0 / 32.0, 0).unwrap();
    assert!((a.eta / b.eta - 2.0).abs() < 1e-12);
    assert!(a.eta > 0.0 && a.smoothness > 0.0);
}
