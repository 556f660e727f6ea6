mod common;

use common::*;
use gridse::harness::sample_true_state;
use gridse::measurement::{default_plan, NoiseLevels, PlanProfile};
use gridse::robust::*;
use gridse::solvers::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Full stable sort by decreasing magnitude, then keep the first `gamma`.
fn brute_force(chi: &[f64], gamma: usize) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..chi.len()).collect();
    idx.sort_by(|&a, &b| chi[b].abs().partial_cmp(&chi[a].abs()).unwrap());
    let mut out = vec![0.0; chi.len()];
    for &i in &idx[..gamma] {
        out[i] = chi[i];
    }
    out
}

#[test]
fn threshold_agrees_with_sorting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..1000 {
        let len = rng.random_range(0..40);
        // Half the vectors draw from a tiny alphabet to force ties.
        let chi: Vec<f64> = if trial % 2 == 0 {
            (0..len).map(|_| rng.random_range(-5.0..5.0)).collect()
        } else {
            (0..len)
                .map(|_| [-2.0, -1.0, 0.0, 1.0, 2.0][rng.random_range(0..5)])
                .collect()
        };
        let gamma = rng.random_range(0..=len);
        assert_eq!(
            hard_threshold(&chi, gamma).unwrap().tau,
            brute_force(&chi, gamma)
        );
    }
}

proptest! {
    #[test]
    fn threshold_keeps_at_most_gamma_and_dominates(chi in prop::collection::vec(-10.0f64..10.0, 0..30), g in 0usize..30) {
        let g = g.min(chi.len());
        let t = hard_threshold(&chi, g).unwrap();
        prop_assert!(t.support.len() <= g);
        let kept_min = t.support.iter().map(|&i| chi[i].abs()).fold(f64::INFINITY, f64::min);
        for (i, &x) in chi.iter().enumerate() {
            if !t.support.contains(&i) && t.support.len() == g && g > 0 {
                prop_assert!(x.abs() <= kept_min);
            }
        }
    }
}

fn contaminated_case14(
    seed: u64,
) -> (
    gridse::measurement::MeasurementPlan,
    Vec<num_complex::Complex64>,
    Vec<usize>,
) {
    let net = case("case14.m");
    let truth = sample_true_state(&net, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let mut plan = default_plan(net, PlanProfile::PaperLegacy, &[], &NoiseLevels::default())
        .unwrap()
        .generate_with(&truth, &mut rng)
        .unwrap();
    let out = plan.inject_outliers(&truth, 5, 5.0, &mut rng).unwrap();
    (plan.normalize().unwrap(), truth, out)
}

#[test]
fn zero_budget_reproduces_plain_descent_bitwise() {
    let (plan, _, _) = contaminated_case14(1);
    let u0 = dc_initialize(&plan).u;
    let cfg = SolverConfig {
        max_iters: 400,
        ..SolverConfig::default()
    };
    let (f, tf) = fgd_solve(&plan, &u0, &cfg, None).unwrap();
    let (r, tr) = rfgd_solve(&plan, &u0, &cfg, 0.0, None).unwrap();
    assert_eq!(f.u, r.u);
    assert_eq!(tf.records.len(), tr.trace.records.len());
    assert!(tr.supports.iter().all(|s| s.is_empty()));
    let (a, _) = agd_solve(&plan, &u0, &cfg, None).unwrap();
    let (ra, _) = ragd_solve(&plan, &u0, &cfg, 0.0, None).unwrap();
    assert_eq!(a.u, ra.u);
}

#[test]
fn truncated_gradient_equals_plain_gradient_without_the_support() {
    let (plan, _, _) = contaminated_case14(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random_factor(&mut rng, 14, 1);
    let (g, ind) = truncated_gradient(&u, &plan, 0.1).unwrap();
    assert_eq!(ind.budget, outlier_budget(0.1, plan.len()));
    let reduced = plan.without(&ind.support);
    assert!(relative_error(&g, &gradient_g(&u, &reduced)) < 1e-12);
    let trimmed = trimmed_objective(&u, &plan, 0.1).unwrap();
    assert!((trimmed - objective_g(&u, &reduced)).abs() <= 1e-12 * trimmed.abs());
    assert!(truncated_gradient(&u, &plan, 1.0).is_err());
}

#[test]
fn support_settles_on_converged_runs() {
    let mut settled = 0;
    let mut converged = 0;
    for seed in 0..20 {
        let (plan, _, _) = contaminated_case14(seed);
        let u0 = flat_initialize(&plan);
        let rho = 10.0 / plan.len() as f64;
        let (_, rt) = ragd_solve(&plan, &u0, &SolverConfig::default(), rho, None).unwrap();
        if rt.trace.termination == Termination::MaxIters {
            continue;
        }
        converged += 1;
        let tail = &rt.supports[rt.supports.len() - 10..];
        if tail.iter().all(|s| s == &tail[0]) {
            settled += 1;
        }
    }
    assert!(converged > 0);
    assert_eq!(settled, converged);
}

#[test]
fn identification_finds_gross_errors_at_the_truth() {
    let (plan, truth, out) = contaminated_case14(4);
    let ids = identify_outliers(&factor_from_vector(&truth), &plan, 5).unwrap();
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    assert_eq!(sorted, out);
    assert!(identify_outliers(&factor_from_vector(&truth), &plan, plan.len() + 1).is_err());
}
