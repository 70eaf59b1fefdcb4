mod common;

use lsr::bench::{run_experiment_grid, summarize, EstimatorKind, ExperimentGrid};
use lsr::estimator::{
    baseline_estimate, rod_estimate, roe_estimate, Baseline, InitRule, OptimizerConfig,
};
use lsr::kernel::{fit_mmd_terms, KernelSpec, MmdQuadratic};
use lsr::rng::{stream_rng, StreamRole};
use lsr::simplex::{project_simplex, SimplexVector};
use lsr::synth::{generate_sources, MixtureSpec};
use lsr::weighting::{WeightRule, WeightingConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{l2, project_oracle, random_simplex};

fn mwv(eps_h: f64) -> WeightingConfig {
    WeightingConfig::new(WeightRule::Mwv, eps_h).unwrap()
}

fn fitted_quads(seed: u64, m: usize, n: usize) -> Vec<MmdQuadratic> {
    let mut rng = stream_rng(seed, 0, 0, StreamRole::Generate);
    let d = generate_sources(&MixtureSpec::default(), m, n, m * n, &mut rng).unwrap();
    let spec = KernelSpec::default();
    d.sources
        .sources
        .iter()
        .map(|s| fit_mmd_terms(s, &d.target, &spec).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn projection_is_feasible_idempotent_and_optimal(v in prop::collection::vec(-2.0f64..2.0, 1..=4)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let again = project_simplex(p.as_slice()).unwrap();
        prop_assert!(l2(again.as_slice(), p.as_slice()) < 1e-15);
        prop_assert!(l2(p.as_slice(), &project_oracle(&v)) <= 1e-6);
    }

    #[test]
    fn projection_of_large_vectors_is_feasible(v in prop::collection::vec(-1e6f64..1e6, 1..64)) {
        let p = project_simplex(&v).unwrap();
        prop_assert!(p.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn average_objective_matches_grid_search() {
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let cfg = OptimizerConfig::default();
    for _ in 0..20 {
        let quads: Vec<MmdQuadratic> = (0..5)
            .map(|_| {
                let a01 = rng.random::<f64>() * 0.5;
                let a = vec![
                    0.5 + rng.random::<f64>(),
                    a01,
                    a01,
                    0.5 + rng.random::<f64>(),
                ];
                let b = vec![rng.random::<f64>(), rng.random::<f64>()];
                MmdQuadratic::from_parts(a, b).unwrap()
            })
            .collect();
        let est = rod_estimate(&quads, &cfg, &mwv(0.0)).unwrap();
        let objective = |q0: f64| {
            quads
                .iter()
                .map(|quad| quad.loss(&[q0, 1.0 - q0]).unwrap())
                .sum::<f64>()
                / 5.0
        };
        let best = (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .min_by(|a, b| objective(*a).total_cmp(&objective(*b)))
            .unwrap();
        assert!(
            (est.q_hat[0] - best).abs() <= 1e-3,
            "{} vs {best}",
            est.q_hat[0]
        );
    }
}

#[test]
fn corrupted_copy_gets_no_weight() {
    let clean = fitted_quads(22, 1, 200).remove(0);
    let k = clean.num_classes();
    let mut a = clean.a_matrix().to_vec();
    a.iter_mut().for_each(|v| *v += 50.0);
    let corrupted =
        MmdQuadratic::from_parts(a, clean.b_vector().iter().map(|b| b - 10.0).collect()).unwrap();
    for m in [4, 5, 8] {
        for bad in [0, m - 1] {
            let mut quads = vec![clean.clone(); m];
            quads[bad] = corrupted.clone();
            let eps_h = 1.0 / m as f64;
            for est in [
                rod_estimate(&quads, &OptimizerConfig::default(), &mwv(eps_h)).unwrap(),
                roe_estimate(
                    &quads,
                    &SimplexVector::uniform(k),
                    &OptimizerConfig::default(),
                    &mwv(eps_h),
                )
                .unwrap(),
            ] {
                let losses: Vec<f64> = quads
                    .iter()
                    .map(|q| q.loss(est.q_hat.as_slice()).unwrap())
                    .collect();
                assert!(losses
                    .iter()
                    .enumerate()
                    .all(|(j, l)| j == bad || *l < losses[bad]));
                assert_eq!(est.weights.weights()[bad], 0.0, "m={m} bad={bad}");
            }
        }
    }
}

#[test]
fn objective_never_increases_under_fixed_weights() {
    for seed in 0..10 {
        let quads = fitted_quads(seed, 8, 80);
        let cfg = OptimizerConfig {
            record_trace: true,
            tol: 1e-14,
            ..OptimizerConfig::default()
        };
        for est in [
            rod_estimate(&quads, &cfg, &mwv(0.0)).unwrap(),
            baseline_estimate(&quads, &Baseline::Average, &cfg).unwrap(),
        ] {
            let trace = est.trace.unwrap();
            assert!(trace.len() > 2);
            for pair in trace.windows(2) {
                assert!(
                    pair[1] <= pair[0] + 1e-15 * pair[0].abs().max(1.0),
                    "{pair:?}"
                );
            }
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let quads = fitted_quads(23, 12, 100);
    let cfg = OptimizerConfig {
        restarts: 6,
        init: InitRule::SeededRandom,
        seed: 9,
        ..OptimizerConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let rod = rod_estimate(&quads, &cfg, &mwv(0.25)).unwrap();
            let roe = roe_estimate(&quads, &rod.q_hat, &cfg, &mwv(0.25)).unwrap();
            (rod, roe)
        })
    };
    let (a_rod, a_roe) = run(1);
    let (b_rod, b_roe) = run(4);
    assert_eq!(a_rod, b_rod);
    assert_eq!(a_roe, b_roe);
}

#[test]
fn zero_budget_any_reference_agrees() {
    let mut rng = ChaCha20Rng::seed_from_u64(24);
    let quads = fitted_quads(24, 10, 100);
    let cfg = OptimizerConfig::default();
    let avg = baseline_estimate(&quads, &Baseline::Average, &cfg).unwrap();
    for _ in 0..10 {
        let q_prime = SimplexVector::new(random_simplex(2, &mut rng)).unwrap();
        let roe = roe_estimate(&quads, &q_prime, &cfg, &mwv(0.0)).unwrap();
        assert!(l2(roe.q_hat.as_slice(), avg.q_hat.as_slice()) <= 10.0 * cfg.tol);
    }
}

#[test]
fn two_refinement_steps_do_not_hurt() {
    let mut grid = ExperimentGrid::single_point(
        40,
        100,
        0.2,
        0.2,
        vec![EstimatorKind::Roe, EstimatorKind::RoeMulti],
    );
    grid.replications = 200;
    grid.base_seed = Some(25);
    grid.optimizer.refine_steps = 2;
    let rows = run_experiment_grid(&grid, 1).unwrap();
    assert!(rows.iter().all(|r| r.status == "ok"));
    let summary = summarize(&rows);
    let mean = |name: &str| summary.iter().find(|s| s.estimator == name).unwrap().mean;
    assert!(
        mean("roe-multi") <= 1.05 * mean("roe"),
        "{} vs {}",
        mean("roe-multi"),
        mean("roe")
    );
}
