//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test -p lsr --test acceptance`; extra arguments filter
//! criteria by substring.

mod common;

use std::time::Instant;

use lsr::bench::{
    results_csv, run_experiment_grid, summarize, EstimatorKind, ExperimentGrid, MetricKind,
};
use lsr::classifier::{predict_labels, train_calibrated_classifier};
use lsr::estimator::{baseline_estimate, rod_estimate, roe_estimate, Baseline, OptimizerConfig};
use lsr::kernel::{fit_mmd_terms, mmd_gradient, mmd_loss, KernelSpec, MmdQuadratic};
use lsr::metrics::misclassification_error;
use lsr::rng::{stream_rng, StreamRole};
use lsr::simplex::{project_simplex, SimplexVector};
use lsr::synth::{
    contaminate, generate_sources, ContaminationPlan, ContaminationScheme, MixtureSpec,
};
use lsr::weighting::{mwv_weights, removal_count, WeightingConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::*;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn mwv_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut mismatches = 0;
    for m in 4..=12 {
        for _ in 0..1000 {
            let values: Vec<f64> = (0..m).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
            let eps_h = r.random::<f64>() * 0.49;
            let s = m - removal_count(eps_h, m);
            let got = mwv_weights(&values, eps_h).unwrap();
            if got.selected() != mwv_exhaustive(&values, s).as_slice() {
                mismatches += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches in 9000 inputs, {secs:.2}s"),
    )
}

fn mwv_contiguity() -> Outcome {
    let mut r = rng(102);
    let mut broken = 0;
    for _ in 0..10_000 {
        let m = r.random_range(2..=60);
        let values: Vec<f64> = (0..m).map(|_| r.random::<f64>()).collect();
        let eps_h = r.random::<f64>() * 0.49;
        let w = mwv_weights(&values, eps_h).unwrap();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let ranks: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(_, j)| w.weights()[**j] > 0.0)
            .map(|(rank, _)| rank)
            .collect();
        if ranks.windows(2).any(|p| p[1] != p[0] + 1) {
            broken += 1;
        }
    }
    outcome(
        broken == 0,
        format!("{broken} non-window selections in 10000"),
    )
}

fn projection_oracle() -> Outcome {
    let mut r = rng(103);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let k = 1 + i % 4;
        let v: Vec<f64> = (0..k).map(|_| r.random::<f64>() * 3.0 - 1.0).collect();
        let got = project_simplex(&v).unwrap();
        worst = worst.max(l2(got.as_slice(), &project_oracle(&v)));
    }
    outcome(
        worst <= 1e-6,
        format!("max l2 gap {worst:.2e} over 1000 vectors"),
    )
}

fn random_quad<R: Rng>(k: usize, r: &mut R) -> MmdQuadratic {
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in i..k {
            let v = r.random::<f64>();
            a[i * k + j] = v;
            a[j * k + i] = v;
        }
    }
    let b = (0..k).map(|_| r.random::<f64>()).collect();
    MmdQuadratic::from_parts(a, b).unwrap()
}

fn gradient_check() -> Outcome {
    let mut r = rng(104);
    let spec = KernelSpec::default();
    let mixture = MixtureSpec::default();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..500 {
        let quad = if i % 5 == 0 {
            let d = generate_sources(&mixture, 1, 60, 60, &mut r).unwrap();
            fit_mmd_terms(&d.sources.sources[0], &d.target, &spec).unwrap()
        } else {
            random_quad(r.random_range(2..=5), &mut r)
        };
        let k = quad.num_classes();
        let q = random_simplex(k, &mut r);
        let g = mmd_gradient(&quad, &q).unwrap();
        let fd: Vec<f64> = (0..k)
            .map(|c| {
                let mut up = q.clone();
                let mut down = q.clone();
                up[c] += h;
                down[c] -= h;
                (mmd_loss(&quad, &up).unwrap() - mmd_loss(&quad, &down).unwrap()) / (2.0 * h)
            })
            .collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(l2(&g, &fd) / norm);
    }
    outcome(
        worst <= 1e-6,
        format!("max relative error {worst:.2e} over 500 pairs"),
    )
}

fn unbiasedness() -> Outcome {
    let mut r = rng(105);
    let means = [0.0, 4.0];
    let q_star = [0.6, 0.4];
    let spec = KernelSpec::default();
    let reps = 2000;
    let mut draws: Vec<[f64; 5]> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let source = gaussian_source(&[20, 15], &means, &mut r);
        let target = gaussian_target(30, &q_star, &means, &mut r);
        let quad = fit_mmd_terms(&source, &target, &spec).unwrap();
        draws.push([
            quad.a(0, 0),
            quad.a(0, 1),
            quad.a(1, 1),
            quad.b_vector()[0],
            quad.b_vector()[1],
        ]);
    }
    let pop_a = |k: usize, l: usize| gaussian_kernel_mean(means[k] - means[l], 2.0, 1.0);
    let pop_b = |k: usize| q_star[0] * pop_a(k, 0) + q_star[1] * pop_a(k, 1);
    let truth = [pop_a(0, 0), pop_a(0, 1), pop_a(1, 1), pop_b(0), pop_b(1)];
    let names = ["A11", "A12", "A22", "b1", "b2"];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for e in 0..5 {
        let n = reps as f64;
        let mean = draws.iter().map(|d| d[e]).sum::<f64>() / n;
        let var = draws.iter().map(|d| (d[e] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = (mean - truth[e]).abs() / (var / n).sqrt();
        worst = worst.max(z);
        parts.push(format!("{}={z:.2}", names[e]));
    }
    outcome(
        worst <= 3.0,
        format!("|z| per entry {} (limit 3)", parts.join(" ")),
    )
}

fn consistency() -> Outcome {
    let start = Instant::now();
    let spec = KernelSpec::default();
    let mixture = MixtureSpec::default();
    let cfg = OptimizerConfig::default();
    let mut total = 0.0;
    for seed in 0..20 {
        let mut r = stream_rng(seed, 0, 0, StreamRole::Generate);
        let d = generate_sources(&mixture, 1, 20_000, 20_000, &mut r).unwrap();
        let quad = fit_mmd_terms(&d.sources.sources[0], &d.target, &spec).unwrap();
        let est = baseline_estimate(&[quad], &Baseline::Single(0), &cfg).unwrap();
        total += l2(est.q_hat.as_slice(), &[0.6, 0.4]);
    }
    let mean = total / 20.0;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mean <= 0.02 && secs < 60.0,
        format!("mean l2 error {mean:.4} over 20 seeds, {secs:.1}s"),
    )
}

fn means_by_estimator(
    grid: &ExperimentGrid,
    workers: usize,
) -> (Vec<(String, String, f64)>, usize) {
    let rows = run_experiment_grid(grid, workers).unwrap();
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    let means = summarize(&rows)
        .into_iter()
        .map(|s| (s.estimator.to_string(), s.metric.to_string(), s.mean))
        .collect();
    (means, failed)
}

fn lookup(means: &[(String, String, f64)], est: &str, metric: &str) -> f64 {
    means
        .iter()
        .find(|(e, m, _)| e == est && m == metric)
        .map(|t| t.2)
        .unwrap_or(f64::NAN)
}

fn bench_ordering() -> Outcome {
    let start = Instant::now();
    use EstimatorKind::*;
    let mut grid =
        ExperimentGrid::single_point(40, 100, 0.2, 0.2, vec![Average, Trim, Rod, Roe, Oracle]);
    grid.replications = 100;
    grid.base_seed = Some(1);
    grid.metrics = vec![MetricKind::Mse, MetricKind::Fsn];
    let (means, failed) = means_by_estimator(&grid, 1);
    let mse = |e| lookup(&means, e, "mse");
    let fsn = |e| lookup(&means, e, "fsn");
    let secs = start.elapsed().as_secs_f64();
    let pass = failed == 0
        && mse("roe") < mse("rod")
        && mse("roe") < mse("trim")
        && mse("roe") < mse("average")
        && fsn("roe") <= fsn("rod")
        && fsn("roe") <= fsn("trim")
        && fsn("oracle") == 0.0
        && secs < 300.0;
    outcome(
        pass,
        format!(
            "MSE roe {:.3e} rod {:.3e} trim {:.3e} average {:.3e}; FSN roe {:.2} rod {:.2} trim {:.2} oracle {}; {failed} failed rows, {secs:.1}s",
            mse("roe"), mse("rod"), mse("trim"), mse("average"),
            fsn("roe"), fsn("rod"), fsn("trim"), fsn("oracle")
        ),
    )
}

fn envelope() -> Outcome {
    let mut grid = ExperimentGrid::single_point(
        40,
        100,
        0.4,
        0.4,
        vec![EstimatorKind::Roe, EstimatorKind::Oracle],
    );
    grid.replications = 100;
    grid.base_seed = Some(1);
    let (means, failed) = means_by_estimator(&grid, 1);
    let roe = lookup(&means, "roe", "mse");
    let oracle = lookup(&means, "oracle", "mse");
    outcome(
        failed == 0 && roe <= 3.0 * oracle,
        format!("MSE roe {roe:.3e} vs 3 x oracle {:.3e}", 3.0 * oracle),
    )
}

fn zero_budget_collapse() -> Outcome {
    let mut r = rng(109);
    let spec = KernelSpec::default();
    let mixture = MixtureSpec::default();
    let cfg = OptimizerConfig::default();
    let wcfg = WeightingConfig::new(lsr::weighting::WeightRule::Mwv, 0.0).unwrap();
    let plan = ContaminationPlan::new(0.2, ContaminationScheme::default()).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = r.random_range(3..=12);
        let d = generate_sources(&mixture, m, 100, 300, &mut r).unwrap();
        let sources = contaminate(&d.sources, &plan, &mut r).unwrap();
        let quads: Vec<MmdQuadratic> = sources
            .sources
            .iter()
            .map(|s| fit_mmd_terms(s, &d.target, &spec).unwrap())
            .collect();
        let q_prime = SimplexVector::new(random_simplex(2, &mut r)).unwrap();
        let estimates = [
            rod_estimate(&quads, &cfg, &wcfg).unwrap().q_hat,
            roe_estimate(&quads, &q_prime, &cfg, &wcfg).unwrap().q_hat,
            baseline_estimate(&quads, &Baseline::Trim { eps_h: 0.0 }, &cfg)
                .unwrap()
                .q_hat,
            baseline_estimate(&quads, &Baseline::Average, &cfg)
                .unwrap()
                .q_hat,
        ];
        for a in &estimates {
            for b in &estimates {
                worst = worst.max(l2(a.as_slice(), b.as_slice()));
            }
        }
    }
    let limit = 10.0 * cfg.tol;
    outcome(
        worst <= limit,
        format!("max pairwise gap {worst:.2e} (limit {limit:.0e}) over 50 instances"),
    )
}

fn variance_ratio() -> Outcome {
    let spec = KernelSpec::default();
    let mixture = MixtureSpec::default();
    let q2 = [0.6, 0.4];
    let shift = |norm: f64| {
        let t = norm / 2f64.sqrt();
        [q2[0] + t, q2[1] - t]
    };
    let (far, near) = (shift(0.2), shift(0.02));
    let reps = 2000;
    let mut e_far = Vec::with_capacity(reps);
    let mut e_near = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut r = stream_rng(110, 0, rep as u64, StreamRole::Generate);
        let d = generate_sources(&mixture, 1, 100, 100, &mut r).unwrap();
        let quad = fit_mmd_terms(&d.sources.sources[0], &d.target, &spec).unwrap();
        let base = mmd_loss(&quad, &q2).unwrap();
        e_far.push(mmd_loss(&quad, &far).unwrap() - base);
        e_near.push(mmd_loss(&quad, &near).unwrap() - base);
    }
    let var = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    let ratio = var(&e_far) / var(&e_near);
    outcome(
        (30.0..=300.0).contains(&ratio),
        format!("variance ratio {ratio:.1} over {reps} draws"),
    )
}

fn classifier_bayes() -> Outcome {
    let mut r = stream_rng(111, 0, 0, StreamRole::Generate);
    let mixture = MixtureSpec::default();
    let d = generate_sources(&mixture, 5, 5000, 5000, &mut r).unwrap();
    let q_star = mixture.target_proportions.clone();
    let params = train_calibrated_classifier(
        &d.sources.sources,
        &q_star,
        &OptimizerConfig::default(),
        &WeightingConfig::uniform(),
        None,
    )
    .unwrap();
    let pred = predict_labels(&params, d.target.covariates(), 1).unwrap();
    let err = misclassification_error(&pred, &d.target_labels).unwrap();
    let bayes = bayes_error_two_gaussians(0.6, 0.0, 0.4, 4.0);
    outcome(
        err <= bayes + 0.02,
        format!("target error {err:.4} vs Bayes {bayes:.4} + 0.02"),
    )
}

fn determinism() -> Outcome {
    use EstimatorKind::*;
    let all = vec![Single, Average, Trim, Rod, Roe, RoeMulti, Oracle];
    let mut grid = ExperimentGrid::single_point(10, 100, 0.2, 0.2, all);
    grid.replications = 6;
    grid.base_seed = Some(7);
    grid.metrics = vec![
        MetricKind::Mse,
        MetricKind::Fsn,
        MetricKind::Misclassification,
    ];
    let one = results_csv(&run_experiment_grid(&grid, 1).unwrap()).unwrap();
    let eight = results_csv(&run_experiment_grid(&grid, 8).unwrap()).unwrap();
    outcome(
        one == eight,
        format!("{} bytes, identical: {}", one.len(), one == eight),
    )
}

fn main() {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let criteria: [Criterion; 12] = [
        ("mwv-oracle-equivalence", mwv_oracle),
        ("mwv-contiguity", mwv_contiguity),
        ("simplex-projection-oracle", projection_oracle),
        ("gradient-finite-difference", gradient_check),
        ("mmd-unbiasedness", unbiasedness),
        ("consistency-at-scale", consistency),
        ("benchmark-ordering", bench_ordering),
        ("robustness-envelope-eps-0.4", envelope),
        ("zero-budget-collapse", zero_budget_collapse),
        ("variance-reduction-ratio", variance_ratio),
        ("calibrated-classifier-bayes", classifier_bayes),
        ("bench-determinism-workers", determinism),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
