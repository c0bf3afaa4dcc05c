use std::sync::Arc;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};

use alcoi::alcoi::{run_alcoi, run_baseline_aopt, run_baseline_random, stage_seed, AlcoiConfig, Experiment, Stage};
use alcoi::benchmarks::linear::{linear2_experiment, scalar_linear_experiment, scalar_linear_model};
use alcoi::benchmarks::{Benchmark, LinearConfig};
use alcoi::control::{excess_cost, model_task_hessian, ControlProblem, SynthesisMode};
use alcoi::design::{doed_plus, DesignObjective, DoedConfig};
use alcoi::dynamics::{rollout_batch, FnDynamics, Policy, PolicyClass, SystemModel};
use alcoi::estimation::{fisher_information, least_squares_fit, EpisodeDataset, LsqOptions};
use alcoi::Error;

fn small_cfg(n: usize) -> AlcoiConfig {
    AlcoiConfig {
        n_episodes: n,
        shooting_samples: 20,
        hessian_mc: 50,
        eval_mc: 50,
        ..AlcoiConfig::default()
    }
}

#[test]
fn same_seed_same_report() {
    let exp = linear2_experiment(&LinearConfig::default(), 3).unwrap();
    let cfg = small_cfg(32);
    let a = run_alcoi(&exp, &cfg, 9).unwrap();
    let b = run_alcoi(&exp, &cfg, 9).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
    let c = run_alcoi(&exp, &cfg, 10).unwrap();
    assert_ne!(a.refined_estimate, c.refined_estimate);

    let r1 = run_baseline_random(&exp, &cfg, 9).unwrap();
    let r2 = run_baseline_random(&exp, &cfg, 9).unwrap();
    assert_eq!(r1.without_timings(), r2.without_timings());
}

#[test]
fn coarse_estimate_depends_only_on_stage_one() {
    let exp = linear2_experiment(&LinearConfig::default(), 4).unwrap();
    let cfg = small_cfg(32);
    let report = run_alcoi(&exp, &cfg, 21).unwrap();
    let model = &exp.problem.model;
    let eps = rollout_batch(model, &exp.initial_policy, &exp.truth, 16, stage_seed(21, Stage::Initial)).unwrap();
    let data = EpisodeDataset::from_episodes(model, eps).unwrap();
    let opts = LsqOptions { seed: stage_seed(21, Stage::CoarseFit), ..cfg.lsq.clone() };
    let fit = least_squares_fit(&data, model, &exp.initial_guess, &opts).unwrap();
    assert_eq!(report.coarse_estimate.clone().unwrap(), fit.params.iter().copied().collect::<Vec<_>>());
    assert_eq!(report.episodes_used(), 32);
}

#[test]
fn bypassed_pipeline_is_plain_identification() {
    let exp = scalar_linear_experiment(&LinearConfig::default(), 5).unwrap();
    let mut cfg = small_cfg(40);
    cfg.diagnostics.coarse_override = Some(exp.truth.iter().copied().collect());
    cfg.diagnostics.replace_design_with_initial = true;
    let report = run_alcoi(&exp, &cfg, 2).unwrap();
    assert_eq!(report.coarse_estimate.as_deref(), Some(exp.truth.as_slice()));
    assert_eq!(report.episodes_used(), 40);
    let refined = DVector::from_vec(report.refined_estimate.clone());
    let standalone = excess_cost(&exp.problem, &refined, &exp.truth, cfg.eval_mc, stage_seed(2, Stage::Evaluation)).unwrap();
    assert_eq!(report.excess_cost, standalone);
}

#[test]
fn random_baseline_reaches_fisher_level() {
    let lin = LinearConfig::default();
    let exp = scalar_linear_experiment(&lin, 0).unwrap();
    let model = scalar_linear_model(&lin).unwrap();
    let fi = fisher_information(&Policy::random_energy(lin.budget), &model, &exp.truth, 20_000, 1)
        .unwrap()
        .matrix()[(0, 0)];
    let n = 1024;
    let cfg = AlcoiConfig { n_episodes: n, eval_mc: 10, ..AlcoiConfig::default() };
    let seeds = 40;
    let mean_sq: f64 = (0..seeds)
        .map(|s| {
            let r = run_baseline_random(&exp, &cfg, 100 + s).unwrap();
            (r.refined_estimate[0] - exp.truth[0]).powi(2)
        })
        .sum::<f64>()
        / seeds as f64;
    let level = 1.0 / (n as f64 * fi);
    assert!(mean_sq < 3.0 * level && mean_sq > level / 3.0, "{mean_sq:e} vs {level:e}");
}

#[test]
fn nothing_to_learn_means_no_excess_cost() {
    let dynamics = FnDynamics::new(1, 1, 0, |x, u, _p| dvector![0.5 * x[0] + u[0]]);
    let model = SystemModel::new("fixed", dynamics, 1.0, 5).unwrap();
    let class = PolicyClass::new(1, 1, |theta, _t, x| dvector![-theta[0] * x[0]]);
    let synth = SynthesisMode::Analytic(Arc::new(|_p: &DVector<f64>| Ok(dvector![0.4])));
    let problem = ControlProblem::new(model, class, |_, x, u| x[0] * x[0] + u[0] * u[0], |x| x[0] * x[0], synth).unwrap();
    let exp = Experiment {
        problem,
        truth: DVector::zeros(0),
        initial_guess: DVector::zeros(0),
        initial_policy: Policy::random_energy(5.0),
        exploration_budget: 5.0,
    };
    let r = run_baseline_random(&exp, &small_cfg(8), 0).unwrap();
    assert_eq!(r.excess_cost, 0.0);
    assert!(r.refined_estimate.is_empty());
}

#[test]
fn one_parameter_design_ignores_hessian_scale() {
    let exp = scalar_linear_experiment(&LinearConfig::default(), 6).unwrap();
    let cfg = small_cfg(32);
    let a = run_alcoi(&exp, &cfg, 8).unwrap();
    let b = run_baseline_aopt(&exp, &cfg, 8).unwrap();
    assert_eq!(b.method, "a-optimal");
    assert_eq!(a.refined_estimate, b.refined_estimate);
    assert_eq!(a.excess_cost, b.excess_cost);
}

#[test]
fn scaled_hessian_gives_identical_design() {
    let exp = linear2_experiment(&LinearConfig::default(), 7).unwrap();
    let model = &exp.problem.model;
    let h = dmatrix![1.0, 0.3; 0.3, 2.0];
    let cfg = DoedConfig { budget: 10.0, n_samples: 20, warm_start: true };
    let run = |c: f64| {
        let hc = &h * c;
        let b_phi = model.horizon() as f64 * hc.clone().symmetric_eigenvalues().abs().max() / 1e-6;
        let obj = DesignObjective::new(hc, 1e-3).unwrap();
        doed_plus(&obj, 27, &exp.initial_policy, &exp.truth, &exp.truth, model, b_phi, &cfg, 4).unwrap()
    };
    let (one, four) = (run(1.0), run(4.0));
    assert_eq!(one.dataset, four.dataset);
    for (x, y) in one.objective_trace.iter().zip(&four.objective_trace) {
        assert!((4.0 * x - y).abs() <= 1e-9 * y.abs());
    }
}

#[test]
fn failed_stage_keeps_partial_report() {
    let exp = linear2_experiment(&LinearConfig::default(), 8).unwrap();
    let mut cfg = small_cfg(32);
    cfg.hessian_step = -1.0;
    match run_alcoi(&exp, &cfg, 0) {
        Err(Error::StageFailed { stage, partial, .. }) => {
            assert_eq!(stage, "hessian");
            assert_eq!(partial.episodes_used, 16);
            assert!(partial.coarse_estimate.is_some());
        }
        other => panic!("unexpected outcome {other:?}"),
    }
}

#[test]
fn dataset_and_hessian_exports() {
    let exp = linear2_experiment(&LinearConfig::default(), 9).unwrap();
    let model = &exp.problem.model;
    let eps = rollout_batch(model, &exp.initial_policy, &exp.truth, 3, 1).unwrap();
    let data = EpisodeDataset::from_episodes(model, eps).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let back = EpisodeDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.transitions().zip(back.transitions()) {
        assert!((a.0 - b.0).norm() < 1e-12 && (a.2 - b.2).norm() < 1e-12);
    }

    let h = model_task_hessian(&exp.problem, &exp.truth, 20, 1e-2, 0).unwrap();
    let mut out = Vec::new();
    h.write_csv(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let parsed: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(DMatrix::from_fn(2, 2, |i, j| parsed[i][j]), h.matrix);
    let json = serde_json::to_value(&h).unwrap();
    assert_eq!(json["matrix"].as_array().unwrap().len(), 2);
}

#[test]
fn registry_runs_every_method_on_a_small_problem() {
    let bench = Benchmark::from_name("linear2", None).unwrap();
    let out = alcoi::benchmarks::run_sweep(
        &bench,
        Some(&serde_json::json!({"shooting_samples": 10, "eval_mc": 20, "hessian_mc": 20})),
        &alcoi::benchmarks::Method::ALL,
        &[16],
        2,
        0,
    )
    .unwrap();
    assert_eq!(out.rows.len(), 6);
    assert_eq!(out.failures, 0);
}
