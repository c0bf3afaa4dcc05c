//! Scripted numerical checks exposed by the command-line tool.

use nalgebra::{dvector, DMatrix};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use super::linear::{linear2_experiment, LinearConfig};
use super::toy::one_step_problem;
use super::Benchmark;
use crate::alcoi::{design_weight, regularizer, stage_seed, ObjectiveKind, Stage};
use crate::control::model_task_hessian;
use crate::design::{doed_plus, DesignObjective, DoedConfig};
use crate::dynamics::rollout_batch;
use crate::estimation::{least_squares_best_effort, EpisodeDataset, LsqOptions};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn fitted_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub sq_error: f64,
}

#[derive(Clone, Debug)]
pub struct RateCheck {
    pub rows: Vec<RateRow>,
    /// `(N, mean squared error)` per sweep point.
    pub means: Vec<(usize, f64)>,
    pub slope: f64,
    pub passed: bool,
}

pub const RATE_SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);

/// Squared parameter error of least squares on the two-parameter linear system
/// under the fixed random-energy policy, and its log-log slope in `N`.
pub fn rate_check(sweep: &[usize], n_seeds: usize, seed: u64) -> Result<RateCheck> {
    if sweep.len() < 2 || n_seeds == 0 {
        return Err(Error::InvalidArgument("rate check needs two sweep points and one seed".into()));
    }
    let cfg = LinearConfig::default();
    let jobs: Vec<(usize, u64)> = sweep
        .iter()
        .flat_map(|&n| (0..n_seeds).map(move |i| (n, derive_seed(seed, i as u64))))
        .collect();
    let rows = jobs
        .into_par_iter()
        .map(|(n, s)| {
            let exp = linear2_experiment(&cfg, derive_seed(s, 1))?;
            let model = &exp.problem.model;
            let eps = rollout_batch(model, &exp.initial_policy, &exp.truth, n, derive_seed(s, 2))?;
            let data = EpisodeDataset::from_episodes(model, eps)?;
            let opts = LsqOptions { seed: derive_seed(s, 3), ..LsqOptions::default() };
            let (fit, _) = least_squares_best_effort(&data, model, &exp.initial_guess, &opts)?;
            Ok(RateRow { n, seed: s, sq_error: (&fit.params - &exp.truth).norm_squared() })
        })
        .collect::<Result<Vec<_>>>()?;

    let means: Vec<(usize, f64)> = sweep
        .iter()
        .map(|&n| {
            let v: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.sq_error).collect();
            (n, v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let xs: Vec<f64> = means.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|(_, m)| m.ln()).collect();
    let slope = fitted_slope(&xs, &ys);
    let passed = (RATE_SLOPE_RANGE.0..=RATE_SLOPE_RANGE.1).contains(&slope);
    Ok(RateCheck { rows, means, slope, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianCheck {
    pub fd_step: f64,
    pub estimate: f64,
    pub half_step_estimate: f64,
    pub closed_form: f64,
    pub relative_error: f64,
    pub half_step_gap: f64,
    pub passed: bool,
}

/// Model-task Hessian of the one-step toy at unit gain, against `2 / phi^2`,
/// at `fd_step` and `fd_step / 2`.
pub fn hessian_check(n_mc: usize, fd_step: f64, seed: u64) -> Result<HessianCheck> {
    let problem = one_step_problem(1.0)?;
    let truth = dvector![1.0];
    let full = model_task_hessian(&problem, &truth, n_mc, fd_step, seed)?;
    let half = model_task_hessian(&problem, &truth, n_mc, fd_step / 2.0, seed)?;
    let (h1, h2) = (full.matrix[(0, 0)], half.matrix[(0, 0)]);
    let closed_form = 2.0;
    let relative_error = (h1 - closed_form).abs() / closed_form;
    let half_step_gap = (h1 - h2).abs() / h2.abs();
    Ok(HessianCheck {
        fd_step,
        estimate: h1,
        half_step_estimate: h2,
        closed_form,
        relative_error,
        half_step_gap,
        passed: relative_error <= 0.05 && half_step_gap <= 0.01,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub seed: u64,
    pub epoch: usize,
    pub phi: f64,
}

#[derive(Clone, Debug)]
pub struct DoedTrace {
    pub rows: Vec<TraceRow>,
    pub mean_initial: f64,
    pub mean_final: f64,
    pub passed: bool,
}

/// For each seed: fit coarsely on `n / 2` episodes of the initial policy,
/// form the design objective from the model-task Hessian at that estimate,
/// and run the design loop with `n` episodes. Records the objective per epoch.
pub fn doed_trace(bench: &Benchmark, alcoi: Option<&Value>, n: usize, n_seeds: usize, seed: u64) -> Result<DoedTrace> {
    if n_seeds == 0 {
        return Err(Error::InvalidArgument("doed trace needs at least one seed".into()));
    }
    let cfg = bench.alcoi_config(alcoi)?;
    let runs = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let s = derive_seed(seed, i as u64);
            let exp = bench.experiment(derive_seed(s, 1))?;
            let model = &exp.problem.model;
            let eps = rollout_batch(model, &exp.initial_policy, &exp.truth, n / 2, stage_seed(s, Stage::Initial))?;
            let data = EpisodeDataset::from_episodes(model, eps)?;
            let opts = LsqOptions { seed: stage_seed(s, Stage::CoarseFit), ..cfg.lsq.clone() };
            let (coarse, _) = least_squares_best_effort(&data, model, &exp.initial_guess, &opts)?;
            let d = model.param_dim();
            let hessian = match cfg.objective {
                ObjectiveKind::AOptimal => DMatrix::identity(d, d),
                ObjectiveKind::ControlOriented => {
                    let h = model_task_hessian(&exp.problem, &coarse.params, cfg.hessian_mc, cfg.hessian_step, stage_seed(s, Stage::Hessian))?;
                    design_weight(&h.matrix)
                }
            };
            let lambda = regularizer(&hessian, cfg.lambda_mode)?;
            let h_norm = hessian.clone().symmetric_eigenvalues().abs().max();
            let b_phi = model.horizon() as f64 * cfg.lipschitz.powi(2) * h_norm / (lambda * lambda);
            let objective = DesignObjective::new(hessian, lambda)?;
            let doed_cfg = DoedConfig {
                budget: exp.exploration_budget,
                n_samples: cfg.shooting_samples,
                warm_start: cfg.warm_start,
            };
            let design = doed_plus(
                &objective,
                n,
                &exp.initial_policy,
                &coarse.params,
                &exp.truth,
                model,
                b_phi,
                &doed_cfg,
                stage_seed(s, Stage::Design),
            )?;
            Ok(design
                .objective_trace
                .iter()
                .enumerate()
                .map(|(epoch, &phi)| TraceRow { seed: s, epoch, phi })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_initial = runs.iter().map(|r| r[0].phi).sum::<f64>() / runs.len() as f64;
    let mean_final = runs.iter().map(|r| r.last().expect("non-empty trace").phi).sum::<f64>() / runs.len() as f64;
    Ok(DoedTrace {
        rows: runs.into_iter().flatten().collect(),
        mean_initial,
        mean_final,
        passed: mean_final <= mean_initial,
    })
}
