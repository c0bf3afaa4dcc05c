//! End-to-end active identification for control, plus the random and
//! A-optimal exploration baselines.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::control::{excess_cost, model_task_hessian, synthesize_ce, ControlProblem};
use crate::design::{build_mixture, doed_plus, DesignObjective, DoedConfig};
use crate::dynamics::{rollout_batch, Policy};
use crate::estimation::{least_squares_best_effort, EpisodeDataset, LsqOptions};
use crate::rng::derive_seed;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BudgetSplit {
    /// Initial policy for `N/2`, design loop with budget `N/2`, refit on all data.
    HalfHalf,
    /// Initial policy for `N/4`, design loop with budget `N/4`, mixture for `N/2`,
    /// refit on the mixture episodes only.
    QuarterQuarterHalf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    Fixed(f64),
    /// `lambda_min(H) * lambda_min_star / (16 ||H|| d_phi)`.
    Formula { lambda_min_star: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "control-oriented")]
    ControlOriented,
    #[serde(rename = "A-optimal")]
    AOptimal,
}

/// Stage bypasses for consistency checks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Diagnostics {
    /// Use this vector instead of the coarse least-squares estimate.
    pub coarse_override: Option<Vec<f64>>,
    /// Play the initial policy wherever designed policies would be played.
    pub replace_design_with_initial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlcoiConfig {
    pub n_episodes: usize,
    pub delta: f64,
    pub budget_split: BudgetSplit,
    pub lambda_mode: LambdaMode,
    pub alpha: f64,
    /// Lipschitz constant of the dynamics in the radius and smoothness bound.
    pub lipschitz: f64,
    pub objective: ObjectiveKind,
    pub shooting_samples: usize,
    pub warm_start: bool,
    pub hessian_mc: usize,
    pub hessian_step: f64,
    pub eval_mc: usize,
    pub lsq: LsqOptions,
    pub diagnostics: Diagnostics,
}

impl Default for AlcoiConfig {
    fn default() -> Self {
        Self {
            n_episodes: 64,
            delta: 0.1,
            budget_split: BudgetSplit::HalfHalf,
            lambda_mode: LambdaMode::Fixed(1e-3),
            alpha: 0.5,
            lipschitz: 1.0,
            objective: ObjectiveKind::ControlOriented,
            shooting_samples: 100,
            warm_start: true,
            hessian_mc: 200,
            hessian_step: 1e-2,
            eval_mc: 500,
            lsq: LsqOptions::default(),
            diagnostics: Diagnostics::default(),
        }
    }
}

impl AlcoiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_episodes < 8 {
            return Err(Error::InvalidArgument(format!("need at least 8 episodes, got {}", self.n_episodes)));
        }
        if !(self.delta > 0.0 && self.delta <= 0.25) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1/4], got {}", self.delta)));
        }
        if !(self.alpha > 0.25 && self.alpha <= 0.5) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (1/4, 1/2], got {}", self.alpha)));
        }
        if !(self.lipschitz > 0.0) {
            return Err(Error::InvalidArgument("the Lipschitz constant must be positive".into()));
        }
        if self.eval_mc == 0 || self.hessian_mc == 0 || self.shooting_samples == 0 {
            return Err(Error::InvalidArgument("Monte-Carlo and shooting sample counts must be positive".into()));
        }
        Ok(())
    }
}

/// Episodes allotted to each stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StagePlan {
    pub initial: usize,
    pub design: usize,
    pub mixture: usize,
}

impl StagePlan {
    pub fn new(n_episodes: usize, split: BudgetSplit) -> Self {
        match split {
            BudgetSplit::HalfHalf => Self {
                initial: n_episodes / 2,
                design: n_episodes / 2,
                mixture: 0,
            },
            BudgetSplit::QuarterQuarterHalf => Self {
                initial: n_episodes / 4,
                design: n_episodes / 4,
                mixture: n_episodes / 2,
            },
        }
    }
}

/// RNG stream identifiers of the pipeline stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Initial = 1,
    CoarseFit = 2,
    Hessian = 3,
    Design = 4,
    Mixture = 5,
    Refit = 6,
    Evaluation = 7,
}

pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    derive_seed(seed, stage as u64)
}

/// Constants of the confidence radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadiusConstants {
    pub noise_std: f64,
    pub horizon: usize,
    pub state_dim: usize,
    pub param_dim: usize,
    pub lipschitz: f64,
    pub delta: f64,
    pub alpha: f64,
}

/// `R / N^alpha` with
/// `R = (2048 sigma^2 / T (d_x + d_phi log(L T N) + log(1/delta)))^alpha`.
pub fn confidence_radius(c: &RadiusConstants, n_episodes: usize) -> Result<f64> {
    let n = n_episodes as f64;
    let ltn = c.lipschitz * c.horizon as f64 * n;
    if !(ltn > 1.0) || !(c.delta > 0.0 && c.delta <= 1.0) || !(c.alpha > 0.0) || c.horizon == 0 {
        return Err(Error::InvalidArgument("confidence radius constants out of range".into()));
    }
    let inner = 2048.0 * c.noise_std.powi(2) / c.horizon as f64
        * (c.state_dim as f64 + c.param_dim as f64 * ltn.ln() + (1.0 / c.delta).ln());
    Ok(inner.powf(c.alpha) / n.powf(c.alpha))
}

/// Regularizer of the design objective.
pub fn regularizer(hessian: &DMatrix<f64>, mode: LambdaMode) -> Result<f64> {
    match mode {
        LambdaMode::Fixed(v) if v > 0.0 => Ok(v),
        LambdaMode::Fixed(v) => Err(Error::InvalidArgument(format!("fixed regularizer must be positive, got {v}"))),
        LambdaMode::Formula { lambda_min_star } => {
            if !(lambda_min_star > 0.0) {
                return Err(Error::InvalidArgument("lambda_min_star must be positive".into()));
            }
            let eig = hessian.clone().symmetric_eigenvalues();
            let lambda_min = eig.min();
            let norm = eig.abs().max();
            if !(lambda_min >= 1e-12 * norm) || norm == 0.0 {
                return Err(Error::DegenerateHessian { lambda_min, norm });
            }
            Ok(lambda_min * lambda_min_star / (16.0 * norm * hessian.nrows() as f64))
        }
    }
}

pub fn project_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Design weight from an estimated Hessian: its PSD part, or the identity when
/// the projection leaves no positive curvature.
pub fn design_weight(h: &DMatrix<f64>) -> DMatrix<f64> {
    let p = project_psd(h);
    if !(p.clone().symmetric_eigenvalues().max() > 0.0) {
        log::warn!("estimated Hessian has no positive curvature, using the identity weight");
        return DMatrix::identity(h.nrows(), h.ncols());
    }
    p
}

/// A benchmark instance: the task, the true parameters and the learner's prior knowledge.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub problem: ControlProblem,
    pub truth: DVector<f64>,
    /// Starting point of every least-squares fit that has no better warm start.
    pub initial_guess: DVector<f64>,
    pub initial_policy: Policy,
    pub exploration_budget: f64,
}

/// What had been computed when a stage failed.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PartialReport {
    pub completed_stages: Vec<String>,
    pub coarse_estimate: Option<Vec<f64>>,
    pub episodes_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlcoiReport {
    pub method: String,
    pub objective_kind: Option<ObjectiveKind>,
    pub n_episodes: usize,
    pub coarse_estimate: Option<Vec<f64>>,
    pub refined_estimate: Vec<f64>,
    pub confidence_radius: Option<f64>,
    pub hessian: Option<Vec<Vec<f64>>>,
    pub lambda: Option<f64>,
    pub b_phi: Option<f64>,
    pub design: Option<serde_json::Value>,
    pub theta: Vec<f64>,
    pub excess_cost: f64,
    pub stage_episodes: BTreeMap<String, usize>,
    pub fit_converged: bool,
    pub wall_ms: BTreeMap<String, f64>,
}

impl AlcoiReport {
    pub fn episodes_used(&self) -> usize {
        self.stage_episodes.values().sum()
    }

    /// The report with wall-clock timings removed.
    pub fn without_timings(&self) -> Self {
        Self {
            wall_ms: BTreeMap::new(),
            ..self.clone()
        }
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

struct Tracker {
    partial: PartialReport,
    timings: BTreeMap<String, f64>,
    clock: Instant,
}

impl Tracker {
    fn new() -> Self {
        Self {
            partial: PartialReport::default(),
            timings: BTreeMap::new(),
            clock: Instant::now(),
        }
    }

    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| Error::StageFailed {
            stage,
            source: Box::new(e),
            partial: Box::new(self.partial.clone()),
        })?;
        self.timings.insert(stage.to_string(), start.elapsed().as_secs_f64() * 1e3);
        self.partial.completed_stages.push(stage.to_string());
        Ok(out)
    }

    fn finish(mut self) -> BTreeMap<String, f64> {
        self.timings.insert("total".into(), self.clock.elapsed().as_secs_f64() * 1e3);
        self.timings
    }
}

/// Least squares from each of `inits`, keeping the lowest residual.
fn fit(
    data: &EpisodeDataset,
    exp: &Experiment,
    inits: &[&DVector<f64>],
    lsq: &LsqOptions,
    seed: u64,
) -> Result<(DVector<f64>, bool)> {
    let mut best: Option<(crate::estimation::LsqFit, bool)> = None;
    for (i, init) in inits.iter().enumerate() {
        let opts = LsqOptions {
            seed: if i == 0 { seed } else { derive_seed(seed, i as u64) },
            ..lsq.clone()
        };
        let candidate = least_squares_best_effort(data, &exp.problem.model, init, &opts)?;
        if best.as_ref().is_none_or(|b| candidate.0.residual < b.0.residual) {
            best = Some(candidate);
        }
    }
    let (fit, converged) = best.ok_or_else(|| Error::InvalidArgument("no initial point for least squares".into()))?;
    if !converged {
        log::warn!("least squares stopped before reaching the gradient tolerance");
    }
    Ok((fit.params, converged))
}

/// Runs the staged identification pipeline and returns the certainty-equivalent
/// controller of the refined estimate together with its excess cost.
pub fn run_alcoi(exp: &Experiment, cfg: &AlcoiConfig, seed: u64) -> Result<AlcoiReport> {
    cfg.validate()?;
    let model = &exp.problem.model;
    let plan = StagePlan::new(cfg.n_episodes, cfg.budget_split);
    let mut track = Tracker::new();

    let initial_eps = track.run("initial", || {
        rollout_batch(model, &exp.initial_policy, &exp.truth, plan.initial, stage_seed(seed, Stage::Initial))
    })?;
    let initial_data = EpisodeDataset::from_episodes(model, initial_eps)?;
    track.partial.episodes_used += initial_data.len();

    let (coarse, _) = track.run("coarse-fit", || match &cfg.diagnostics.coarse_override {
        Some(v) => Ok((DVector::from_column_slice(v), true)),
        None => fit(&initial_data, exp, &[&exp.initial_guess], &cfg.lsq, stage_seed(seed, Stage::CoarseFit)),
    })?;
    track.partial.coarse_estimate = Some(coarse.iter().copied().collect());

    let radius = confidence_radius(
        &RadiusConstants {
            noise_std: model.noise_std(),
            horizon: model.horizon(),
            state_dim: model.state_dim(),
            param_dim: model.param_dim(),
            lipschitz: cfg.lipschitz,
            delta: cfg.delta,
            alpha: cfg.alpha,
        },
        cfg.n_episodes,
    )?;

    let hessian = track.run("hessian", || match cfg.objective {
        ObjectiveKind::AOptimal => Ok(DMatrix::identity(model.param_dim(), model.param_dim())),
        ObjectiveKind::ControlOriented => {
            let h = model_task_hessian(&exp.problem, &coarse, cfg.hessian_mc, cfg.hessian_step, stage_seed(seed, Stage::Hessian))?;
            Ok(design_weight(&h.matrix))
        }
    })?;
    let lambda = regularizer(&hessian, cfg.lambda_mode)?;
    let h_norm = hessian.clone().symmetric_eigenvalues().abs().max();
    let b_phi = model.horizon() as f64 * cfg.lipschitz.powi(2) * h_norm / (lambda * lambda);
    let objective = DesignObjective::new(hessian.clone(), lambda)?;

    let mut stage_episodes = BTreeMap::new();
    stage_episodes.insert("initial".to_string(), initial_data.len());

    let (refit_data, design_json) = if cfg.diagnostics.replace_design_with_initial {
        let n_extra = plan.design + plan.mixture;
        let eps = track.run("design", || {
            rollout_batch(model, &exp.initial_policy, &exp.truth, n_extra, stage_seed(seed, Stage::Design))
        })?;
        stage_episodes.insert("design".to_string(), eps.len());
        let data = EpisodeDataset::from_episodes(model, eps)?;
        let pooled = match cfg.budget_split {
            BudgetSplit::HalfHalf => {
                let mut all = initial_data.clone();
                all.merge(&data)?;
                all
            }
            BudgetSplit::QuarterQuarterHalf => data,
        };
        (pooled, None)
    } else {
        let doed_cfg = DoedConfig {
            budget: exp.exploration_budget,
            n_samples: cfg.shooting_samples,
            warm_start: cfg.warm_start,
        };
        let design = track.run("design", || {
            doed_plus(
                &objective,
                plan.design,
                &exp.initial_policy,
                &coarse,
                &exp.truth,
                model,
                b_phi,
                &doed_cfg,
                stage_seed(seed, Stage::Design),
            )
        })?;
        track.partial.episodes_used += design.dataset.len();
        stage_episodes.insert("design".to_string(), design.dataset.len());
        // The design schedule can leave part of its budget unused; those
        // episodes go to the mixture policy.
        let unused = plan.design - design.dataset.len();
        let n_mixture = match cfg.budget_split {
            BudgetSplit::HalfHalf => unused,
            BudgetSplit::QuarterQuarterHalf => plan.mixture + unused,
        };
        let mixture_data = if n_mixture > 0 {
            let mixture = build_mixture(&exp.initial_policy, &design.policies)?;
            let eps = track.run("mixture", || {
                rollout_batch(model, &mixture, &exp.truth, n_mixture, stage_seed(seed, Stage::Mixture))
            })?;
            track.partial.episodes_used += eps.len();
            stage_episodes.insert("mixture".to_string(), eps.len());
            EpisodeDataset::from_episodes(model, eps)?
        } else {
            EpisodeDataset::for_model(model)
        };
        let data = match cfg.budget_split {
            BudgetSplit::HalfHalf => {
                let mut all = initial_data.clone();
                all.merge(&design.dataset)?;
                all.merge(&mixture_data)?;
                all
            }
            BudgetSplit::QuarterQuarterHalf => mixture_data,
        };
        (data, Some(design.to_json()))
    };

    let (refined, converged) = track.run("refit", || fit(&refit_data, exp, &[&coarse, &exp.initial_guess], &cfg.lsq, stage_seed(seed, Stage::Refit)))?;
    let (theta, excess) = track.run("evaluate", || {
        let synth = synthesize_ce(&exp.problem, &refined, cfg.eval_mc, stage_seed(seed, Stage::Evaluation))?;
        let e = excess_cost(&exp.problem, &refined, &exp.truth, cfg.eval_mc, stage_seed(seed, Stage::Evaluation))?;
        Ok((synth.theta, e))
    })?;

    Ok(AlcoiReport {
        method: match cfg.objective {
            ObjectiveKind::ControlOriented => "alcoi".into(),
            ObjectiveKind::AOptimal => "a-optimal".into(),
        },
        objective_kind: Some(cfg.objective),
        n_episodes: cfg.n_episodes,
        coarse_estimate: Some(coarse.iter().copied().collect()),
        refined_estimate: refined.iter().copied().collect(),
        confidence_radius: Some(radius),
        hessian: Some(rows(&hessian)),
        lambda: Some(lambda),
        b_phi: Some(b_phi),
        design: design_json,
        theta,
        excess_cost: excess,
        stage_episodes,
        fit_converged: converged,
        wall_ms: track.finish(),
    })
}

/// ALCOI with the design weight replaced by the identity.
pub fn run_baseline_aopt(exp: &Experiment, cfg: &AlcoiConfig, seed: u64) -> Result<AlcoiReport> {
    let cfg = AlcoiConfig {
        objective: ObjectiveKind::AOptimal,
        ..cfg.clone()
    };
    run_alcoi(&exp.clone(), &cfg, seed)
}

/// All `N` episodes under isotropic random inputs of energy equal to the
/// exploration budget, one least-squares fit, certainty-equivalent synthesis.
///
/// Episodes share the initial-stage stream of [`run_alcoi`], so the first
/// half coincides with its initial data whenever its initial policy is the
/// same random policy.
pub fn run_baseline_random(exp: &Experiment, cfg: &AlcoiConfig, seed: u64) -> Result<AlcoiReport> {
    cfg.validate()?;
    let model = &exp.problem.model;
    let mut track = Tracker::new();
    let policy = Policy::random_energy(exp.exploration_budget);
    let eps = track.run("initial", || {
        rollout_batch(model, &policy, &exp.truth, cfg.n_episodes, stage_seed(seed, Stage::Initial))
    })?;
    let data = EpisodeDataset::from_episodes(model, eps)?;
    track.partial.episodes_used = data.len();

    let (refined, converged) = if model.param_dim() == 0 {
        (DVector::zeros(0), true)
    } else {
        track.run("refit", || fit(&data, exp, &[&exp.initial_guess], &cfg.lsq, stage_seed(seed, Stage::CoarseFit)))?
    };
    let (theta, excess) = track.run("evaluate", || {
        let synth = synthesize_ce(&exp.problem, &refined, cfg.eval_mc, stage_seed(seed, Stage::Evaluation))?;
        let e = excess_cost(&exp.problem, &refined, &exp.truth, cfg.eval_mc, stage_seed(seed, Stage::Evaluation))?;
        Ok((synth.theta, e))
    })?;

    let mut stage_episodes = BTreeMap::new();
    stage_episodes.insert("initial".to_string(), data.len());
    Ok(AlcoiReport {
        method: "random".into(),
        objective_kind: None,
        n_episodes: cfg.n_episodes,
        coarse_estimate: None,
        refined_estimate: refined.iter().copied().collect(),
        confidence_radius: None,
        hessian: None,
        lambda: None,
        b_phi: None,
        design: None,
        theta,
        excess_cost: excess,
        stage_episodes,
        fit_converged: converged,
        wall_ms: track.finish(),
    })
}
