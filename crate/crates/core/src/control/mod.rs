//! Cost evaluation, certainty-equivalent synthesis, excess cost and the
//! model-task Hessian.

mod hessian;
mod lqr;
mod synthesis;

pub use hessian::{model_task_hessian, ModelTaskHessian};
pub use lqr::{lqr_gain, solve_dare};
pub use synthesis::{excess_cost, synthesize_ce, OptimizerOptions, Synthesis};

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dynamics::{episode_seed, simulate_episode, Policy, PolicyClass, SystemModel};
use crate::{Error, Result};

pub type StageCost = Arc<dyn Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type TerminalCost = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type AnalyticSynthesis = Arc<dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync>;

/// How `theta*(params)` is obtained.
#[derive(Clone)]
pub enum SynthesisMode {
    /// Multi-start quasi-Newton descent on the Monte-Carlo cost.
    Optimizer(OptimizerOptions),
    /// Closed-form controller parameters as a function of the model estimate.
    Analytic(AnalyticSynthesis),
}

impl fmt::Debug for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SynthesisMode::Optimizer(o) => f.debug_tuple("Optimizer").field(o).finish(),
            SynthesisMode::Analytic(_) => f.write_str("Analytic"),
        }
    }
}

/// An episodic control task: dynamics, costs and a parametric policy class.
#[derive(Clone)]
pub struct ControlProblem {
    pub model: SystemModel,
    pub policy_class: PolicyClass,
    pub synthesis: SynthesisMode,
    stage_cost: StageCost,
    terminal_cost: TerminalCost,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("model", &self.model)
            .field("policy_class", &self.policy_class)
            .field("synthesis", &self.synthesis)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    pub fn new(
        model: SystemModel,
        policy_class: PolicyClass,
        stage_cost: impl Fn(usize, &DVector<f64>, &DVector<f64>) -> f64 + Send + Sync + 'static,
        terminal_cost: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        synthesis: SynthesisMode,
    ) -> Result<Self> {
        if policy_class.input_dim() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "policy class outputs {} inputs, model takes {}",
                policy_class.input_dim(),
                model.input_dim()
            )));
        }
        Ok(Self {
            model,
            policy_class,
            synthesis,
            stage_cost: Arc::new(stage_cost),
            terminal_cost: Arc::new(terminal_cost),
        })
    }

    pub fn stage_cost(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (self.stage_cost)(t, x, u)
    }

    pub fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        (self.terminal_cost)(x)
    }

    pub fn policy(&self, theta: DVector<f64>) -> Policy {
        Policy::feedback(self.policy_class.clone(), theta)
    }

    /// Realized cost of one episode of `policy` under `params`.
    pub fn episode_cost(&self, policy: &Policy, params: &DVector<f64>, seed: u64) -> Result<f64> {
        let mut total = 0.0;
        let last = simulate_episode(&self.model, policy, params, seed, |t, x, u| {
            total += self.stage_cost(t, x, u);
        })?;
        Ok(total + self.terminal_cost(&last))
    }
}

/// Per-episode realized costs of `pi^theta` under `params`; episode `k` uses
/// sub-seed `(seed, k)`, so equal seeds give common random numbers.
pub fn cost_samples(
    problem: &ControlProblem,
    theta: &DVector<f64>,
    params: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    if theta.len() != problem.policy_class.theta_dim() {
        return Err(Error::Dimension(format!(
            "theta has length {}, policy class expects {}",
            theta.len(),
            problem.policy_class.theta_dim()
        )));
    }
    let policy = problem.policy(theta.clone());
    (0..n_mc)
        .into_par_iter()
        .map(|k| problem.episode_cost(&policy, params, episode_seed(seed, k)))
        .collect()
}

/// Monte-Carlo estimate of `J(pi^theta, params)`.
pub fn evaluate_cost(
    problem: &ControlProblem,
    theta: &DVector<f64>,
    params: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let samples = cost_samples(problem, theta, params, n_mc, seed)?;
    Ok(samples.iter().sum::<f64>() / n_mc as f64)
}
