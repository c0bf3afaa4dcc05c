//! Parametric dynamical systems, causal policies and seeded episodic rollouts.
//!
//! A system evolves as `x[t+1] = f(x[t], u[t]; params) + w[t]` with
//! `w[t] ~ N(0, noise_std^2 I)`. Each episode starts from the zero state unless
//! the model carries an initial-state override.

pub(crate) mod policy;

pub use policy::{EpisodeController, Policy, PolicyClass};

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

const NOISE_STREAM: u64 = 0;
const POLICY_STREAM: u64 = 1;

/// Relative central-difference step used when a model has no analytic Jacobian.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-5;

/// A parametric transition map `f(x, u; params)`.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn param_dim(&self) -> usize;

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian of `step` with respect to `params` (`state_dim x param_dim`).
    fn param_jacobian(
        &self,
        _x: &DVector<f64>,
        _u: &DVector<f64>,
        _params: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        None
    }
}

type StepFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;
type JacobianFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// Closure-backed [`Dynamics`], mostly for small hand-written systems.
pub struct FnDynamics {
    state_dim: usize,
    input_dim: usize,
    param_dim: usize,
    step: Box<StepFn>,
    jacobian: Option<Box<JacobianFn>>,
}

impl FnDynamics {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        param_dim: usize,
        step: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            state_dim,
            input_dim,
            param_dim,
            step: Box::new(step),
            jacobian: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jacobian: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Box::new(jacobian));
        self
    }
}

impl Dynamics for FnDynamics {
    fn state_dim(&self) -> usize {
        self.state_dim
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> DVector<f64> {
        (self.step)(x, u, params)
    }
    fn param_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        params: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        self.jacobian.as_ref().map(|j| j(x, u, params))
    }
}

/// A dynamics family together with its noise level, horizon and start state.
#[derive(Clone)]
pub struct SystemModel {
    name: String,
    dynamics: Arc<dyn Dynamics>,
    noise_std: f64,
    horizon: usize,
    initial_state: Option<DVector<f64>>,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("input_dim", &self.input_dim())
            .field("param_dim", &self.param_dim())
            .field("noise_std", &self.noise_std)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SystemModel {
    pub fn new(
        name: impl Into<String>,
        dynamics: impl Dynamics + 'static,
        noise_std: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise_std must be finite and >= 0, got {noise_std}")));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        Ok(Self {
            name: name.into(),
            dynamics: Arc::new(dynamics),
            noise_std,
            horizon,
            initial_state: None,
        })
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Result<Self> {
        if x0.len() != self.state_dim() {
            return Err(Error::Dimension(format!(
                "initial state has length {}, expected {}",
                x0.len(),
                self.state_dim()
            )));
        }
        self.initial_state = Some(x0);
        Ok(self)
    }

    pub fn with_noise_std(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon.max(1);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }
    pub fn input_dim(&self) -> usize {
        self.dynamics.input_dim()
    }
    pub fn param_dim(&self) -> usize {
        self.dynamics.param_dim()
    }
    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> DVector<f64> {
        self.initial_state
            .clone()
            .unwrap_or_else(|| DVector::zeros(self.state_dim()))
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        let x = DVector::zeros(self.state_dim());
        let u = DVector::zeros(self.input_dim());
        let p = DVector::zeros(self.param_dim());
        self.dynamics.param_jacobian(&x, &u, &p).is_some()
    }

    /// Noise-free transition `f(x, u; params)`.
    pub fn predict(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> DVector<f64> {
        self.dynamics.step(x, u, params)
    }

    /// Jacobian of `f` in the parameters: analytic when available, otherwise
    /// central differences with step `1e-5 * (1 + |params_i|)`.
    pub fn param_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        params: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        match self.dynamics.param_jacobian(x, u, params) {
            Some(j) => {
                if j.iter().all(|v| v.is_finite()) {
                    Ok(j)
                } else {
                    Err(Error::NonFiniteDynamics)
                }
            }
            None => self.central_difference(x, u, params, |i| {
                DEFAULT_JACOBIAN_STEP * (1.0 + params[i].abs())
            }),
        }
    }

    /// Central-difference parameter Jacobian with a fixed absolute `step`.
    pub fn finite_diff_param_jacobian(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        params: &DVector<f64>,
        step: f64,
    ) -> Result<DMatrix<f64>> {
        if !(step > 0.0) {
            return Err(Error::InvalidArgument(format!("finite-difference step must be > 0, got {step}")));
        }
        self.central_difference(x, u, params, |_| step)
    }

    fn central_difference(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        params: &DVector<f64>,
        step: impl Fn(usize) -> f64,
    ) -> Result<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(self.state_dim(), self.param_dim());
        let mut probe = params.clone();
        for i in 0..self.param_dim() {
            let h = step(i);
            let (hi, lo) = (params[i] + h, params[i] - h);
            probe[i] = hi;
            let plus = self.dynamics.step(x, u, &probe);
            probe[i] = lo;
            let minus = self.dynamics.step(x, u, &probe);
            probe[i] = params[i];
            let col = (plus - minus) / (hi - lo);
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteDynamics);
            }
            jac.set_column(i, &col);
        }
        Ok(jac)
    }
}

/// One episode: `horizon + 1` states and `horizon` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// `(x[t], u[t], x[t+1])` for every step.
    pub fn transitions(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>, &DVector<f64>)> {
        self.inputs
            .iter()
            .enumerate()
            .map(move |(t, u)| (&self.states[t], u, &self.states[t + 1]))
    }

    /// Total input energy `sum_t ||u[t]||^2`.
    pub fn input_energy(&self) -> f64 {
        self.inputs.iter().map(|u| u.norm_squared()).sum()
    }
}

/// Simulates one episode of `policy` on `model` under `params`, calling
/// `on_step(t, x[t], u[t])` before every transition. Returns the final state.
///
/// Process noise and policy randomness come from separate child streams of
/// `seed`, so two policies simulated with the same seed see the same noise.
pub fn simulate_episode(
    model: &SystemModel,
    policy: &Policy,
    params: &DVector<f64>,
    seed: u64,
    mut on_step: impl FnMut(usize, &DVector<f64>, &DVector<f64>),
) -> Result<DVector<f64>> {
    if params.len() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "parameter vector has length {}, model expects {}",
            params.len(),
            model.param_dim()
        )));
    }
    if let Some(du) = policy.input_dim() {
        if du != model.input_dim() {
            return Err(Error::Dimension(format!(
                "policy produces {du}-dimensional inputs, model expects {}",
                model.input_dim()
            )));
        }
    }

    let mut noise_rng = rng_from_seed(derive_seed(seed, NOISE_STREAM));
    let mut policy_rng = rng_from_seed(derive_seed(seed, POLICY_STREAM));
    let mut controller = policy.start_episode(model, &mut policy_rng);

    let mut x = model.initial_state();
    for t in 0..model.horizon() {
        let u = controller.act(t, &x);
        if u.len() != model.input_dim() {
            return Err(Error::Dimension(format!(
                "policy returned a {}-dimensional input, model expects {}",
                u.len(),
                model.input_dim()
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step: t, episode: None });
        }
        let mut next = model.predict(&x, &u, params);
        for v in next.iter_mut() {
            let w: f64 = StandardNormal.sample(&mut noise_rng);
            *v += model.noise_std() * w;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::RolloutDiverged { step: t, episode: None });
        }
        on_step(t, &x, &u);
        x = next;
    }
    Ok(x)
}

/// Simulates one episode and records it as a [`Trajectory`].
pub fn rollout(model: &SystemModel, policy: &Policy, params: &DVector<f64>, seed: u64) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(model.horizon() + 1);
    let mut inputs = Vec::with_capacity(model.horizon());
    let last = simulate_episode(model, policy, params, seed, |_, x, u| {
        states.push(x.clone());
        inputs.push(u.clone());
    })?;
    states.push(last);
    Ok(Trajectory { states, inputs })
}

/// Sub-seed of episode `k` in a batch started from `seed`.
pub fn episode_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, k as u64)
}

/// Rolls out `n_episodes` independent episodes, episode `k` seeded by
/// [`episode_seed`]`(seed, k)`. Episodes run in parallel; the result is
/// independent of scheduling and of `n_episodes`.
pub fn rollout_batch(
    model: &SystemModel,
    policy: &Policy,
    params: &DVector<f64>,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be at least 1".into()));
    }
    (0..n_episodes)
        .into_par_iter()
        .map(|k| {
            rollout(model, policy, params, episode_seed(seed, k)).map_err(|e| match e {
                Error::RolloutDiverged { step, .. } => Error::RolloutDiverged { step, episode: Some(k) },
                other => other,
            })
        })
        .collect()
}
