//! Scalar linear systems, linear in their parameters.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alcoi::Experiment;
use crate::control::{lqr_gain, ControlProblem, SynthesisMode};
use crate::dynamics::{FnDynamics, Policy, PolicyClass, SystemModel};
use crate::rng::rng_from_seed;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    /// Drift coefficient `a` in `x' = a x + b u + w`.
    pub a: f64,
    /// Input gain `b`; unknown only in the two-parameter variant.
    pub b: f64,
    pub noise_std: f64,
    pub horizon: usize,
    pub budget: f64,
    pub init_perturbation: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            a: 0.5,
            b: 1.0,
            noise_std: 1.0,
            horizon: 10,
            budget: 10.0,
            init_perturbation: 0.2,
        }
    }
}

/// `x' = phi x + b u`, one unknown parameter.
pub fn scalar_linear_model(cfg: &LinearConfig) -> Result<SystemModel> {
    let b = cfg.b;
    let dynamics = FnDynamics::new(1, 1, 1, move |x, u, p| dvector![p[0] * x[0] + b * u[0]])
        .with_jacobian(|x, _u, _p| DMatrix::from_element(1, 1, x[0]));
    SystemModel::new("scalar-linear", dynamics, cfg.noise_std, cfg.horizon)
}

/// `x' = a x + b u`, both coefficients unknown.
pub fn linear2_model(cfg: &LinearConfig) -> Result<SystemModel> {
    let dynamics = FnDynamics::new(1, 1, 2, |x, u, p| dvector![p[0] * x[0] + p[1] * u[0]])
        .with_jacobian(|x, u, _p| DMatrix::from_row_slice(1, 2, &[x[0], u[0]]));
    SystemModel::new("linear2", dynamics, cfg.noise_std, cfg.horizon)
}

fn regulation_problem(model: SystemModel, gains: impl Fn(&DVector<f64>) -> (f64, f64) + Send + Sync + 'static) -> Result<ControlProblem> {
    let class = PolicyClass::new(1, 1, |theta, _t, x| dvector![-theta[0] * x[0]]);
    let synth = SynthesisMode::Analytic(Arc::new(move |phi: &DVector<f64>| {
        let (a, b) = gains(phi);
        let k = lqr_gain(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, b),
            &DMatrix::identity(1, 1),
            &DMatrix::identity(1, 1),
        )?;
        Ok(dvector![k[(0, 0)]])
    }));
    ControlProblem::new(model, class, |_, x, u| x[0] * x[0] + u[0] * u[0], |x| x[0] * x[0], synth)
}

fn experiment(problem: ControlProblem, truth: DVector<f64>, cfg: &LinearConfig, seed: u64) -> Experiment {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    let initial_guess = truth.map(|v| v + cfg.init_perturbation * { let z: f64 = StandardNormal.sample(&mut rng); z });
    Experiment {
        problem,
        truth,
        initial_guess,
        initial_policy: Policy::random_energy(cfg.budget),
        exploration_budget: cfg.budget,
    }
}

/// Regulation of the scalar system with LQR synthesis; only `a` is unknown.
pub fn scalar_linear_experiment(cfg: &LinearConfig, seed: u64) -> Result<Experiment> {
    let b = cfg.b;
    let problem = regulation_problem(scalar_linear_model(cfg)?, move |phi| (phi[0], b))?;
    Ok(experiment(problem, dvector![cfg.a], cfg, seed))
}

/// Regulation with both `a` and `b` unknown.
pub fn linear2_experiment(cfg: &LinearConfig, seed: u64) -> Result<Experiment> {
    let problem = regulation_problem(linear2_model(cfg)?, |phi| (phi[0], phi[1]))?;
    Ok(experiment(problem, dvector![cfg.a, cfg.b], cfg, seed))
}

/// `E[sum_t x_t^2]` under isotropic random inputs of total energy `budget`
/// for `x' = a x + u + w`, `x_1 = 0`.
pub fn random_energy_covariance(a: f64, noise_std: f64, horizon: usize, budget: f64) -> f64 {
    let per_step = budget / horizon as f64 + noise_std * noise_std;
    let mut second_moment = 0.0;
    let mut total = 0.0;
    for _ in 0..horizon {
        total += second_moment;
        second_moment = a * a * second_moment + per_step;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::mc_covariance;

    #[test]
    fn closed_form_covariance_matches_monte_carlo() {
        let cfg = LinearConfig::default();
        let model = scalar_linear_model(&cfg).unwrap();
        let n = 20_000;
        let mc = mc_covariance(&Policy::random_energy(cfg.budget), &model, &dvector![cfg.a], n, 3).unwrap();
        let exact = random_energy_covariance(cfg.a, cfg.noise_std, cfg.horizon, cfg.budget);
        assert!((mc.matrix()[(0, 0)] - exact).abs() < 0.02 * exact, "{} vs {exact}", mc.matrix()[(0, 0)]);
    }

    #[test]
    fn synthesis_is_scalar_riccati_gain() {
        let exp = scalar_linear_experiment(&LinearConfig { a: 1.0, ..LinearConfig::default() }, 0).unwrap();
        let SynthesisMode::Analytic(f) = &exp.problem.synthesis else { unreachable!() };
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((f(&dvector![1.0]).unwrap()[0] - golden / (1.0 + golden)).abs() < 1e-12);
    }
}
