//! Planar system with four Gaussian-kernel bumps at unknown locations.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alcoi::Experiment;
use crate::control::{lqr_gain, ControlProblem, SynthesisMode};
use crate::dynamics::{Dynamics, Policy, PolicyClass, SystemModel};
use crate::rng::rng_from_seed;
use crate::Result;

/// `psi(z) = 5 z / |z| exp(-|z|^2)`, zero at the origin.
pub fn bump_psi(z: [f64; 2]) -> [f64; 2] {
    let r2 = z[0] * z[0] + z[1] * z[1];
    if r2 == 0.0 {
        return [0.0, 0.0];
    }
    let s = 5.0 * (-r2).exp() / r2.sqrt();
    [s * z[0], s * z[1]]
}

/// Jacobian of [`bump_psi`], row-major; zero at the origin.
pub fn bump_psi_jacobian(z: [f64; 2]) -> [[f64; 2]; 2] {
    let r2 = z[0] * z[0] + z[1] * z[1];
    if r2 == 0.0 {
        return [[0.0; 2]; 2];
    }
    let r = r2.sqrt();
    let e = 5.0 * (-r2).exp();
    let diag = e / r;
    let outer = -e * (1.0 / (r2 * r) + 2.0 / r);
    [
        [diag + outer * z[0] * z[0], outer * z[0] * z[1]],
        [outer * z[1] * z[0], diag + outer * z[1] * z[1]],
    ]
}

fn sub(a: &DVector<f64>, c: [f64; 2]) -> [f64; 2] {
    [a[0] - c[0], a[1] - c[1]]
}

/// `x' = x + u + sum_i psi(x - c_i)` where each center is either a parameter
/// or fixed.
#[derive(Clone, Debug)]
pub struct BumpDynamics {
    /// For each bump: `Some(k)` reads its center from `params[k..k+2]`,
    /// `None` uses the stored fixed center. An offset bump moves along `x` only.
    layout: Vec<CenterSource>,
}

#[derive(Clone, Copy, Debug)]
enum CenterSource {
    Free(usize),
    OffsetX { base: [f64; 2], index: usize },
    Fixed([f64; 2]),
}

impl BumpDynamics {
    /// All four centers unknown.
    pub fn full() -> Self {
        Self {
            layout: (0..4).map(|i| CenterSource::Free(2 * i)).collect(),
        }
    }

    /// First center is `(base + phi, 0)`; the others are fixed.
    pub fn offset(centers: [[f64; 2]; 4]) -> Self {
        let mut layout = vec![CenterSource::OffsetX { base: centers[0], index: 0 }];
        layout.extend(centers[1..].iter().map(|c| CenterSource::Fixed(*c)));
        Self { layout }
    }

    fn center(&self, source: CenterSource, params: &DVector<f64>) -> [f64; 2] {
        match source {
            CenterSource::Free(k) => [params[k], params[k + 1]],
            CenterSource::OffsetX { base, index } => [base[0] + params[index], base[1]],
            CenterSource::Fixed(c) => c,
        }
    }

    fn n_params(&self) -> usize {
        self.layout
            .iter()
            .map(|s| match s {
                CenterSource::Free(_) => 2,
                CenterSource::OffsetX { .. } => 1,
                CenterSource::Fixed(_) => 0,
            })
            .sum()
    }
}

impl Dynamics for BumpDynamics {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        self.n_params()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> DVector<f64> {
        let mut next = x + u;
        for s in &self.layout {
            let p = bump_psi(sub(x, self.center(*s, params)));
            next[0] += p[0];
            next[1] += p[1];
        }
        next
    }

    fn param_jacobian(&self, x: &DVector<f64>, _u: &DVector<f64>, params: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut jac = DMatrix::zeros(2, self.n_params());
        for s in &self.layout {
            let j = bump_psi_jacobian(sub(x, self.center(*s, params)));
            match *s {
                CenterSource::Free(k) => {
                    for r in 0..2 {
                        jac[(r, k)] = -j[r][0];
                        jac[(r, k + 1)] = -j[r][1];
                    }
                }
                CenterSource::OffsetX { index, .. } => {
                    jac[(0, index)] = -j[0][0];
                    jac[(1, index)] = -j[1][0];
                }
                CenterSource::Fixed(_) => {}
            }
        }
        Some(jac)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BumpConfig {
    pub centers: [[f64; 2]; 4],
    pub target: [f64; 2],
    pub horizon: usize,
    pub noise_std: f64,
    /// Exploration energy budget; defaults to the horizon.
    pub budget: Option<f64>,
    /// Standard deviation of the Gaussian offset of the least-squares initial guess.
    pub init_perturbation: f64,
}

impl Default for BumpConfig {
    fn default() -> Self {
        Self {
            centers: [[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0], [0.0, -5.0]],
            target: [5.5, 0.0],
            horizon: 10,
            noise_std: 1.0,
            budget: None,
            init_perturbation: 0.5,
        }
    }
}

impl BumpConfig {
    pub fn budget(&self) -> f64 {
        self.budget.unwrap_or(self.horizon as f64)
    }

    pub fn truth(&self) -> DVector<f64> {
        DVector::from_iterator(8, self.centers.iter().flatten().copied())
    }

    pub fn model(&self) -> Result<SystemModel> {
        SystemModel::new("illustrative2d", BumpDynamics::full(), self.noise_std, self.horizon)
    }

    pub fn offset_model(&self) -> Result<SystemModel> {
        SystemModel::new("bump-offset", BumpDynamics::offset(self.centers), self.noise_std, self.horizon)
    }
}

/// LQR gain of the bump-cancelled linearization `x' = x + u` with `Q = I`, `R = I`,
/// returned as the feedback matrix `K` of `u = K (x - target)`.
pub fn bump_lqr_feedback() -> Result<DMatrix<f64>> {
    let eye = DMatrix::<f64>::identity(2, 2);
    Ok(-lqr_gain(&eye, &eye, &eye, &eye)?)
}

/// `theta = (K row-major, c_1, ..., c_4)`; `u = K (x - target) - sum_i psi(x - c_i)`.
pub fn bump_policy_class(target: [f64; 2]) -> PolicyClass {
    PolicyClass::new(12, 2, move |theta, _t, x| bump_feedback(theta, target, x))
}

pub fn bump_feedback(theta: &DVector<f64>, target: [f64; 2], x: &DVector<f64>) -> DVector<f64> {
    let e = [x[0] - target[0], x[1] - target[1]];
    let mut u = DVector::from_vec(vec![theta[0] * e[0] + theta[1] * e[1], theta[2] * e[0] + theta[3] * e[1]]);
    for i in 0..4 {
        let p = bump_psi([x[0] - theta[4 + 2 * i], x[1] - theta[5 + 2 * i]]);
        u[0] -= p[0];
        u[1] -= p[1];
    }
    u
}

fn tracking_costs(target: [f64; 2]) -> (impl Fn(usize, &DVector<f64>, &DVector<f64>) -> f64, impl Fn(&DVector<f64>) -> f64) {
    let dist = move |x: &DVector<f64>| (x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2);
    (move |_t: usize, x: &DVector<f64>, _u: &DVector<f64>| dist(x), dist)
}

/// Tracking task on the full eight-parameter system with the
/// feedback-linearization synthesis `theta(phi) = (K, phi)`.
pub fn bump_problem(cfg: &BumpConfig) -> Result<ControlProblem> {
    let gain = bump_lqr_feedback()?;
    let k: Vec<f64> = vec![gain[(0, 0)], gain[(0, 1)], gain[(1, 0)], gain[(1, 1)]];
    let synth = SynthesisMode::Analytic(Arc::new(move |phi: &DVector<f64>| {
        let mut theta = Vec::with_capacity(12);
        theta.extend_from_slice(&k);
        theta.extend(phi.iter().copied());
        Ok(DVector::from_vec(theta))
    }));
    let (stage, terminal) = tracking_costs(cfg.target);
    ControlProblem::new(cfg.model()?, bump_policy_class(cfg.target), stage, terminal, synth)
}

/// Tracking task on the one-parameter variant: only the first center's
/// horizontal offset is unknown.
pub fn bump_offset_problem(cfg: &BumpConfig) -> Result<ControlProblem> {
    let gain = bump_lqr_feedback()?;
    let k: Vec<f64> = vec![gain[(0, 0)], gain[(0, 1)], gain[(1, 0)], gain[(1, 1)]];
    let centers = cfg.centers;
    let synth = SynthesisMode::Analytic(Arc::new(move |phi: &DVector<f64>| {
        let mut theta = Vec::with_capacity(12);
        theta.extend_from_slice(&k);
        theta.extend_from_slice(&[centers[0][0] + phi[0], centers[0][1]]);
        theta.extend(centers[1..].iter().flatten().copied());
        Ok(DVector::from_vec(theta))
    }));
    let (stage, terminal) = tracking_costs(cfg.target);
    ControlProblem::new(cfg.offset_model()?, bump_policy_class(cfg.target), stage, terminal, synth)
}

fn perturbed(truth: &DVector<f64>, scale: f64, seed: u64) -> DVector<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng_from_seed(seed);
    truth.map(|v| v + scale * { let z: f64 = StandardNormal.sample(&mut rng); z })
}

pub fn bump_experiment(cfg: &BumpConfig, seed: u64) -> Result<Experiment> {
    let truth = cfg.truth();
    Ok(Experiment {
        problem: bump_problem(cfg)?,
        initial_guess: perturbed(&truth, cfg.init_perturbation, seed),
        truth,
        initial_policy: Policy::random_energy(cfg.budget()),
        exploration_budget: cfg.budget(),
    })
}

pub fn bump_offset_experiment(cfg: &BumpConfig, seed: u64) -> Result<Experiment> {
    let truth = DVector::zeros(1);
    Ok(Experiment {
        problem: bump_offset_problem(cfg)?,
        initial_guess: perturbed(&truth, cfg.init_perturbation, seed),
        truth,
        initial_policy: Policy::random_energy(cfg.budget()),
        exploration_budget: cfg.budget(),
    })
}
