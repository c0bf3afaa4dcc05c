//! Cart-pole swing-up with unknown masses, length, gravity and friction.
//!
//! State is `(p, p_dot, theta, theta_dot)` with `theta` measured from upright;
//! parameters are `(M, m, l, g, b_x, b_theta)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alcoi::Experiment;
use crate::control::{lqr_gain, ControlProblem, SynthesisMode};
use crate::dynamics::{Dynamics, Policy, PolicyClass, SystemModel};
use crate::rng::rng_from_seed;
use crate::{Error, Result};

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

/// Solves the 2x2 mass-matrix system for `(p_ddot + b_x p_dot, theta_ddot + b_theta theta_dot)`.
fn generalized_accelerations(state: &[f64; 4], u: f64, phi: &[f64]) -> Result<[f64; 2]> {
    let (mc, mp, l, g) = (phi[0], phi[1], phi[2], phi[3]);
    let (s, c) = state[2].sin_cos();
    let a = [[mc + mp, mp * l * c], [mp * c, mp * l]];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !(det.abs() > 1e-9) {
        return Err(Error::Singular("cart-pole mass matrix"));
    }
    let b = [mp * l * state[3] * state[3] * s + u, mp * g * s];
    Ok([
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ])
}

/// One explicit Euler step of length `dt`, plus additive `noise`.
pub fn cartpole_step(state: [f64; 4], u: f64, phi: &[f64], noise: [f64; 4], dt: f64) -> Result<[f64; 4]> {
    if phi.len() != 6 {
        return Err(Error::Dimension("cart-pole has six parameters".into()));
    }
    let z = generalized_accelerations(&state, u, phi)?;
    let p_acc = z[0] - phi[4] * state[1];
    let th_acc = z[1] - phi[5] * state[3];
    Ok([
        state[0] + dt * state[1] + noise[0],
        state[1] + dt * p_acc + noise[1],
        state[2] + dt * state[3] + noise[2],
        state[3] + dt * th_acc + noise[3],
    ])
}

#[derive(Clone, Copy, Debug)]
pub struct CartpoleDynamics {
    pub dt: f64,
}

fn arr4(x: &DVector<f64>) -> [f64; 4] {
    [x[0], x[1], x[2], x[3]]
}

impl Dynamics for CartpoleDynamics {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        6
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> DVector<f64> {
        match cartpole_step(arr4(x), u[0], params.as_slice(), [0.0; 4], self.dt) {
            Ok(next) => DVector::from_row_slice(&next),
            Err(_) => DVector::from_element(4, f64::NAN),
        }
    }

    fn param_jacobian(&self, x: &DVector<f64>, u: &DVector<f64>, params: &DVector<f64>) -> Option<DMatrix<f64>> {
        let state = arr4(x);
        let (mc, mp, l, g) = (params[0], params[1], params[2], params[3]);
        let (s, c) = state[2].sin_cos();
        let a = DMatrix::from_row_slice(2, 2, &[mc + mp, mp * l * c, mp * c, mp * l]);
        let inv = a.clone().try_inverse()?;
        let z = match generalized_accelerations(&state, u[0], params.as_slice()) {
            Ok(z) => DVector::from_row_slice(&z),
            Err(_) => return Some(DMatrix::from_element(4, 6, f64::NAN)),
        };
        let w2 = state[3] * state[3];
        // (dA/dphi_k, db/dphi_k) for M, m, l, g
        let partials: [([f64; 4], [f64; 2]); 4] = [
            ([1.0, 0.0, 0.0, 0.0], [0.0, 0.0]),
            ([1.0, l * c, c, l], [l * w2 * s, g * s]),
            ([0.0, mp * c, 0.0, mp], [mp * w2 * s, 0.0]),
            ([0.0, 0.0, 0.0, 0.0], [0.0, mp * s]),
        ];
        let mut jac = DMatrix::zeros(4, 6);
        for (k, (da, db)) in partials.iter().enumerate() {
            let da = DMatrix::from_row_slice(2, 2, da);
            let dz = &inv * (DVector::from_row_slice(db) - da * &z);
            jac[(1, k)] = self.dt * dz[0];
            jac[(3, k)] = self.dt * dz[1];
        }
        jac[(1, 4)] = -self.dt * state[1];
        jac[(3, 5)] = -self.dt * state[3];
        Some(jac)
    }
}

/// Euler-discretized linearization about the upright equilibrium, `(A, B)`.
pub fn upright_linearization(phi: &[f64], dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (mc, mp, l, g, bx, bt) = (phi[0], phi[1], phi[2], phi[3], phi[4], phi[5]);
    let ac = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0,
            0.0, -bx, -mp * g / mc, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, (mc + mp) * g / (l * mc), -bt,
        ],
    );
    let bc = DMatrix::from_column_slice(4, 1, &[0.0, 1.0 / mc, 0.0, -1.0 / (l * mc)]);
    (DMatrix::identity(4, 4) + ac * dt, bc * dt)
}

/// LQR gain (`u = -K x`) of the upright linearization with `Q = I`, `R = 1`.
pub fn cartpole_lqr_gain(phi: &[f64], dt: f64) -> Result<DMatrix<f64>> {
    let (a, b) = upright_linearization(phi, dt);
    lqr_gain(&a, &b, &DMatrix::identity(4, 4), &DMatrix::identity(1, 1))
}

/// Energy-shaping swing-up input under the parameter estimate `phi`.
pub fn energy_shaping_input(x: &[f64; 4], phi: &[f64]) -> f64 {
    let (mc, mp, l, g) = (phi[0], phi[1], phi[2], phi[3]);
    let (p, pd, th, thd) = (x[0], x[1], x[2], x[3]);
    let (s, c) = th.sin_cos();
    let energy_error = 0.5 * mp * l * l * thd * thd + mp * g * l * c - mp * g * l;
    let xdd = 5.0 * thd * c * energy_error - 0.01 * p - 0.01 * pd;
    (mc + mp - mp * c) * xdd + mp * g * c * s - mp * l * thd * thd * s
}

/// `theta = (phi_hat (6), K (4))`. LQR when the wrapped pole angle is within
/// `switch_angle` of upright, energy shaping otherwise.
pub fn cartpole_policy_class(switch_angle: f64) -> PolicyClass {
    PolicyClass::new(10, 1, move |theta, _t, x| {
        let wrapped = [x[0], x[1], wrap_angle(x[2]), x[3]];
        let u = if wrapped[2].abs() < switch_angle {
            -(0..4).map(|i| theta[6 + i] * wrapped[i]).sum::<f64>()
        } else {
            energy_shaping_input(&wrapped, &theta.as_slice()[..6])
        };
        DVector::from_element(1, u)
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartpoleConfig {
    pub params: [f64; 6],
    pub dt: f64,
    pub noise_std: f64,
    pub horizon: usize,
    pub initial_state: [f64; 4],
    pub budget: f64,
    pub switch_angle: f64,
    /// Relative standard deviation of the least-squares initial guess around the truth.
    pub init_perturbation: f64,
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        Self {
            params: [1.0, 0.1, 1.0, 10.0, 0.5, 0.5],
            dt: 0.1,
            noise_std: 0.1,
            horizon: 30,
            initial_state: [0.0, 0.0, PI, 0.0],
            budget: 3.0,
            switch_angle: PI / 4.0,
            init_perturbation: 0.1,
        }
    }
}

impl CartpoleConfig {
    pub fn truth(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.params)
    }

    pub fn model(&self) -> Result<SystemModel> {
        SystemModel::new("cartpole", CartpoleDynamics { dt: self.dt }, self.noise_std, self.horizon)?
            .with_initial_state(DVector::from_row_slice(&self.initial_state))
    }
}

pub fn cartpole_problem(cfg: &CartpoleConfig) -> Result<ControlProblem> {
    let dt = cfg.dt;
    let synth = SynthesisMode::Analytic(Arc::new(move |phi: &DVector<f64>| {
        let k = cartpole_lqr_gain(phi.as_slice(), dt)?;
        let mut theta = phi.iter().copied().collect::<Vec<_>>();
        theta.extend(k.iter().copied());
        Ok(DVector::from_vec(theta))
    }));
    let terminal = |x: &DVector<f64>| x[0] * x[0] + x[1] * x[1] + wrap_angle(x[2]).powi(2) + x[3] * x[3];
    ControlProblem::new(cfg.model()?, cartpole_policy_class(cfg.switch_angle), |_, _, _| 0.0, terminal, synth)
}

pub fn cartpole_experiment(cfg: &CartpoleConfig, seed: u64) -> Result<Experiment> {
    use rand_distr::{Distribution, StandardNormal};
    let truth = cfg.truth();
    let mut rng = rng_from_seed(seed);
    let initial_guess = truth.map(|v| v * (1.0 + cfg.init_perturbation * { let z: f64 = StandardNormal.sample(&mut rng); z }));
    Ok(Experiment {
        problem: cartpole_problem(cfg)?,
        truth,
        initial_guess,
        initial_policy: Policy::random_energy(cfg.budget),
        exploration_budget: cfg.budget,
    })
}
