//! One-step scalar task with closed-form cost: `x2 = phi * u + w`, `u = theta`,
//! terminal cost `(x2 - 1)^2`. Certainty equivalence gives `theta = 1 / phi`,
//! so `J(pi*(phi), truth) = (truth / phi - 1)^2 + sigma^2` and the model-task
//! Hessian is `2 / truth^2`.

use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};

use crate::control::{ControlProblem, SynthesisMode};
use crate::dynamics::{FnDynamics, PolicyClass, SystemModel};
use crate::{Error, Result};

pub fn one_step_problem(noise_std: f64) -> Result<ControlProblem> {
    let dynamics = FnDynamics::new(1, 1, 1, |_x, u, p| dvector![p[0] * u[0]])
        .with_jacobian(|_x, u, _p| DMatrix::from_element(1, 1, u[0]));
    let model = SystemModel::new("one-step", dynamics, noise_std, 1)?;
    let class = PolicyClass::new(1, 1, |theta, _t, _x| dvector![theta[0]]);
    let synth = SynthesisMode::Analytic(Arc::new(|p: &DVector<f64>| {
        if p[0] == 0.0 {
            Err(Error::Singular("one-step synthesis at zero gain"))
        } else {
            Ok(dvector![1.0 / p[0]])
        }
    }));
    ControlProblem::new(model, class, |_, _, _| 0.0, |x| (x[0] - 1.0).powi(2), synth)
}

/// Closed-form excess cost `(truth / estimate - 1)^2`.
pub fn one_step_excess_cost(estimate: f64, truth: f64) -> f64 {
    (truth / estimate - 1.0).powi(2)
}
