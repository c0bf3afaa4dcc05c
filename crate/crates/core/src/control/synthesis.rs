use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{evaluate_cost, ControlProblem, SynthesisMode};
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerOptions {
    pub init: DVector<f64>,
    pub n_starts: usize,
    pub perturbation: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Relative central-difference step for the cost gradient.
    pub fd_step: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            init: DVector::zeros(0),
            n_starts: 3,
            perturbation: 0.5,
            grad_tol: 1e-6,
            max_iter: 200,
            fd_step: 1e-5,
        }
    }
}

/// Result of certainty-equivalent synthesis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Synthesis {
    pub theta: Vec<f64>,
    pub converged: bool,
    /// Estimated cost of the synthesized policy under the model it was designed for.
    pub cost: f64,
}

struct Minimum {
    x: DVector<f64>,
    value: f64,
    converged: bool,
}

pub(crate) fn fd_gradient(
    f: &impl Fn(&DVector<f64>) -> Result<f64>,
    x: &DVector<f64>,
    rel_step: f64,
) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = rel_step * (1.0 + x[i].abs());
        probe[i] = x[i] + h;
        let plus = f(&probe)?;
        probe[i] = x[i] - h;
        let minus = f(&probe)?;
        probe[i] = x[i];
        g[i] = (plus - minus) / (2.0 * h);
    }
    Ok(g)
}

/// BFGS with central-difference gradients and Armijo backtracking.
fn bfgs(f: &impl Fn(&DVector<f64>) -> Result<f64>, x0: DVector<f64>, opts: &OptimizerOptions) -> Result<Minimum> {
    let n = x0.len();
    let mut x = x0;
    let mut fx = f(&x)?;
    let mut g = fd_gradient(f, &x, opts.fd_step)?;
    let mut inv_h = DMatrix::<f64>::identity(n, n);

    for _ in 0..opts.max_iter {
        if g.norm() <= opts.grad_tol {
            return Ok(Minimum { x, value: fx, converged: true });
        }
        let mut dir = -(&inv_h * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            inv_h = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut step = 1.0;
        let (x_next, f_next) = loop {
            let candidate = &x + &dir * step;
            let fc = f(&candidate)?;
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                break (candidate, fc);
            }
            step *= 0.5;
            if step < 1e-14 {
                // no descent possible at this gradient accuracy
                return Ok(Minimum { x, value: fx, converged: g.norm() <= 10.0 * opts.grad_tol });
            }
        };
        let g_next = fd_gradient(f, &x_next, opts.fd_step)?;
        let s = &x_next - &x;
        let y = &g_next - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            inv_h = left * inv_h * right + &s * s.transpose() * rho;
        }
        x = x_next;
        fx = f_next;
        g = g_next;
    }
    let converged = g.norm() <= opts.grad_tol;
    Ok(Minimum { x, value: fx, converged })
}

/// `theta*(estimate)` plus the convergence flag and, for the optimizer, the
/// attained cost.
pub(crate) fn synthesize_theta(
    problem: &ControlProblem,
    estimate: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<(DVector<f64>, bool, Option<f64>)> {
    if estimate.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("synthesis needs a finite parameter estimate".into()));
    }
    match &problem.synthesis {
        SynthesisMode::Analytic(rule) => {
            let theta = rule(estimate)?;
            if theta.len() != problem.policy_class.theta_dim() {
                return Err(Error::Dimension("analytic synthesis returned wrong theta length".into()));
            }
            Ok((theta, true, None))
        }
        SynthesisMode::Optimizer(opts) => {
            if opts.init.len() != problem.policy_class.theta_dim() {
                return Err(Error::Dimension("optimizer init has wrong theta length".into()));
            }
            let objective = |theta: &DVector<f64>| evaluate_cost(problem, theta, estimate, n_mc, seed);
            let mut best: Option<Minimum> = None;
            for k in 0..opts.n_starts.max(1) {
                let start = if k == 0 {
                    opts.init.clone()
                } else {
                    let mut rng = rng_from_seed(derive_seed(seed, 1_000 + k as u64));
                    opts.init.map(|v| v + opts.perturbation * { let z: f64 = StandardNormal.sample(&mut rng); z })
                };
                let found = bfgs(&objective, start, opts)?;
                let better = match &best {
                    None => true,
                    Some(b) => (found.converged && !b.converged) || (found.converged == b.converged && found.value < b.value),
                };
                if better {
                    best = Some(found);
                }
            }
            let best = best.expect("at least one start");
            if !best.converged {
                log::warn!("certainty-equivalent synthesis did not reach the gradient tolerance");
            }
            Ok((best.x, best.converged, Some(best.value)))
        }
    }
}

/// Certainty-equivalent policy parameters for the model `estimate`.
pub fn synthesize_ce(problem: &ControlProblem, estimate: &DVector<f64>, n_mc: usize, seed: u64) -> Result<Synthesis> {
    let (theta, converged, cost) = synthesize_theta(problem, estimate, n_mc, seed)?;
    let cost = match cost {
        Some(c) => c,
        None => evaluate_cost(problem, &theta, estimate, n_mc, seed)?,
    };
    Ok(Synthesis {
        theta: theta.iter().copied().collect(),
        converged,
        cost,
    })
}

/// `J(pi*(estimate), truth) - J(pi*(truth), truth)` with common random
/// numbers across both evaluations. Not clamped at zero.
pub fn excess_cost(
    problem: &ControlProblem,
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    let synth_seed = derive_seed(seed, 1);
    let eval_seed = derive_seed(seed, 2);
    let (theta_hat, _, _) = synthesize_theta(problem, estimate, n_mc, synth_seed)?;
    let (theta_star, _, _) = synthesize_theta(problem, truth, n_mc, synth_seed)?;
    let achieved = evaluate_cost(problem, &theta_hat, truth, n_mc, eval_seed)?;
    let optimal = evaluate_cost(problem, &theta_star, truth, n_mc, eval_seed)?;
    Ok(achieved - optimal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{toy, PolicyClass};
    use crate::dynamics::{FnDynamics, SystemModel};
    use nalgebra::dvector;

    #[test]
    fn optimizer_recovers_inverse_gain() {
        let p = toy::optimizer(0.0);
        let s = synthesize_ce(&p, &dvector![2.0], 4, 0).unwrap();
        assert!(s.converged);
        assert!((s.theta[0] - 0.5).abs() < 1e-3, "{:?}", s.theta);
    }

    #[test]
    fn optimizer_finds_origin_of_quadratic() {
        let dynamics = FnDynamics::new(2, 2, 0, |_x, u, _p| u.clone());
        let model = SystemModel::new("quadratic", dynamics, 0.0, 1).unwrap();
        let class = PolicyClass::new(2, 2, |theta, _, _| theta.clone());
        let opts = OptimizerOptions {
            init: dvector![1.5, -2.0],
            ..OptimizerOptions::default()
        };
        let p = ControlProblem::new(model, class, |_, _, _| 0.0, |x| x.norm_squared(), SynthesisMode::Optimizer(opts))
            .unwrap();
        let s = synthesize_ce(&p, &DVector::zeros(0), 1, 0).unwrap();
        assert!(s.theta.iter().all(|v| v.abs() < 1e-6), "{:?}", s.theta);
    }

    #[test]
    fn first_order_condition_holds_at_output() {
        let p = toy::optimizer(0.3);
        let (n_mc, seed) = (2_000, 9);
        let (theta, converged, _) = synthesize_theta(&p, &dvector![1.3], n_mc, seed).unwrap();
        assert!(converged);
        let f = |th: &DVector<f64>| evaluate_cost(&p, th, &dvector![1.3], n_mc, seed);
        let g = fd_gradient(&f, &theta, 1e-5).unwrap();
        assert!(g.norm() <= 10.0 * 1e-6, "{}", g.norm());
    }

    #[test]
    fn excess_cost_zero_at_truth() {
        for p in [toy::analytic(0.4), toy::optimizer(0.4)] {
            assert_eq!(excess_cost(&p, &dvector![1.2], &dvector![1.2], 200, 3).unwrap(), 0.0);
        }
    }

    #[test]
    fn excess_cost_closed_form() {
        let p = toy::analytic(0.0);
        let e = excess_cost(&p, &dvector![2.0], &dvector![1.0], 3, 0).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        let p = toy::optimizer(0.0);
        let e = excess_cost(&p, &dvector![2.0], &dvector![1.0], 3, 0).unwrap();
        assert!((e - 0.25).abs() < 1e-6);
    }

    #[test]
    fn non_finite_estimate_is_rejected() {
        assert!(synthesize_ce(&toy::analytic(0.0), &dvector![f64::NAN], 1, 0).is_err());
    }
}
