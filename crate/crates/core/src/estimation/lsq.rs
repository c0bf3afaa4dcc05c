//! Damped Gauss-Newton (Levenberg-Marquardt) for
//! `min_params sum_{n,t} ||x[t+1] - f(x[t], u[t]; params)||^2`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EpisodeDataset;
use crate::dynamics::SystemModel;
use crate::rng::{derive_seed, rng_from_seed};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LsqOptions {
    pub n_starts: usize,
    /// Standard deviation of the Gaussian perturbation applied to `init` for
    /// every start after the first.
    pub perturbation: f64,
    /// Converged when `||grad|| <= grad_tol * max(1, objective)`.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            n_starts: 5,
            perturbation: 0.5,
            grad_tol: 1e-8,
            max_iter: 500,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsqFit {
    pub params: DVector<f64>,
    /// Attained objective value.
    pub residual: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

#[derive(Debug)]
struct StartOutcome {
    fit: LsqFit,
    converged: bool,
}

/// Sum of squared one-step prediction errors.
///
/// Episodes are accumulated separately and added in sorted order, so the
/// result does not depend on the order in which episodes were collected.
pub fn lsq_objective(data: &EpisodeDataset, model: &SystemModel, params: &DVector<f64>) -> f64 {
    let mut parts: Vec<f64> = data
        .episodes()
        .iter()
        .map(|ep| {
            ep.transitions()
                .map(|(x, u, xn)| (xn - model.predict(x, u, params)).norm_squared())
                .sum()
        })
        .collect();
    parts.sort_by(f64::total_cmp);
    parts.into_iter().sum()
}

/// Normal-equation pieces `(J'J, J'e, ||e||^2)` with `e = x' - f`, `J = Df`.
fn normal_equations(
    data: &EpisodeDataset,
    model: &SystemModel,
    params: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let d = model.param_dim();
    let mut parts = Vec::with_capacity(data.len());
    for ep in data.episodes() {
        let mut jtj = DMatrix::zeros(d, d);
        let mut jte = DVector::zeros(d);
        let mut obj = 0.0;
        for (x, u, xn) in ep.transitions() {
            let e = xn - model.predict(x, u, params);
            let jac = model.param_jacobian(x, u, params)?;
            jtj.gemm_tr(1.0, &jac, &jac, 1.0);
            jte.gemv_tr(1.0, &jac, &e, 1.0);
            obj += e.norm_squared();
        }
        parts.push((obj, jte, jtj));
    }
    parts.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.iter().zip(b.1.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.2.iter().zip(b.2.iter()).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut jtj = DMatrix::zeros(d, d);
    let mut jte = DVector::zeros(d);
    let mut obj = 0.0;
    for (o, g, h) in parts {
        obj += o;
        jte += g;
        jtj += h;
    }
    if !obj.is_finite() {
        return Err(Error::NonFiniteDynamics);
    }
    Ok((jtj, jte, obj))
}

fn single_start(
    data: &EpisodeDataset,
    model: &SystemModel,
    start: DVector<f64>,
    opts: &LsqOptions,
) -> Result<StartOutcome> {
    let mut params = start;
    let (mut jtj, mut jte, mut obj) = normal_equations(data, model, &params)?;
    let mut mu = 1e-3;
    let d = params.len();

    for iter in 0..opts.max_iter {
        let grad_norm = 2.0 * jte.norm();
        if grad_norm <= opts.grad_tol * obj.max(1.0) {
            return Ok(StartOutcome {
                fit: LsqFit { params, residual: obj, grad_norm, iterations: iter },
                converged: true,
            });
        }

        let scale = jtj.diagonal().iter().fold(0.0f64, |m, v| m.max(*v)).max(1e-12);
        let mut improved = false;
        while mu * scale < 1e18 {
            let mut damped = jtj.clone();
            for i in 0..d {
                damped[(i, i)] += mu * jtj[(i, i)].max(scale * 1e-9);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jte)) else {
                mu *= 4.0;
                continue;
            };
            let candidate = &params + &step;
            let trial = lsq_objective(data, model, &candidate);
            if trial.is_finite() && trial < obj {
                params = candidate;
                mu = (mu / 3.0).max(1e-12);
                improved = true;
                break;
            }
            mu *= 4.0;
        }

        if !improved {
            // No damped step decreases the objective: numerically stationary.
            let converged = grad_norm <= opts.grad_tol.sqrt() * obj.max(1.0);
            return Ok(StartOutcome {
                fit: LsqFit { params, residual: obj, grad_norm, iterations: iter },
                converged,
            });
        }
        (jtj, jte, obj) = normal_equations(data, model, &params)?;
    }

    let grad_norm = 2.0 * jte.norm();
    Ok(StartOutcome {
        converged: grad_norm <= opts.grad_tol * obj.max(1.0),
        fit: LsqFit { params, residual: obj, grad_norm, iterations: opts.max_iter },
    })
}

/// Multi-start nonlinear least squares. Start 0 is `init`; the others perturb
/// it with seeded Gaussian noise. Returns the lowest-residual converged start.
pub fn least_squares_fit(
    data: &EpisodeDataset,
    model: &SystemModel,
    init: &DVector<f64>,
    opts: &LsqOptions,
) -> Result<LsqFit> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("least squares on an empty dataset".into()));
    }
    if init.len() != model.param_dim() {
        return Err(Error::Dimension(format!(
            "initial guess has length {}, model expects {}",
            init.len(),
            model.param_dim()
        )));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("initial guess must be finite".into()));
    }

    let n_starts = opts.n_starts.max(1);
    let starts: Vec<DVector<f64>> = (0..n_starts)
        .map(|k| {
            if k == 0 {
                init.clone()
            } else {
                let mut rng = rng_from_seed(derive_seed(opts.seed, k as u64));
                init.map(|v| v + opts.perturbation * { let z: f64 = StandardNormal.sample(&mut rng); z })
            }
        })
        .collect();

    let outcomes: Vec<StartOutcome> = starts
        .into_par_iter()
        .filter_map(|s| single_start(data, model, s, opts).ok())
        .collect();

    if outcomes.is_empty() {
        return Err(Error::AllStartsDiverged(n_starts));
    }
    let best_converged = outcomes
        .iter()
        .filter(|o| o.converged)
        .min_by(|a, b| a.fit.residual.total_cmp(&b.fit.residual));
    match best_converged {
        Some(o) => Ok(o.fit.clone()),
        None => {
            let best = outcomes
                .into_iter()
                .min_by(|a, b| a.fit.residual.total_cmp(&b.fit.residual))
                .expect("non-empty");
            Err(Error::ConvergenceFailure {
                best: best.fit.params,
                residual: best.fit.residual,
                grad_norm: best.fit.grad_norm,
                iterations: best.fit.iterations,
            })
        }
    }
}

/// Like [`least_squares_fit`] but falls back to the best iterate when no start
/// meets the gradient tolerance.
pub fn least_squares_best_effort(
    data: &EpisodeDataset,
    model: &SystemModel,
    init: &DVector<f64>,
    opts: &LsqOptions,
) -> Result<(LsqFit, bool)> {
    match least_squares_fit(data, model, init, opts) {
        Ok(fit) => Ok((fit, true)),
        Err(Error::ConvergenceFailure { best, residual, grad_norm, iterations }) => Ok((
            LsqFit { params: best, residual, grad_norm, iterations },
            false,
        )),
        Err(e) => Err(e),
    }
}
