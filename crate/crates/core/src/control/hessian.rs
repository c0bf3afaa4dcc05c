use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::synthesis::synthesize_theta;
use super::{evaluate_cost, ControlProblem};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Finite-difference estimate of the model-task Hessian.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelTaskHessian {
    #[serde(serialize_with = "serialize_matrix")]
    pub matrix: DMatrix<f64>,
    pub mc_budget: usize,
    /// Absolute step used along each coordinate.
    pub fd_steps: Vec<f64>,
    pub warnings: Vec<String>,
}

fn serialize_matrix<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    rows.serialize(s)
}

impl ModelTaskHessian {
    /// Dense row-major CSV, no header.
    pub fn write_csv<W: std::io::Write>(&self, mut writer: W) -> Result<()> {
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(writer, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `H(truth) = d^2/dphi^2 J(pi*(phi), truth)` at `phi = truth`, by central
/// second differences with step `fd_step * (1 + |truth_i|)` per coordinate.
///
/// Every stencil point re-runs certainty-equivalent synthesis; synthesis and
/// cost evaluation share one seed each across the stencil.
pub fn model_task_hessian(
    problem: &ControlProblem,
    truth: &DVector<f64>,
    n_mc: usize,
    fd_step: f64,
    seed: u64,
) -> Result<ModelTaskHessian> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidArgument(format!("fd_step must be > 0, got {fd_step}")));
    }
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let d = truth.len();
    let steps: Vec<f64> = truth.iter().map(|v| fd_step * (1.0 + v.abs())).collect();
    let synth_seed = derive_seed(seed, 1);
    let eval_seed = derive_seed(seed, 2);

    // offsets as (coordinate, signed multiple of its step)
    let mut stencil: Vec<Vec<(usize, f64)>> = vec![vec![]];
    for i in 0..d {
        stencil.push(vec![(i, 1.0)]);
        stencil.push(vec![(i, -1.0)]);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                stencil.push(vec![(i, si), (j, sj)]);
            }
        }
    }

    let evaluated: Vec<(DVector<f64>, f64)> = stencil
        .par_iter()
        .map(|offsets| {
            let mut point = truth.clone();
            for &(i, s) in offsets {
                point[i] += s * steps[i];
            }
            let (theta, _, _) = synthesize_theta(problem, &point, n_mc, synth_seed).map_err(|e| {
                Error::StencilSynthesis {
                    point: point.iter().copied().collect(),
                    source: Box::new(e),
                }
            })?;
            let cost = evaluate_cost(problem, &theta, truth, n_mc, eval_seed)?;
            Ok((theta, cost))
        })
        .collect::<Result<_>>()?;

    let g0 = evaluated[0].1;
    let mut warnings = Vec::new();
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        let (theta_p, gp) = &evaluated[1 + 2 * i];
        let (theta_m, gm) = &evaluated[2 + 2 * i];
        h[(i, i)] = (gp - 2.0 * g0 + gm) / (steps[i] * steps[i]);

        let theta0 = &evaluated[0].0;
        let up = (theta_p - theta0).norm();
        let down = (theta_m - theta0).norm();
        let floor = 1e-6 * (1.0 + theta0.norm());
        if up.max(down) > floor && up.max(down) > 10.0 * up.min(down).max(floor) {
            let msg = format!(
                "synthesized parameters jump asymmetrically along coordinate {i} ({up:.3e} vs {down:.3e}); \
                 the Hessian estimate may straddle distinct local minima"
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    let mut k = 1 + 2 * d;
    for i in 0..d {
        for j in (i + 1)..d {
            let g = |o: usize| evaluated[k + o].1;
            let v = (g(0) - g(1) - g(2) + g(3)) / (4.0 * steps[i] * steps[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
            k += 4;
        }
    }
    let matrix = (&h + h.transpose()) * 0.5;
    Ok(ModelTaskHessian {
        matrix,
        mc_budget: n_mc,
        fd_steps: steps,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::{toy, SynthesisMode};
    use nalgebra::dvector;
    use std::sync::Arc;

    #[test]
    fn constant_cost_gives_zero() {
        let p = toy::analytic(0.2);
        let flat = ControlProblem::new(p.model.clone(), p.policy_class.clone(), |_, _, _| 1.0, |_| 2.0, p.synthesis.clone())
            .unwrap();
        let h = model_task_hessian(&flat, &dvector![1.0], 50, 1e-2, 0).unwrap();
        assert_eq!(h.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn toy_matches_closed_form() {
        let p = toy::analytic(0.3);
        for phi in [1.0, 2.0] {
            let h = model_task_hessian(&p, &dvector![phi], 20_000, 1e-2, 1).unwrap();
            let expected = 2.0 / (phi * phi);
            assert!((h.matrix[(0, 0)] - expected).abs() <= 0.05 * expected, "{}", h.matrix[(0, 0)]);
        }
    }

    #[test]
    fn optimizer_synthesis_agrees_with_closed_form() {
        let p = toy::optimizer(0.0);
        let h = model_task_hessian(&p, &dvector![1.0], 1, 1e-2, 0).unwrap();
        assert!((h.matrix[(0, 0)] - 2.0).abs() < 0.05);
    }

    #[test]
    fn mixed_partials_are_symmetric() {
        // x2 = p0 * u0 + p1 * u1 with u = theta, target 1; synthesis picks theta = p / |p|^2
        let dynamics = crate::dynamics::FnDynamics::new(1, 2, 2, |_x, u, p| dvector![p[0] * u[0] + p[1] * u[1]]);
        let model = crate::dynamics::SystemModel::new("two", dynamics, 0.0, 1).unwrap();
        let class = crate::dynamics::PolicyClass::new(2, 2, |theta, _, _| theta.clone());
        let synth = SynthesisMode::Analytic(Arc::new(|p: &DVector<f64>| Ok(p / p.norm_squared())));
        let p = ControlProblem::new(model, class, |_, _, _| 0.0, |x| (x[0] - 1.0).powi(2), synth).unwrap();
        let h = model_task_hessian(&p, &dvector![1.0, 0.5], 1, 1e-3, 0).unwrap();
        assert!((h.matrix.clone() - h.matrix.transpose()).norm() < 1e-10);
        // closed form: J = (phi*.phi / |phi|^2 - 1)^2, Hessian at phi* is 2 g g' with g = phi* / |phi*|^2
        let g = dvector![1.0, 0.5] / 1.25;
        let oracle = &g * g.transpose() * 2.0;
        assert!((&h.matrix - &oracle).norm() < 1e-3 * oracle.norm(), "{}", h.matrix);
    }

    #[test]
    fn rejects_bad_step() {
        assert!(model_task_hessian(&toy::analytic(0.0), &dvector![1.0], 1, 0.0, 0).is_err());
    }

    #[test]
    fn synthesis_failure_names_the_point() {
        let p = toy::one_step(
            0.0,
            SynthesisMode::Analytic(Arc::new(|p: &DVector<f64>| {
                if p[0] > 1.0 {
                    Err(Error::Singular("test"))
                } else {
                    Ok(dvector![1.0 / p[0]])
                }
            })),
        );
        match model_task_hessian(&p, &dvector![1.0], 1, 1e-2, 0) {
            Err(Error::StencilSynthesis { point, .. }) => assert!(point[0] > 1.0),
            other => panic!("expected stencil error, got {other:?}"),
        }
    }
}
