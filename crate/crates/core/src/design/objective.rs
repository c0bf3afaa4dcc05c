use nalgebra::{DMatrix, DVector};

use crate::dynamics::SystemModel;
use crate::estimation::GramMatrix;
use crate::{Error, Result};

/// `Phi(L) = tr(H (L + lambda I)^-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignObjective {
    hessian: DMatrix<f64>,
    lambda: f64,
}

impl DesignObjective {
    pub fn new(hessian: DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !hessian.is_square() {
            return Err(Error::Dimension("design objective needs a square weight matrix".into()));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("regularizer must be positive, got {lambda}")));
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        Ok(Self { hessian, lambda })
    }

    /// The A-optimal objective `tr((L + lambda I)^-1)`.
    pub fn a_optimal(dim: usize, lambda: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), lambda)
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    fn regularized_inverse(&self, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if gram.shape() != self.hessian.shape() {
            return Err(Error::Dimension(format!(
                "Gram matrix is {}x{}, objective expects {}x{}",
                gram.nrows(),
                gram.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        let shifted = gram + DMatrix::identity(self.dim(), self.dim()) * self.lambda;
        match shifted.clone().cholesky() {
            Some(c) => Ok(c.inverse()),
            None => shifted.try_inverse().ok_or(Error::Singular("regularized Gram matrix")),
        }
    }

    pub fn value(&self, gram: &DMatrix<f64>) -> Result<f64> {
        let inv = self.regularized_inverse(gram)?;
        Ok((&self.hessian * inv).trace())
    }

    /// `-(L + lambda I)^-1 H (L + lambda I)^-1`, symmetrized.
    pub fn gradient(&self, gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let inv = self.regularized_inverse(gram)?;
        let g = -(&inv * &self.hessian * &inv);
        Ok((&g + g.transpose()) * 0.5)
    }
}

pub fn design_gradient(objective: &DesignObjective, gram: &GramMatrix) -> Result<DMatrix<f64>> {
    objective.gradient(gram.matrix())
}

pub type ExplorationCost = std::sync::Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;

/// `c(x, u) = tr(Df(x, u; estimate) xi Df(x, u; estimate)') / b_phi`.
///
/// A Jacobian failure evaluates to `+inf` so that the offending candidate is
/// never selected.
pub fn exploration_stage_cost(
    model: &SystemModel,
    xi: &DMatrix<f64>,
    estimate: &DVector<f64>,
    b_phi: f64,
) -> Result<ExplorationCost> {
    if !(b_phi > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothness bound must be positive, got {b_phi}")));
    }
    if xi.shape() != (model.param_dim(), model.param_dim()) {
        return Err(Error::Dimension("design gradient does not match the parameter dimension".into()));
    }
    let model = model.clone();
    let xi = xi.clone();
    let estimate = estimate.clone();
    Ok(std::sync::Arc::new(move |x, u| match model.param_jacobian(x, u, &estimate) {
        Ok(jac) => (&jac * &xi).component_mul(&jac).sum() / b_phi,
        Err(_) => f64::INFINITY,
    }))
}
