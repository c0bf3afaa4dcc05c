//! Discrete-time LQR via the structure-preserving doubling algorithm.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Stabilizing solution `P` of
/// `P = A'PA - A'PB (R + B'PB)^-1 B'PA + Q`.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Dimension("inconsistent DARE dimensions".into()));
    }
    let r_inv = r.clone().try_inverse().ok_or(Error::Singular("DARE input weight"))?;
    let eye = DMatrix::<f64>::identity(n, n);

    let mut ak = a.clone();
    let mut gk = b * r_inv * b.transpose();
    let mut hk = q.clone();
    for _ in 0..100 {
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let w_inv_a = lu.solve(&ak).ok_or(Error::Singular("DARE doubling step"))?;
        let w_inv_g = lu.solve(&gk).ok_or(Error::Singular("DARE doubling step"))?;
        let h_next = &hk + ak.transpose() * &hk * &w_inv_a;
        let g_next = &gk + &ak * w_inv_g * ak.transpose();
        let a_next = &ak * &w_inv_a;
        let delta = (&h_next - &hk).norm();
        hk = (&h_next + h_next.transpose()) * 0.5;
        gk = (&g_next + g_next.transpose()) * 0.5;
        ak = a_next;
        if delta <= 1e-13 * hk.norm().max(1.0) {
            return Ok(hk);
        }
        if hk.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::Singular("DARE did not converge"))
}

/// LQR gain `K` for the control law `u = -K x`.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = solve_dare(a, b, q, r)?;
    let btp = b.transpose() * &p;
    (r + &btp * b)
        .lu()
        .solve(&(btp * a))
        .ok_or(Error::Singular("LQR gain"))
}
