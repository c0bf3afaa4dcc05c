//! Parameter identification and the statistics built on it: prediction
//! error, Gram matrices, covariance and Fisher information.

mod dataset;
mod gram;
mod lsq;

pub use dataset::EpisodeDataset;
pub use gram::{empirical_gram, fisher_information, mc_covariance, GramMatrix, Normalization};
pub use lsq::{least_squares_best_effort, least_squares_fit, lsq_objective, LsqFit, LsqOptions};

use nalgebra::DVector;

use crate::dynamics::{rollout_batch, Policy, SystemModel};
use crate::{Error, Result};

/// Monte-Carlo estimate of `E[(1/T) sum_t ||f(x,u;estimate) - f(x,u;truth)||^2]`
/// along rollouts of `policy` under `truth`.
pub fn prediction_error(
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    policy: &Policy,
    model: &SystemModel,
    n_mc: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc == 0 {
        return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
    }
    let episodes = rollout_batch(model, policy, truth, n_mc, seed)?;
    let horizon = model.horizon() as f64;
    let total: f64 = episodes
        .iter()
        .map(|ep| {
            ep.transitions()
                .map(|(x, u, _)| (model.predict(x, u, estimate) - model.predict(x, u, truth)).norm_squared())
                .sum::<f64>()
                / horizon
        })
        .sum();
    Ok((total / n_mc as f64).max(0.0))
}
