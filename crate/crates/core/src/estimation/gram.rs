use std::io::Write;

use nalgebra::{DMatrix, DVector};

use super::EpisodeDataset;
use crate::dynamics::{rollout_batch, Policy, SystemModel};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Sum over all transitions divided by the number of episodes.
    PerEpisodeMean,
    RawSum,
}

/// Symmetric PSD accumulation of parameter-Jacobian outer products `Df' Df`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    normalization: Normalization,
}

impl GramMatrix {
    pub fn new(matrix: DMatrix<f64>, normalization: Normalization) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "Gram matrix must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let sym = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self {
            matrix: sym,
            normalization,
        })
    }

    pub fn zeros(dim: usize, normalization: Normalization) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
            normalization,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// `(1 - weight) * self + weight * other`.
    pub fn blend(&self, other: &GramMatrix, weight: f64) -> GramMatrix {
        GramMatrix {
            matrix: &self.matrix * (1.0 - weight) + &other.matrix * weight,
            normalization: self.normalization,
        }
    }

    pub fn scaled(&self, factor: f64) -> GramMatrix {
        GramMatrix {
            matrix: &self.matrix * factor,
            normalization: self.normalization,
        }
    }

    /// Dense row-major CSV, no header.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for i in 0..self.matrix.nrows() {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:e}")).collect();
            writeln!(writer, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// `sum_{k,t} Df' Df` over `data` at `params`, divided by the number of
/// episodes for [`Normalization::PerEpisodeMean`].
pub fn empirical_gram(
    data: &EpisodeDataset,
    model: &SystemModel,
    params: &DVector<f64>,
    normalization: Normalization,
) -> Result<GramMatrix> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empirical Gram matrix of an empty dataset".into()));
    }
    let mut acc = DMatrix::zeros(model.param_dim(), model.param_dim());
    for (x, u, _) in data.transitions() {
        let jac = model.param_jacobian(x, u, params)?;
        acc.gemm_tr(1.0, &jac, &jac, 1.0);
    }
    if normalization == Normalization::PerEpisodeMean {
        acc /= data.len() as f64;
    }
    GramMatrix::new(acc, normalization)
}

/// Monte-Carlo estimate of `E[sum_t Df' Df]` under `policy` rolled out at `params`.
pub fn mc_covariance(
    policy: &Policy,
    model: &SystemModel,
    params: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<GramMatrix> {
    let episodes = rollout_batch(model, policy, params, n_mc, seed)?;
    let data = EpisodeDataset::from_episodes(model, episodes)?;
    empirical_gram(&data, model, params, Normalization::PerEpisodeMean)
}

/// Fisher information: [`mc_covariance`] divided by `noise_std^2`.
pub fn fisher_information(
    policy: &Policy,
    model: &SystemModel,
    params: &DVector<f64>,
    n_mc: usize,
    seed: u64,
) -> Result<GramMatrix> {
    let sigma2 = model.noise_std().powi(2);
    if sigma2 <= 0.0 {
        return Err(Error::InvalidArgument("Fisher information needs a positive noise level".into()));
    }
    Ok(mc_covariance(policy, model, params, n_mc, seed)?.scaled(1.0 / sigma2))
}
