use nalgebra::DVector;
use thiserror::Error;

use crate::alcoi::PartialReport;
use crate::estimation::EpisodeDataset;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rollout diverged at step {step}{}", episode.map(|e| format!(" of episode {e}")).unwrap_or_default())]
    RolloutDiverged { step: usize, episode: Option<usize> },

    #[error("non-finite dynamics evaluation")]
    NonFiniteDynamics,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("least squares did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    ConvergenceFailure {
        best: DVector<f64>,
        residual: f64,
        grad_norm: f64,
        iterations: usize,
    },

    #[error("all {0} least-squares starts diverged")]
    AllStartsDiverged(usize),

    #[error("policy synthesis failed at stencil point {point:?}: {source}")]
    StencilSynthesis {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("model-task Hessian is degenerate (lambda_min {lambda_min:.3e}, norm {norm:.3e}); use a fixed regularizer")]
    DegenerateHessian { lambda_min: f64, norm: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("experiment design aborted after {} episodes: {source}", partial.len())]
    DesignAborted {
        #[source]
        source: Box<Error>,
        partial: Box<EpisodeDataset>,
    },

    #[error("stage `{stage}` failed: {source}")]
    StageFailed {
        stage: &'static str,
        #[source]
        source: Box<Error>,
        partial: Box<PartialReport>,
    },

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
