//! Active learning for control-oriented identification.
//!
//! The crate is organised around the identification-to-control pipeline:
//!
//! - [`dynamics`]: parametric systems, policies and seeded episodic rollouts.
//! - [`estimation`]: nonlinear least squares, Gram matrices, Fisher information.
//! - [`control`]: cost evaluation, certainty-equivalent synthesis, excess cost
//!   and the model-task Hessian.
//! - [`design`]: the trace-inverse design objective and the conditional-gradient
//!   exploration loop driven by receding-horizon random shooting.
//! - [`alcoi`]: end-to-end orchestration and the random / A-optimal baselines.
//! - [`benchmarks`]: the bump and cartpole systems plus evaluation sweeps.

pub mod alcoi;
pub mod benchmarks;
pub mod control;
pub mod design;
pub mod dynamics;
pub mod error;
pub mod estimation;
pub mod rng;

pub use error::{Error, Result};
