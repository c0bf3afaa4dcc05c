//! Experiment design: the trace-inverse objective, its gradient, the
//! exploration stage cost and the conditional-gradient loop that steers data
//! collection toward the control-relevant directions of parameter space.

mod doed;
mod objective;
mod shooting;

pub use doed::{build_mixture, doed_plus, doed_schedule, DesignResult, DoedConfig, DoedSchedule};
pub use objective::{design_gradient, exploration_stage_cost, DesignObjective, ExplorationCost};
pub use shooting::{receding_horizon_explore, RecedingHorizon, ShootingController};
