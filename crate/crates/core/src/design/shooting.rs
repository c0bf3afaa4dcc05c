use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::RngCore;

use super::ExplorationCost;
use crate::dynamics::policy::{random_energy_sequence, rescale_energy};
use crate::dynamics::{EpisodeController, Policy, SystemModel};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::{Error, Result};

/// Certainty-equivalent random-shooting controller under an energy budget.
///
/// At each step the remaining input tail is re-planned: `n_samples` Gaussian
/// tails rescaled to the remaining energy, plus the shifted previous plan when
/// `warm_start` is on, are simulated without noise under `estimate`. The first
/// input of the cheapest tail is played; candidate order is warm start first,
/// then samples, and the lowest index wins ties.
pub struct RecedingHorizon {
    model: SystemModel,
    estimate: DVector<f64>,
    stage_cost: ExplorationCost,
    budget: f64,
    n_samples: usize,
    warm_start: bool,
    seed: u64,
}

impl fmt::Debug for RecedingHorizon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecedingHorizon")
            .field("model", &self.model.name())
            .field("estimate", &self.estimate.as_slice())
            .field("budget", &self.budget)
            .field("n_samples", &self.n_samples)
            .field("warm_start", &self.warm_start)
            .finish()
    }
}

impl RecedingHorizon {
    pub fn new(
        model: &SystemModel,
        estimate: &DVector<f64>,
        stage_cost: ExplorationCost,
        budget: f64,
        n_samples: usize,
        seed: u64,
    ) -> Result<Self> {
        if !(budget > 0.0) {
            return Err(Error::InvalidArgument(format!("exploration budget must be positive, got {budget}")));
        }
        if n_samples == 0 {
            return Err(Error::InvalidArgument("random shooting needs at least one sample".into()));
        }
        if estimate.len() != model.param_dim() {
            return Err(Error::Dimension("estimate does not match the model parameter dimension".into()));
        }
        Ok(Self {
            model: model.clone(),
            estimate: estimate.clone(),
            stage_cost,
            budget,
            n_samples,
            warm_start: true,
            seed,
        })
    }

    pub fn with_warm_start(mut self, warm_start: bool) -> Self {
        self.warm_start = warm_start;
        self
    }

    pub fn model(&self) -> &SystemModel {
        &self.model
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn controller(&self, rng: &mut Rng) -> ShootingController<'_> {
        ShootingController {
            planner: self,
            rng: rng_from_seed(derive_seed(rng.next_u64(), self.seed)),
            plan: Vec::new(),
            spent: 0.0,
        }
    }

    fn tail_cost(&self, x0: &DVector<f64>, tail: &[DVector<f64>]) -> f64 {
        let mut x = x0.clone();
        let mut total = 0.0;
        for u in tail {
            total += (self.stage_cost)(&x, u);
            x = self.model.predict(&x, u, &self.estimate);
            if !x.iter().all(|v| v.is_finite()) {
                return f64::INFINITY;
            }
        }
        if total.is_nan() {
            f64::INFINITY
        } else {
            total
        }
    }
}

pub struct ShootingController<'a> {
    planner: &'a RecedingHorizon,
    rng: Rng,
    plan: Vec<DVector<f64>>,
    spent: f64,
}

impl EpisodeController for ShootingController<'_> {
    fn act(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let p = self.planner;
        let steps = p.model.horizon().saturating_sub(t);
        let du = p.model.input_dim();
        let remaining = p.budget - self.spent;
        if steps == 0 || remaining <= 0.0 {
            return DVector::zeros(du);
        }

        let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
        let mut consider = |tail: Vec<DVector<f64>>| {
            let cost = p.tail_cost(x, &tail);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, tail));
            }
        };
        if p.warm_start && self.plan.len() > 1 {
            let mut shifted = self.plan[1..].to_vec();
            rescale_energy(&mut shifted, remaining);
            if shifted.iter().any(|u| u.norm_squared() > 0.0) {
                consider(shifted);
            }
        }
        for _ in 0..p.n_samples {
            consider(random_energy_sequence(&mut self.rng, steps, du, remaining));
        }

        let (_, tail) = best.expect("at least one candidate");
        let u = tail[0].clone();
        self.spent += u.norm_squared();
        self.plan = tail;
        u
    }
}

/// Receding-horizon exploration policy that minimizes `stage_cost` under
/// the model `estimate` with total input energy `budget`.
pub fn receding_horizon_explore(
    model: &SystemModel,
    estimate: &DVector<f64>,
    stage_cost: ExplorationCost,
    budget: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Policy> {
    let planner = RecedingHorizon::new(model, estimate, stage_cost, budget, n_samples, seed)?;
    Ok(Policy::RecedingHorizon(Arc::new(planner)))
}
