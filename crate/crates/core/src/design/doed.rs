use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{design_gradient, exploration_stage_cost, DesignObjective, RecedingHorizon};
use crate::dynamics::{rollout_batch, Policy, SystemModel, Trajectory};
use crate::estimation::{empirical_gram, EpisodeDataset, GramMatrix, Normalization};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Settings of the exploration policies synthesized inside the design loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DoedConfig {
    /// Energy budget of every exploration episode.
    pub budget: f64,
    pub n_samples: usize,
    pub warm_start: bool,
}

impl Default for DoedConfig {
    fn default() -> Self {
        Self {
            budget: 1.0,
            n_samples: 100,
            warm_start: true,
        }
    }
}

/// Episodes per epoch and number of design epochs for a budget of `n` episodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DoedSchedule {
    pub episodes_per_epoch: usize,
    pub epochs: usize,
}

impl DoedSchedule {
    pub fn step_size(&self, k: usize) -> f64 {
        1.0 / (k as f64 + 1.0)
    }

    pub fn total_episodes(&self) -> usize {
        self.episodes_per_epoch * (self.epochs + 1)
    }
}

fn integer_root(n: u64, power: u32) -> u64 {
    let mut r = (n as f64).powf(1.0 / power as f64).round() as u64;
    while r.checked_pow(power).is_none_or(|v| v > n) {
        r -= 1;
    }
    while (r + 1).checked_pow(power).is_some_and(|v| v <= n) {
        r += 1;
    }
    r
}

/// `floor(n^(2/3))` episodes per epoch and `floor(n^(1/3)) - 1` epochs.
pub fn doed_schedule(n: usize) -> Result<DoedSchedule> {
    if n < 8 {
        return Err(Error::InvalidArgument(format!("the design loop needs at least 8 episodes, got {n}")));
    }
    let n = n as u64;
    Ok(DoedSchedule {
        episodes_per_epoch: integer_root(n * n, 3) as usize,
        epochs: integer_root(n, 3) as usize - 1,
    })
}

#[derive(Clone, Debug)]
pub struct DesignResult {
    pub schedule: DoedSchedule,
    pub policies: Vec<Policy>,
    pub initial_gram: GramMatrix,
    pub final_gram: GramMatrix,
    /// `Phi(L_0), ..., Phi(L_K)`.
    pub objective_trace: Vec<f64>,
    pub dataset: EpisodeDataset,
}

#[derive(Serialize)]
struct DesignSummary<'a> {
    episodes_per_epoch: usize,
    epochs: usize,
    objective_trace: &'a [f64],
    mixture_weights: Vec<f64>,
    episodes: usize,
}

impl DesignResult {
    pub fn to_json(&self) -> serde_json::Value {
        let k = self.policies.len();
        let mut weights = vec![0.5];
        weights.extend(std::iter::repeat_n(0.5 / k as f64, k));
        serde_json::to_value(DesignSummary {
            episodes_per_epoch: self.schedule.episodes_per_epoch,
            epochs: self.schedule.epochs,
            objective_trace: &self.objective_trace,
            mixture_weights: weights,
            episodes: self.dataset.len(),
        })
        .expect("design summary is serializable")
    }
}

/// The conditional-gradient design loop.
///
/// Epoch 0 plays `initial_policy`; epoch `k` plays a receding-horizon policy
/// minimizing the linearized objective at `L_{k-1}` and mixes the new Gram
/// matrix in with step `1 / (k + 1)`. Jacobians are taken at `estimate`;
/// episodes are rolled out under `truth`. All Gram matrices use per-episode
/// mean normalization.
#[allow(clippy::too_many_arguments)]
pub fn doed_plus(
    objective: &DesignObjective,
    n_episodes: usize,
    initial_policy: &Policy,
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    model: &SystemModel,
    b_phi: f64,
    config: &DoedConfig,
    seed: u64,
) -> Result<DesignResult> {
    let schedule = doed_schedule(n_episodes)?;
    if objective.dim() != model.param_dim() {
        return Err(Error::Dimension("design objective does not match the parameter dimension".into()));
    }
    let per_epoch = schedule.episodes_per_epoch;
    let mut dataset = EpisodeDataset::for_model(model);

    let play = |policy: &Policy, epoch: usize, dataset: &mut EpisodeDataset| -> Result<Vec<Trajectory>> {
        match rollout_batch(model, policy, truth, per_epoch, derive_seed(seed, epoch as u64)) {
            Ok(eps) => {
                dataset.extend(eps.iter().cloned())?;
                Ok(eps)
            }
            Err(e) => Err(Error::DesignAborted {
                source: Box::new(e),
                partial: Box::new(dataset.clone()),
            }),
        }
    };
    let gram_of = |eps: Vec<Trajectory>| -> Result<GramMatrix> {
        let data = EpisodeDataset::from_episodes(model, eps)?;
        empirical_gram(&data, model, estimate, Normalization::PerEpisodeMean)
    };

    let initial_gram = gram_of(play(initial_policy, 0, &mut dataset)?)?;
    let mut gram = initial_gram.clone();
    let mut trace = vec![objective.value(gram.matrix())?];
    let mut policies = Vec::with_capacity(schedule.epochs);

    for k in 1..=schedule.epochs {
        let xi = design_gradient(objective, &gram)?;
        let cost = exploration_stage_cost(model, &xi, estimate, b_phi)?;
        let planner = RecedingHorizon::new(
            model,
            estimate,
            cost,
            config.budget,
            config.n_samples,
            derive_seed(seed, 1_000 + k as u64),
        )?
        .with_warm_start(config.warm_start);
        let policy = Policy::RecedingHorizon(std::sync::Arc::new(planner));
        let fresh = gram_of(play(&policy, k, &mut dataset)?)?;
        gram = gram.blend(&fresh, schedule.step_size(k));
        trace.push(objective.value(gram.matrix())?);
        log::debug!("design epoch {k}: objective {:.6e}", trace[k]);
        policies.push(policy);
    }

    Ok(DesignResult {
        schedule,
        policies,
        initial_gram,
        final_gram: gram,
        objective_trace: trace,
        dataset,
    })
}

/// Plays `initial` with probability 1/2 and each design policy with
/// probability `1 / (2K)`.
pub fn build_mixture(initial: &Policy, policies: &[Policy]) -> Result<Policy> {
    if policies.is_empty() {
        return Err(Error::InvalidArgument("mixture needs at least one design policy".into()));
    }
    let w = 0.5 / policies.len() as f64;
    let mut components = vec![(initial.clone(), 0.5)];
    components.extend(policies.iter().map(|p| (p.clone(), w)));
    Policy::mixture(components)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnDynamics;
    use nalgebra::{dvector, DMatrix};

    fn scalar_linear(noise_std: f64, horizon: usize) -> SystemModel {
        let dynamics = FnDynamics::new(1, 1, 1, |x, u, p| dvector![p[0] * x[0] + u[0]])
            .with_jacobian(|x, _u, _p| DMatrix::from_element(1, 1, x[0]));
        SystemModel::new("scalar-linear", dynamics, noise_std, horizon).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let s = doed_schedule(64).unwrap();
        assert_eq!((s.episodes_per_epoch, s.epochs), (16, 3));
        let steps: Vec<f64> = (1..=3).map(|k| s.step_size(k)).collect();
        assert_eq!(steps, vec![0.5, 1.0 / 3.0, 0.25]);
        assert_eq!(doed_schedule(8).unwrap(), DoedSchedule { episodes_per_epoch: 4, epochs: 1 });
        assert_eq!(doed_schedule(27).unwrap(), DoedSchedule { episodes_per_epoch: 9, epochs: 2 });
        assert!(doed_schedule(7).is_err());
        for n in 8..5_000 {
            let s = doed_schedule(n).unwrap();
            assert!(s.total_episodes() <= n);
        }
    }

    #[test]
    fn mixture_weights() {
        let p = Policy::random_energy(1.0);
        assert_eq!(build_mixture(&p, &[p.clone()]).unwrap().weights(), vec![0.5, 0.5]);
        let w = build_mixture(&p, &vec![p.clone(); 3]).unwrap().weights();
        assert_eq!(w[0], 0.5);
        assert!(w[1..].iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
        for k in 1..40 {
            let total: f64 = build_mixture(&p, &vec![p.clone(); k]).unwrap().weights().iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
        assert!(build_mixture(&p, &[]).is_err());
    }

    #[test]
    fn loop_bookkeeping() {
        let model = scalar_linear(0.5, 5);
        let obj = DesignObjective::new(DMatrix::identity(1, 1), 1e-3).unwrap();
        let cfg = DoedConfig { budget: 5.0, n_samples: 20, warm_start: true };
        let r = doed_plus(&obj, 64, &Policy::random_energy(5.0), &dvector![0.5], &dvector![0.5], &model, 1.0, &cfg, 2)
            .unwrap();
        assert_eq!(r.objective_trace.len(), 4);
        assert_eq!(r.policies.len(), 3);
        assert_eq!(r.dataset.len(), 64);
        for ep in r.dataset.episodes() {
            assert!(ep.input_energy() <= 5.0 + 1e-9);
        }
        assert!(r.final_gram.matrix()[(0, 0)] >= 0.0);
        assert!(r.objective_trace.last().unwrap() <= &r.objective_trace[0]);
    }

    #[test]
    fn degenerate_exploration_keeps_objective_flat() {
        // single-sample shooting without warm start has the law of the initial policy
        let model = scalar_linear(0.3, 6);
        let obj = DesignObjective::new(DMatrix::identity(1, 1), 1e-3).unwrap();
        let cfg = DoedConfig { budget: 6.0, n_samples: 1, warm_start: false };
        let r = doed_plus(&obj, 512, &Policy::random_energy(6.0), &dvector![0.5], &dvector![0.5], &model, 1.0, &cfg, 7)
            .unwrap();
        let first = r.objective_trace[0];
        for v in &r.objective_trace {
            assert!((v - first).abs() <= 0.1 * first, "{:?}", r.objective_trace);
        }
    }

    #[test]
    fn divergence_aborts_with_partial_data() {
        let blowup = FnDynamics::new(1, 1, 1, |x, u, p| dvector![p[0] * x[0] * x[0] + u[0] + 1.0]);
        let model = SystemModel::new("blowup", blowup, 0.0, 40).unwrap();
        let obj = DesignObjective::new(DMatrix::identity(1, 1), 1e-3).unwrap();
        let res = doed_plus(&obj, 8, &Policy::random_energy(1.0), &dvector![5.0], &dvector![5.0], &model, 1.0, &DoedConfig::default(), 0);
        assert!(matches!(res, Err(Error::DesignAborted { .. })));
    }
}
