use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::SystemModel;
use crate::design::RecedingHorizon;
use crate::rng::Rng;
use crate::{Error, Result};

type FeedbackLaw = dyn Fn(&DVector<f64>, usize, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// A parametric family of feedback laws `u = law(theta, t, x)`.
#[derive(Clone)]
pub struct PolicyClass {
    theta_dim: usize,
    input_dim: usize,
    law: Arc<FeedbackLaw>,
}

impl fmt::Debug for PolicyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyClass")
            .field("theta_dim", &self.theta_dim)
            .field("input_dim", &self.input_dim)
            .finish()
    }
}

impl PolicyClass {
    pub fn new(
        theta_dim: usize,
        input_dim: usize,
        law: impl Fn(&DVector<f64>, usize, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            theta_dim,
            input_dim,
            law: Arc::new(law),
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input(&self, theta: &DVector<f64>, t: usize, x: &DVector<f64>) -> DVector<f64> {
        (self.law)(theta, t, x)
    }
}

/// An input law for one episode. Created fresh at the start of every episode.
pub trait EpisodeController {
    fn act(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64>;
}

/// Target policies (parametric feedback) and exploration procedures.
#[derive(Clone, Debug)]
pub enum Policy {
    Feedback { class: PolicyClass, theta: DVector<f64> },
    /// Isotropic Gaussian inputs rescaled so that `sum_t ||u_t||^2 == budget`.
    RandomEnergy { budget: f64 },
    RecedingHorizon(Arc<RecedingHorizon>),
    /// Picks one component per episode with the given probabilities.
    Mixture(Vec<(Policy, f64)>),
}

impl Policy {
    pub fn feedback(class: PolicyClass, theta: DVector<f64>) -> Self {
        Policy::Feedback { class, theta }
    }

    pub fn random_energy(budget: f64) -> Self {
        Policy::RandomEnergy { budget }
    }

    pub fn mixture(components: Vec<(Policy, f64)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        if components.iter().any(|(_, p)| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidArgument("mixture probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = components.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture probabilities sum to {total}, expected 1")));
        }
        Ok(Policy::Mixture(components))
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            Policy::Mixture(c) => c.iter().map(|(_, p)| *p).collect(),
            _ => vec![1.0],
        }
    }

    /// Input dimension when the policy fixes one.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Policy::Feedback { class, .. } => Some(class.input_dim()),
            Policy::RandomEnergy { .. } => None,
            Policy::RecedingHorizon(rh) => Some(rh.model().input_dim()),
            Policy::Mixture(c) => c.iter().find_map(|(p, _)| p.input_dim()),
        }
    }

    pub fn start_episode<'a>(&'a self, model: &SystemModel, rng: &mut Rng) -> Box<dyn EpisodeController + 'a> {
        match self {
            Policy::Feedback { class, theta } => Box::new(FeedbackController { class, theta }),
            Policy::RandomEnergy { budget } => Box::new(OpenLoop {
                inputs: random_energy_sequence(rng, model.horizon(), model.input_dim(), *budget),
            }),
            Policy::RecedingHorizon(rh) => Box::new(rh.controller(rng)),
            Policy::Mixture(components) => {
                let draw: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &components[components.len() - 1].0;
                for (policy, p) in components {
                    acc += p;
                    if draw < acc {
                        chosen = policy;
                        break;
                    }
                }
                chosen.start_episode(model, rng)
            }
        }
    }
}

/// `steps` standard-normal input vectors rescaled to total energy `budget`.
pub(crate) fn random_energy_sequence(rng: &mut Rng, steps: usize, input_dim: usize, budget: f64) -> Vec<DVector<f64>> {
    let mut seq: Vec<DVector<f64>> = (0..steps)
        .map(|_| DVector::from_fn(input_dim, |_, _| StandardNormal.sample(&mut *rng)))
        .collect();
    rescale_energy(&mut seq, budget);
    seq
}

/// Rescales `seq` in place so that `sum ||u||^2 == budget` (no-op on a zero sequence).
pub(crate) fn rescale_energy(seq: &mut [DVector<f64>], budget: f64) {
    let energy: f64 = seq.iter().map(|u| u.norm_squared()).sum();
    if energy > 0.0 && budget > 0.0 {
        let scale = (budget / energy).sqrt();
        for u in seq.iter_mut() {
            *u *= scale;
        }
    } else {
        for u in seq.iter_mut() {
            u.fill(0.0);
        }
    }
}

struct FeedbackController<'a> {
    class: &'a PolicyClass,
    theta: &'a DVector<f64>,
}

impl EpisodeController for FeedbackController<'_> {
    fn act(&mut self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        self.class.input(self.theta, t, x)
    }
}

struct OpenLoop {
    inputs: Vec<DVector<f64>>,
}

impl EpisodeController for OpenLoop {
    fn act(&mut self, t: usize, _x: &DVector<f64>) -> DVector<f64> {
        self.inputs[t].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{rollout, rollout_batch, FnDynamics};
    use nalgebra::{dvector, DMatrix};

    fn scalar_linear(noise_std: f64, horizon: usize) -> SystemModel {
        let dynamics = FnDynamics::new(1, 1, 1, |x, u, p| dvector![p[0] * x[0] + u[0]])
            .with_jacobian(|x, _u, _p| DMatrix::from_element(1, 1, x[0]));
        SystemModel::new("scalar-linear", dynamics, noise_std, horizon).unwrap()
    }

    fn constant(value: f64) -> Policy {
        Policy::feedback(PolicyClass::new(0, 1, move |_, _, _| dvector![value]), DVector::zeros(0))
    }

    #[test]
    fn mixture_weights_are_validated() {
        assert!(Policy::mixture(vec![]).is_err());
        assert!(Policy::mixture(vec![(constant(0.0), 0.5), (constant(1.0), 0.4)]).is_err());
        assert!(Policy::mixture(vec![(constant(0.0), -0.1), (constant(1.0), 1.1)]).is_err());
        assert!(Policy::mixture(vec![(constant(0.0), 0.25), (constant(1.0), 0.75)]).is_ok());
    }

    #[test]
    fn random_energy_meets_budget_exactly() {
        let model = scalar_linear(0.5, 13);
        for seed in 0..50 {
            let traj = rollout(&model, &Policy::random_energy(13.0), &dvector![0.9], seed).unwrap();
            assert!((traj.input_energy() - 13.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn mixture_picks_one_component_per_episode() {
        let model = scalar_linear(0.0, 5);
        let mix = Policy::mixture(vec![(constant(1.0), 0.5), (constant(-1.0), 0.5)]).unwrap();
        let trajs = rollout_batch(&model, &mix, &dvector![0.5], 200, 3).unwrap();
        let mut seen = [0usize; 2];
        for traj in &trajs {
            let first = traj.inputs[0][0];
            assert!(traj.inputs.iter().all(|u| u[0] == first));
            seen[usize::from(first < 0.0)] += 1;
        }
        assert!(seen[0] > 60 && seen[1] > 60, "{seen:?}");
    }

    #[test]
    fn mixture_obeys_total_expectation() {
        // statistic g = x_T, bounded on this system
        let model = scalar_linear(0.2, 4);
        let params = dvector![0.5];
        let a = constant(1.0);
        let b = constant(-0.5);
        let weight = 0.3;
        let n = 10_000;
        let mean_of = |p: &Policy| -> (f64, f64) {
            let xs: Vec<f64> = rollout_batch(&model, p, &params, n, 17)
                .unwrap()
                .iter()
                .map(|t| t.states.last().unwrap()[0])
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, v)
        };
        let (ma, _) = mean_of(&a);
        let (mb, _) = mean_of(&b);
        let mix = Policy::mixture(vec![(a, weight), (b, 1.0 - weight)]).unwrap();
        let (mm, vm) = mean_of(&mix);
        let expected = weight * ma + (1.0 - weight) * mb;
        let se = (vm / n as f64).sqrt();
        assert!((mm - expected).abs() <= 3.0 * se, "{mm} vs {expected} (se {se})");
    }
}
