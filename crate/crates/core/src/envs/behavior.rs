use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ActionSpace, DiscreteModel, Env};
use crate::error::{Error, Result};
use crate::mdp::{Action, Dataset, DatasetMeta, StateRepr, Trajectory};

fn d_epsilon() -> f64 {
    0.1
}
fn d_theta() -> f64 {
    1.0
}
fn d_sigma() -> f64 {
    0.2
}

/// Scripted expert plus temporally correlated noise. Discrete envs use
/// sticky-random noise (`epsilon`, `persistence`); continuous envs use an
/// Ornstein-Uhlenbeck process added to the expert action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorPolicySpec {
    #[serde(default = "d_epsilon")]
    pub epsilon: f64,
    /// Probability of repeating the previous action.
    #[serde(default)]
    pub persistence: f64,
    #[serde(default = "d_theta")]
    pub ou_theta: f64,
    #[serde(default = "d_sigma")]
    pub ou_sigma: f64,
}

impl Default for BehaviorPolicySpec {
    fn default() -> Self {
        BehaviorPolicySpec {
            epsilon: d_epsilon(),
            persistence: 0.0,
            ou_theta: d_theta(),
            ou_sigma: d_sigma(),
        }
    }
}

impl BehaviorPolicySpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.epsilon) || !unit(self.persistence) || self.persistence >= 1.0 {
            return Err(Error::invalid("epsilon must be in [0, 1] and persistence in [0, 1)"));
        }
        if self.ou_theta < 0.0 || self.ou_sigma < 0.0 {
            return Err(Error::invalid("OU parameters must be non-negative"));
        }
        Ok(())
    }

    /// Per-step action probabilities; exact only for a Markov behavior.
    pub fn discrete_probs(&self, model: &dyn DiscreteModel, s: usize) -> Result<Vec<f64>> {
        if self.persistence > 0.0 {
            return Err(Error::invalid("sticky behavior is not Markov in the state"));
        }
        let n = model.n_actions();
        let mut p = vec![self.epsilon / n as f64; n];
        p[model.expert_action(s)] += 1.0 - self.epsilon;
        Ok(p)
    }
}

/// OU process with exact discretization: lag-1 autocorrelation is `exp(-theta dt)`.
#[derive(Clone, Debug)]
pub struct OuNoise {
    pub theta: f64,
    pub sigma: f64,
    pub dt: f64,
    pub value: Vec<f64>,
}

impl OuNoise {
    pub fn new(theta: f64, sigma: f64, dt: f64, dim: usize) -> Self {
        OuNoise { theta, sigma, dt, value: vec![0.0; dim] }
    }

    pub fn reset<R: Rng>(&mut self, rng: &mut R) {
        let std = self.stationary_std();
        for v in &mut self.value {
            let z: f64 = StandardNormal.sample(rng);
            *v = std * z;
        }
    }

    pub fn stationary_std(&self) -> f64 {
        if self.theta > 0.0 {
            self.sigma / (2.0 * self.theta).sqrt()
        } else {
            0.0
        }
    }

    pub fn step<R: Rng>(&mut self, rng: &mut R) -> &[f64] {
        let decay = (-self.theta * self.dt).exp();
        let scale = if self.theta > 0.0 {
            self.sigma * ((1.0 - decay * decay) / (2.0 * self.theta)).sqrt()
        } else {
            self.sigma * self.dt.sqrt()
        };
        for v in &mut self.value {
            let z: f64 = StandardNormal.sample(rng);
            *v = decay * *v + scale * z;
        }
        &self.value
    }
}

/// Per-episode behavior state.
pub struct BehaviorPolicy {
    spec: BehaviorPolicySpec,
    space: ActionSpace,
    prev: Option<Action>,
    ou: OuNoise,
}

impl BehaviorPolicy {
    pub fn new<R: Rng>(spec: &BehaviorPolicySpec, env: &dyn Env, rng: &mut R) -> Self {
        let space = env.action_space();
        let mut ou = OuNoise::new(spec.ou_theta, spec.ou_sigma, env.dt(), space.encoded_dim());
        if matches!(space, ActionSpace::Box { .. }) {
            ou.reset(rng);
        }
        BehaviorPolicy { spec: spec.clone(), space, prev: None, ou }
    }

    pub fn act<R: Rng>(&mut self, env: &dyn Env, s: &StateRepr, rng: &mut R) -> Action {
        let expert = env.expert_action(s);
        let a = match self.space {
            ActionSpace::Discrete(n) => {
                let sticky = self.spec.persistence > 0.0 && rng.random::<f64>() < self.spec.persistence;
                match (&self.prev, sticky) {
                    (Some(prev), true) => prev.clone(),
                    _ if rng.random::<f64>() < self.spec.epsilon => {
                        Action::Discrete(super::sample_index(rng, n))
                    }
                    _ => expert,
                }
            }
            ActionSpace::Box { low, high, .. } => {
                let noise = self.ou.step(rng).to_vec();
                let e = expert.as_slice().expect("continuous expert");
                Action::Continuous(
                    e.iter().zip(noise).map(|(x, n)| (x + n).clamp(low, high)).collect(),
                )
            }
        };
        self.prev = Some(a.clone());
        a
    }
}

pub fn rollout_episode(
    env: &mut dyn Env,
    spec: &BehaviorPolicySpec,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut s = env.reset(env_seed);
    let mut policy = BehaviorPolicy::new(spec, env, rng);
    let mut traj = Trajectory { states: vec![s.clone()], actions: vec![], rewards: vec![], terminal: false };
    loop {
        let a = policy.act(env, &s, rng);
        let out = env.step(&a)?;
        traj.actions.push(a);
        traj.rewards.push(out.reward);
        traj.states.push(out.state.clone());
        if out.done() {
            traj.terminal = out.terminated;
            return Ok(traj);
        }
        s = out.state;
    }
}

/// Episodes are generated in parallel; episode `i` uses seeds derived from
/// `(seed, i)` only, so the result does not depend on scheduling.
pub fn generate_dataset(
    env: &dyn Env,
    spec: &BehaviorPolicySpec,
    n_episodes: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 {
        return Err(Error::invalid("n_episodes must be >= 1"));
    }
    spec.validate()?;
    let trajectories = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let mut env = env.boxed_clone();
            let ep_seed = crate::rng::split(seed, i);
            let mut rng = crate::rng::child(ep_seed, 1);
            rollout_episode(env.as_mut(), spec, crate::rng::split(ep_seed, 0), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        env: env.name().to_string(),
        env_params: env.params(),
        behavior: serde_json::to_value(spec)?,
        seed,
        version: 1,
    };
    Dataset::new(meta, trajectories)
}
