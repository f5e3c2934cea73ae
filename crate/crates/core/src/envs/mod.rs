//! Sparse-reward environments and behavior-policy dataset generation.

mod behavior;
pub mod chain;
pub mod grid;
mod point_mass;
mod tabular;

pub use behavior::{generate_dataset, BehaviorPolicy, BehaviorPolicySpec, OuNoise};
pub use chain::ChainEnv;
pub use grid::{Region, TwoPhaseGridEnv};
pub use point_mass::PointMassEnv;
pub use tabular::{TabularEdge, TabularMdp};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Action, StateRepr};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of one action in network inputs (one-hot for discrete actions).
    pub fn encoded_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) => n,
            ActionSpace::Box { dim, .. } => dim,
        }
    }

    pub fn encode_into(&self, a: &Action, out: &mut Vec<f64>) {
        match (*self, a) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) => {
                let base = out.len();
                out.resize(base + n, 0.0);
                out[base + *i] = 1.0;
            }
            (ActionSpace::Box { .. }, Action::Continuous(v)) => out.extend_from_slice(v),
            _ => panic!("action does not match action space"),
        }
    }

    pub fn contains(&self, a: &Action) -> bool {
        match (*self, a) {
            (ActionSpace::Discrete(n), Action::Discrete(i)) => *i < n,
            (ActionSpace::Box { dim, .. }, Action::Continuous(v)) => {
                v.len() == dim && v.iter().all(|x| x.is_finite())
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: StateRepr,
    pub reward: f64,
    /// Reached an absorbing goal state.
    pub terminated: bool,
    /// Hit the horizon cap without reaching the goal.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait Env: Send + Sync {
    fn name(&self) -> &'static str;
    fn params(&self) -> serde_json::Value;
    fn action_space(&self) -> ActionSpace;
    fn feature_dim(&self) -> usize;
    fn features(&self, s: &StateRepr) -> Vec<f64>;
    fn horizon_cap(&self) -> usize;
    fn reset(&mut self, seed: u64) -> StateRepr;
    /// Step with `t_open` actions already executed since the last re-query.
    fn step_open(&mut self, action: &Action, t_open: usize) -> Result<StepOutcome>;
    fn step(&mut self, action: &Action) -> Result<StepOutcome> {
        self.step_open(action, 0)
    }
    fn expert_action(&self, s: &StateRepr) -> Action;
    fn discrete(&self) -> Option<&dyn DiscreteModel> {
        None
    }
    /// Time step used for continuous-time noise processes.
    fn dt(&self) -> f64 {
        1.0
    }
    fn boxed_clone(&self) -> Box<dyn Env>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
    pub terminal: bool,
}

/// Exact transition model of a finite environment.
pub trait DiscreteModel: Send + Sync {
    fn name(&self) -> &'static str;
    fn params(&self) -> serde_json::Value;
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn start_state(&self) -> usize;
    fn is_terminal(&self, s: usize) -> bool;
    /// Outcome distribution of one step; probabilities sum to 1.
    fn outcomes(&self, s: usize, a: usize, t_open: usize) -> Vec<Outcome>;
    /// Native metric used for nearest-state fallbacks.
    fn distance(&self, a: usize, b: usize) -> f64;
    fn expert_action(&self, s: usize) -> usize;
    fn horizon_cap(&self) -> usize;
}

/// Merge outcomes that land in the same state with the same reward.
pub(crate) fn merge_outcomes(mut outs: Vec<Outcome>) -> Vec<Outcome> {
    outs.sort_by(|a, b| a.next.cmp(&b.next).then(a.reward.total_cmp(&b.reward)));
    let mut merged: Vec<Outcome> = Vec::with_capacity(outs.len());
    for o in outs {
        if o.prob <= 0.0 {
            continue;
        }
        match merged.last_mut() {
            Some(m) if m.next == o.next && m.reward == o.reward && m.terminal == o.terminal => {
                m.prob += o.prob
            }
            _ => merged.push(o),
        }
    }
    merged
}

/// Episode runner shared by every finite model.
#[derive(Clone)]
pub struct DiscreteEnv<M: DiscreteModel + Clone> {
    pub model: M,
    rng: ChaCha8Rng,
    state: usize,
    t: usize,
    over: bool,
}

impl<M: DiscreteModel + Clone> DiscreteEnv<M> {
    pub fn new(model: M) -> Self {
        let start = model.start_state();
        DiscreteEnv { model, rng: crate::rng::rng(0), state: start, t: 0, over: true }
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Place the agent at `s` and start a fresh episode clock.
    pub fn reset_to(&mut self, s: usize, seed: u64) -> StateRepr {
        self.rng = crate::rng::rng(seed);
        self.state = s;
        self.t = 0;
        self.over = self.model.is_terminal(s);
        StateRepr::Discrete(s)
    }
}

impl<M: DiscreteModel + Clone + 'static> Env for DiscreteEnv<M> {
    fn name(&self) -> &'static str {
        self.model.name()
    }
    fn params(&self) -> serde_json::Value {
        self.model.params()
    }
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.model.n_actions())
    }
    fn feature_dim(&self) -> usize {
        self.model.n_states()
    }
    fn features(&self, s: &StateRepr) -> Vec<f64> {
        let mut v = vec![0.0; self.model.n_states()];
        if let Some(i) = s.index() {
            v[i] = 1.0;
        }
        v
    }
    fn horizon_cap(&self) -> usize {
        self.model.horizon_cap()
    }
    fn reset(&mut self, seed: u64) -> StateRepr {
        let s = self.model.start_state();
        self.reset_to(s, seed)
    }
    fn step_open(&mut self, action: &Action, t_open: usize) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        let a = match action {
            Action::Discrete(a) if *a < self.model.n_actions() => *a,
            other => return Err(Error::invalid(format!("action {other:?} outside action space"))),
        };
        let outs = self.model.outcomes(self.state, a, t_open);
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut pick = *outs.last().expect("non-empty outcome set");
        for o in &outs {
            acc += o.prob;
            if u < acc {
                pick = *o;
                break;
            }
        }
        self.state = pick.next;
        self.t += 1;
        let truncated = !pick.terminal && self.t >= self.model.horizon_cap();
        self.over = pick.terminal || truncated;
        Ok(StepOutcome {
            state: StateRepr::Discrete(pick.next),
            reward: pick.reward,
            terminated: pick.terminal,
            truncated,
        })
    }
    fn expert_action(&self, s: &StateRepr) -> Action {
        Action::Discrete(self.model.expert_action(s.index().expect("discrete state")))
    }
    fn discrete(&self) -> Option<&dyn DiscreteModel> {
        Some(&self.model)
    }
    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}

/// Serializable environment description: `{"kind": ..., "params": {...}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum EnvSpec {
    Chain(chain::ChainParams),
    TwoPhaseGrid(grid::GridParams),
    PointMass(point_mass::PointMassParams),
    Tabular(tabular::TabularMdp),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Env>> {
        Ok(match self {
            EnvSpec::Chain(p) => Box::new(DiscreteEnv::new(ChainEnv::new(p.clone())?)),
            EnvSpec::TwoPhaseGrid(p) => Box::new(DiscreteEnv::new(TwoPhaseGridEnv::new(p.clone())?)),
            EnvSpec::PointMass(p) => Box::new(PointMassEnv::new(p.clone())?),
            EnvSpec::Tabular(m) => {
                m.validate()?;
                Box::new(DiscreteEnv::new(m.clone()))
            }
        })
    }

    pub fn chain(length: usize, p_slip: f64) -> Self {
        EnvSpec::Chain(chain::ChainParams { length, p_slip })
    }

    pub fn grid(params: grid::GridParams) -> Self {
        EnvSpec::TwoPhaseGrid(params)
    }
}

pub use chain::ChainParams;
pub use grid::GridParams;
pub use point_mass::PointMassParams;

pub(crate) fn sample_index<R: Rng>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}
