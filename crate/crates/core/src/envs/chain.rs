use serde::{Deserialize, Serialize};

use super::{merge_outcomes, DiscreteModel, Outcome};
use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainParams {
    pub length: usize,
    #[serde(default)]
    pub p_slip: f64,
}

/// States `0..L`, start at 0, goal at `L-1`. A slip reverses the commanded move.
#[derive(Clone, Debug)]
pub struct ChainEnv {
    pub params: ChainParams,
}

impl ChainEnv {
    pub fn new(params: ChainParams) -> Result<Self> {
        if params.length < 3 {
            return Err(Error::invalid(format!("chain length {} < 3", params.length)));
        }
        if !(0.0..0.5).contains(&params.p_slip) {
            return Err(Error::invalid(format!("p_slip {} outside [0, 0.5)", params.p_slip)));
        }
        Ok(ChainEnv { params })
    }

    fn goal(&self) -> usize {
        self.params.length - 1
    }

    fn moved(&self, s: usize, a: usize) -> usize {
        if a == RIGHT {
            (s + 1).min(self.goal())
        } else {
            s.saturating_sub(1)
        }
    }

    fn outcome(&self, next: usize, prob: f64) -> Outcome {
        let terminal = next == self.goal();
        Outcome { next, prob, reward: if terminal { 0.0 } else { -1.0 }, terminal }
    }
}

impl DiscreteModel for ChainEnv {
    fn name(&self) -> &'static str {
        "chain"
    }
    fn params(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).expect("plain struct")
    }
    fn n_states(&self) -> usize {
        self.params.length
    }
    fn n_actions(&self) -> usize {
        2
    }
    fn start_state(&self) -> usize {
        0
    }
    fn is_terminal(&self, s: usize) -> bool {
        s == self.goal()
    }
    fn outcomes(&self, s: usize, a: usize, _t_open: usize) -> Vec<Outcome> {
        let p = self.params.p_slip;
        let mut outs = vec![self.outcome(self.moved(s, a), 1.0 - p)];
        if p > 0.0 {
            outs.push(self.outcome(self.moved(s, 1 - a), p));
        }
        merge_outcomes(outs)
    }
    fn distance(&self, a: usize, b: usize) -> f64 {
        a.abs_diff(b) as f64
    }
    fn expert_action(&self, _s: usize) -> usize {
        RIGHT
    }
    fn horizon_cap(&self) -> usize {
        4 * self.params.length
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{DiscreteEnv, Env};
    use crate::mdp::{Action, StateRepr};

    fn chain(l: usize, p: f64) -> DiscreteEnv<ChainEnv> {
        DiscreteEnv::new(ChainEnv::new(ChainParams { length: l, p_slip: p }).unwrap())
    }

    #[test]
    fn reaching_goal_terminates_with_zero_reward() {
        let mut env = chain(5, 0.0);
        env.reset_to(3, 0);
        let out = env.step(&Action::Discrete(RIGHT)).unwrap();
        assert_eq!(out.state, StateRepr::Discrete(4));
        assert_eq!(out.reward, 0.0);
        assert!(out.terminated);
        assert!(matches!(env.step(&Action::Discrete(RIGHT)), Err(Error::EpisodeOver)));
    }

    #[test]
    fn left_wall_clamps() {
        let mut env = chain(5, 0.0);
        env.reset(0);
        let out = env.step(&Action::Discrete(LEFT)).unwrap();
        assert_eq!(out.state, StateRepr::Discrete(0));
        assert_eq!(out.reward, -1.0);
        assert!(!out.done());
    }

    #[test]
    fn horizon_cap_truncates() {
        let mut env = chain(3, 0.0);
        env.reset(0);
        let mut last = None;
        for _ in 0..12 {
            last = Some(env.step(&Action::Discrete(LEFT)).unwrap());
        }
        let last = last.unwrap();
        assert!(last.truncated && !last.terminated);
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ChainEnv::new(ChainParams { length: 2, p_slip: 0.0 }).is_err());
        assert!(ChainEnv::new(ChainParams { length: 5, p_slip: 0.5 }).is_err());
    }
}
