use serde::{Deserialize, Serialize};

use super::{merge_outcomes, DiscreteModel, Outcome};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularEdge {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Explicit finite MDP: `transitions[s][a]` lists weighted edges. Entering a
/// state listed in `terminal` ends the episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transitions: Vec<Vec<Vec<TabularEdge>>>,
    #[serde(default)]
    pub terminal: Vec<usize>,
    #[serde(default)]
    pub start: usize,
    #[serde(default)]
    pub expert: Option<Vec<usize>>,
    #[serde(default = "default_cap")]
    pub horizon_cap: usize,
}

fn default_cap() -> usize {
    100
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        if self.transitions.len() != self.n_states {
            return Err(Error::Shape("transitions must have one entry per state".into()));
        }
        for (s, row) in self.transitions.iter().enumerate() {
            if self.is_terminal(s) {
                continue;
            }
            if row.len() != self.n_actions {
                return Err(Error::Shape(format!("state {s} lists {} actions", row.len())));
            }
            for (a, edges) in row.iter().enumerate() {
                let total: f64 = edges.iter().map(|e| e.prob).sum();
                if (total - 1.0).abs() > 1e-9 || edges.iter().any(|e| e.next >= self.n_states) {
                    return Err(Error::invalid(format!("bad edge list at ({s}, {a})")));
                }
            }
        }
        if self.start >= self.n_states || self.terminal.iter().any(|&t| t >= self.n_states) {
            return Err(Error::invalid("state index out of range"));
        }
        Ok(())
    }

    /// Two states: state 0 steps to the absorbing goal 1 with reward -1.
    pub fn two_state() -> Self {
        TabularMdp {
            n_states: 2,
            n_actions: 1,
            transitions: vec![vec![vec![TabularEdge { next: 1, prob: 1.0, reward: -1.0 }]], vec![]],
            terminal: vec![1],
            start: 0,
            expert: None,
            horizon_cap: 10,
        }
    }
}

impl DiscreteModel for TabularMdp {
    fn name(&self) -> &'static str {
        "tabular"
    }
    fn params(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plain struct")
    }
    fn n_states(&self) -> usize {
        self.n_states
    }
    fn n_actions(&self) -> usize {
        self.n_actions
    }
    fn start_state(&self) -> usize {
        self.start
    }
    fn is_terminal(&self, s: usize) -> bool {
        self.terminal.contains(&s)
    }
    fn outcomes(&self, s: usize, a: usize, _t_open: usize) -> Vec<Outcome> {
        merge_outcomes(
            self.transitions[s][a]
                .iter()
                .map(|e| Outcome {
                    next: e.next,
                    prob: e.prob,
                    reward: e.reward,
                    terminal: self.is_terminal(e.next),
                })
                .collect(),
        )
    }
    fn distance(&self, a: usize, b: usize) -> f64 {
        a.abs_diff(b) as f64
    }
    fn expert_action(&self, s: usize) -> usize {
        self.expert.as_ref().map_or(0, |e| e[s])
    }
    fn horizon_cap(&self) -> usize {
        self.horizon_cap
    }
}
