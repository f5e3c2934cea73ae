use serde::{Deserialize, Serialize};

use super::{merge_outcomes, DiscreteModel, Outcome};
use crate::error::{Error, Result};

pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Corridor,
    Contact,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationModel {
    /// `min(p_contact * (1 + t_open / tau_acc), 0.6)`.
    #[default]
    Accumulating,
    /// `p_contact` regardless of time since re-query.
    Constant,
}

fn default_contact_width() -> usize {
    1
}
fn default_p_contact() -> f64 {
    0.55
}
fn default_tau_acc() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub width: usize,
    pub height: usize,
    /// Number of rightmost columns forming the contact region.
    #[serde(default = "default_contact_width")]
    pub contact_width: usize,
    #[serde(default = "default_p_contact")]
    pub p_contact: f64,
    #[serde(default = "default_tau_acc")]
    pub tau_acc: f64,
    #[serde(default)]
    pub perturbation: PerturbationModel,
    /// Defaults to the top-right cell.
    #[serde(default)]
    pub goal: Option<(usize, usize)>,
    /// Defaults to the bottom-left cell.
    #[serde(default)]
    pub start: Option<(usize, usize)>,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            width: 5,
            height: 5,
            contact_width: default_contact_width(),
            p_contact: default_p_contact(),
            tau_acc: default_tau_acc(),
            perturbation: PerturbationModel::default(),
            goal: None,
            start: None,
        }
    }
}

/// Grid with a deterministic corridor on the left and a contact region on the
/// right where commanded actions are replaced by one of the other three
/// actions with a probability that grows while the agent runs open-loop.
/// Actions: 0 up, 1 right, 2 down, 3 left.
#[derive(Clone, Debug)]
pub struct TwoPhaseGridEnv {
    pub params: GridParams,
    goal: (usize, usize),
    start: (usize, usize),
}

impl TwoPhaseGridEnv {
    pub fn new(params: GridParams) -> Result<Self> {
        let (w, h) = (params.width, params.height);
        if w < 2 || h < 1 {
            return Err(Error::invalid(format!("grid {w}x{h} too small")));
        }
        if params.contact_width == 0 || params.contact_width >= w {
            return Err(Error::invalid("contact_width must be in 1..width"));
        }
        if !(params.p_contact > 0.0 && params.p_contact <= 0.6) {
            return Err(Error::invalid(format!("p_contact {} outside (0, 0.6]", params.p_contact)));
        }
        if !(params.tau_acc > 0.0) {
            return Err(Error::invalid("tau_acc must be positive"));
        }
        let goal = params.goal.unwrap_or((w - 1, h - 1));
        let start = params.start.unwrap_or((0, 0));
        let env = TwoPhaseGridEnv { params, goal, start };
        for (x, y) in [goal, start] {
            if x >= w || y >= h {
                return Err(Error::invalid(format!("cell ({x}, {y}) outside grid")));
            }
        }
        if env.region_xy(goal.0) != Region::Contact {
            return Err(Error::invalid("goal must lie in the contact region"));
        }
        if goal == start {
            return Err(Error::invalid("start equals goal"));
        }
        Ok(env)
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.params.width + x
    }

    pub fn coords(&self, s: usize) -> (usize, usize) {
        (s % self.params.width, s / self.params.width)
    }

    fn region_xy(&self, x: usize) -> Region {
        if x + self.params.contact_width >= self.params.width {
            Region::Contact
        } else {
            Region::Corridor
        }
    }

    pub fn region(&self, s: usize) -> Region {
        self.region_xy(self.coords(s).0)
    }

    pub fn goal_state(&self) -> usize {
        self.index(self.goal.0, self.goal.1)
    }

    pub fn perturbation_prob(&self, t_open: usize) -> f64 {
        let p = self.params.p_contact;
        match self.params.perturbation {
            PerturbationModel::Constant => p,
            PerturbationModel::Accumulating => {
                (p * (1.0 + t_open as f64 / self.params.tau_acc)).min(0.6)
            }
        }
    }

    pub fn moved(&self, s: usize, a: usize) -> usize {
        let (x, y) = self.coords(s);
        let (w, h) = (self.params.width, self.params.height);
        let (nx, ny) = match a {
            UP => (x, (y + 1).min(h - 1)),
            RIGHT => ((x + 1).min(w - 1), y),
            DOWN => (x, y.saturating_sub(1)),
            _ => (x.saturating_sub(1), y),
        };
        self.index(nx, ny)
    }

    fn outcome(&self, next: usize, prob: f64) -> Outcome {
        let terminal = next == self.goal_state();
        Outcome { next, prob, reward: if terminal { 0.0 } else { -1.0 }, terminal }
    }
}

impl DiscreteModel for TwoPhaseGridEnv {
    fn name(&self) -> &'static str {
        "two_phase_grid"
    }
    fn params(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).expect("plain struct")
    }
    fn n_states(&self) -> usize {
        self.params.width * self.params.height
    }
    fn n_actions(&self) -> usize {
        4
    }
    fn start_state(&self) -> usize {
        self.index(self.start.0, self.start.1)
    }
    fn is_terminal(&self, s: usize) -> bool {
        s == self.goal_state()
    }
    fn outcomes(&self, s: usize, a: usize, t_open: usize) -> Vec<Outcome> {
        if self.region(s) == Region::Corridor {
            return vec![self.outcome(self.moved(s, a), 1.0)];
        }
        let p = self.perturbation_prob(t_open);
        let mut outs = vec![self.outcome(self.moved(s, a), 1.0 - p)];
        for other in (0..4).filter(|&b| b != a) {
            outs.push(self.outcome(self.moved(s, other), p / 3.0));
        }
        merge_outcomes(outs)
    }
    fn distance(&self, a: usize, b: usize) -> f64 {
        let (ax, ay) = self.coords(a);
        let (bx, by) = self.coords(b);
        (ax.abs_diff(bx) + ay.abs_diff(by)) as f64
    }
    /// Vertical first, then along the goal row.
    fn expert_action(&self, s: usize) -> usize {
        let (x, y) = self.coords(s);
        let (gx, gy) = self.goal;
        if y < gy {
            UP
        } else if y > gy {
            DOWN
        } else if x < gx {
            RIGHT
        } else {
            LEFT
        }
    }
    fn horizon_cap(&self) -> usize {
        4 * (self.params.width + self.params.height)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corridor_is_deterministic_and_contact_is_not() {
        let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
        let corridor = g.index(1, 1);
        assert_eq!(g.region(corridor), Region::Corridor);
        assert_eq!(g.outcomes(corridor, RIGHT, 3).len(), 1);
        let contact = g.index(4, 2);
        assert_eq!(g.region(contact), Region::Contact);
        let outs = g.outcomes(contact, UP, 0);
        assert_eq!(outs.len(), 4);
        let total: f64 = outs.iter().map(|o| o.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let stay = outs.iter().find(|o| o.next == g.index(4, 3)).unwrap();
        assert!((stay.prob - 0.45).abs() < 1e-12);
    }

    #[test]
    fn perturbation_grows_and_saturates() {
        let g = TwoPhaseGridEnv::new(GridParams { p_contact: 0.3, ..GridParams::default() }).unwrap();
        assert!((g.perturbation_prob(0) - 0.3).abs() < 1e-12);
        assert!((g.perturbation_prob(1) - 0.45).abs() < 1e-12);
        assert!((g.perturbation_prob(10) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn goal_must_be_in_contact_region() {
        let p = GridParams { goal: Some((0, 4)), ..GridParams::default() };
        assert!(TwoPhaseGridEnv::new(p).is_err());
        let p = GridParams { p_contact: 0.0, ..GridParams::default() };
        assert!(TwoPhaseGridEnv::new(p).is_err());
    }
}
