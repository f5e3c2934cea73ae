use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ActionSpace, Env, StepOutcome};
use crate::error::{Error, Result};
use crate::mdp::{Action, StateRepr};

fn d_goal() -> [f64; 2] {
    [0.7, 0.7]
}
fn d_start() -> [f64; 2] {
    [-0.7, -0.7]
}
fn d_goal_radius() -> f64 {
    0.1
}
fn d_contact_radius() -> f64 {
    0.35
}
fn d_drift() -> f64 {
    0.5
}
fn d_tau_acc() -> f64 {
    2.0
}
fn d_dt() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassParams {
    #[serde(default = "d_goal")]
    pub goal: [f64; 2],
    #[serde(default = "d_start")]
    pub start: [f64; 2],
    #[serde(default = "d_goal_radius")]
    pub goal_radius: f64,
    /// Outer radius of the annulus around the goal where drift noise acts.
    #[serde(default = "d_contact_radius")]
    pub contact_radius: f64,
    /// Std of the velocity drift per step inside the annulus at `t_open = 0`.
    #[serde(default = "d_drift")]
    pub drift_sigma: f64,
    #[serde(default = "d_tau_acc")]
    pub tau_acc: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
}

impl Default for PointMassParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// State `[x, y, vx, vy]` in the arena `[-1, 1]^2`, acceleration actions in `[-1, 1]^2`.
#[derive(Clone)]
pub struct PointMassEnv {
    pub params: PointMassParams,
    rng: ChaCha8Rng,
    state: [f64; 4],
    t: usize,
    over: bool,
}

pub const MAX_SPEED: f64 = 1.0;

impl PointMassEnv {
    pub fn new(params: PointMassParams) -> Result<Self> {
        if !(params.goal_radius > 0.0 && params.contact_radius > params.goal_radius) {
            return Err(Error::invalid("need 0 < goal_radius < contact_radius"));
        }
        if !(params.dt > 0.0 && params.drift_sigma >= 0.0 && params.tau_acc > 0.0) {
            return Err(Error::invalid("dt, tau_acc must be positive and drift_sigma non-negative"));
        }
        Ok(PointMassEnv { params, rng: crate::rng::rng(0), state: [0.0; 4], t: 0, over: true })
    }

    fn goal_distance(&self, s: &[f64]) -> f64 {
        let dx = s[0] - self.params.goal[0];
        let dy = s[1] - self.params.goal[1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn in_contact(&self, s: &[f64]) -> bool {
        let d = self.goal_distance(s);
        d > self.params.goal_radius && d <= self.params.contact_radius
    }

    pub fn is_goal(&self, s: &[f64]) -> bool {
        self.goal_distance(s) <= self.params.goal_radius
    }
}

impl Env for PointMassEnv {
    fn name(&self) -> &'static str {
        "point_mass"
    }
    fn params(&self) -> serde_json::Value {
        serde_json::to_value(&self.params).expect("plain struct")
    }
    fn action_space(&self) -> ActionSpace {
        ActionSpace::Box { dim: 2, low: -1.0, high: 1.0 }
    }
    fn feature_dim(&self) -> usize {
        4
    }
    fn features(&self, s: &StateRepr) -> Vec<f64> {
        s.as_slice().expect("continuous state").to_vec()
    }
    fn horizon_cap(&self) -> usize {
        200
    }
    fn reset(&mut self, seed: u64) -> StateRepr {
        self.rng = crate::rng::rng(seed);
        let jx: f64 = self.rng.random_range(-0.05..0.05);
        let jy: f64 = self.rng.random_range(-0.05..0.05);
        self.state = [self.params.start[0] + jx, self.params.start[1] + jy, 0.0, 0.0];
        self.t = 0;
        self.over = false;
        StateRepr::Continuous(self.state.to_vec())
    }
    fn step_open(&mut self, action: &Action, t_open: usize) -> Result<StepOutcome> {
        if self.over {
            return Err(Error::EpisodeOver);
        }
        let a = match action {
            Action::Continuous(v) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => {
                [v[0].clamp(-1.0, 1.0), v[1].clamp(-1.0, 1.0)]
            }
            other => return Err(Error::invalid(format!("action {other:?} outside action space"))),
        };
        let dt = self.params.dt;
        let mut s = self.state;
        let mut drift = [0.0; 2];
        if self.in_contact(&s) {
            let sigma = self.params.drift_sigma * (1.0 + t_open as f64 / self.params.tau_acc);
            for d in &mut drift {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *d = sigma * z;
            }
        }
        for i in 0..2 {
            s[2 + i] = (s[2 + i] + dt * a[i] + dt * drift[i]).clamp(-MAX_SPEED, MAX_SPEED);
            s[i] += dt * s[2 + i];
            if s[i].abs() > 1.0 {
                s[i] = s[i].clamp(-1.0, 1.0);
                s[2 + i] = 0.0;
            }
        }
        self.state = s;
        self.t += 1;
        let terminated = self.is_goal(&s);
        let truncated = !terminated && self.t >= self.horizon_cap();
        self.over = terminated || truncated;
        Ok(StepOutcome {
            state: StateRepr::Continuous(s.to_vec()),
            reward: if terminated { 0.0 } else { -1.0 },
            terminated,
            truncated,
        })
    }
    /// PD controller toward the goal.
    fn expert_action(&self, s: &StateRepr) -> Action {
        let s = s.as_slice().expect("continuous state");
        let a = (0..2)
            .map(|i| (3.0 * (self.params.goal[i] - s[i]) - 2.5 * s[2 + i]).clamp(-1.0, 1.0))
            .collect();
        Action::Continuous(a)
    }
    fn dt(&self) -> f64 {
        self.params.dt
    }
    fn boxed_clone(&self) -> Box<dyn Env> {
        Box::new(self.clone())
    }
}
