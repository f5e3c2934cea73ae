use crate::envs::{BehaviorPolicySpec, DiscreteModel};
use crate::error::Result;
use crate::mdp::{chunk_starts, Dataset};

use super::dp::{Budget, ChunkMap};

/// Exact closed-loop chunk distribution `P(a_{t:t+k} | s_t)` of a Markov
/// behavior policy. After termination the chunk is padded by repeating the
/// last action, matching chunk extraction.
pub fn behavior_chunks_exact(
    model: &dyn DiscreteModel,
    spec: &BehaviorPolicySpec,
    k: usize,
    budget: &mut Budget,
) -> Result<Vec<ChunkMap>> {
    let ns = model.n_states();
    let probs: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            if model.is_terminal(s) {
                Ok(vec![])
            } else {
                spec.discrete_probs(model, s)
            }
        })
        .collect::<Result<_>>()?;
    let mut out = vec![ChunkMap::new(); ns];
    for s in 0..ns {
        if model.is_terminal(s) {
            continue;
        }
        let mut alive = vec![0.0; ns];
        alive[s] = 1.0;
        let mut walk = Walk { model, probs: &probs, k, out: &mut out[s], budget };
        walk.go(0, 0, None, &alive, 0.0)?;
    }
    Ok(out)
}

struct Walk<'a> {
    model: &'a dyn DiscreteModel,
    probs: &'a [Vec<f64>],
    k: usize,
    out: &'a mut ChunkMap,
    budget: &'a mut Budget,
}

impl Walk<'_> {
    /// `alive[s]` is the joint probability of the prefix and being in `s`;
    /// `done` is the joint probability of the prefix with the episode over.
    fn go(&mut self, depth: usize, prefix: u64, last: Option<usize>, alive: &[f64], done: f64) -> Result<()> {
        if depth == self.k {
            let mass: f64 = alive.iter().sum::<f64>() + done;
            if mass > 0.0 {
                self.out.insert(prefix, mass);
            }
            return Ok(());
        }
        let na = self.model.n_actions();
        for a in 0..na {
            let mut next = vec![0.0; alive.len()];
            let mut next_done = if last == Some(a) { done } else { 0.0 };
            let mut nodes = 0;
            for (s, &p) in alive.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let pa = p * self.probs[s][a];
                if pa == 0.0 {
                    continue;
                }
                for o in self.model.outcomes(s, a, 0) {
                    nodes += 1;
                    if o.terminal {
                        next_done += pa * o.prob;
                    } else {
                        next[o.next] += pa * o.prob;
                    }
                }
            }
            self.budget.used += nodes;
            if self.budget.used > self.budget.limit {
                return Err(crate::error::Error::NodeBudget { budget: self.budget.limit });
            }
            if next_done + next.iter().sum::<f64>() > 0.0 {
                self.go(depth + 1, prefix * na as u64 + a as u64, Some(a), &next, next_done)?;
            }
        }
        Ok(())
    }
}

/// Empirical marginal `P_D(a_{t:t+k} | s_t)` over every chunk start the
/// extractor would emit.
pub fn empirical_chunks(model: &dyn DiscreteModel, dataset: &Dataset, k: usize) -> Vec<ChunkMap> {
    let na = model.n_actions();
    let mut counts = vec![ChunkMap::new(); model.n_states()];
    for traj in &dataset.trajectories {
        for t in chunk_starts(traj, k, 1) {
            let Some(s) = traj.states[t].index() else { continue };
            let stop = (t + k).min(traj.len());
            let mut idx = 0u64;
            let mut last = 0;
            for j in 0..k {
                if t + j < stop {
                    last = traj.actions[t + j].index().expect("discrete action");
                }
                idx = idx * na as u64 + last as u64;
            }
            *counts[s].entry(idx).or_insert(0.0) += 1.0;
        }
    }
    for row in &mut counts {
        let total: f64 = row.values().sum();
        for p in row.values_mut() {
            *p /= total;
        }
    }
    counts
}
