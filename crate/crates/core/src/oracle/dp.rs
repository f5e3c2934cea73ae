use std::collections::{BTreeMap, HashSet};

use crate::envs::DiscreteModel;
use crate::error::{Error, Result};

/// Value per chunk index, ordered so iteration and argmax are deterministic.
pub type ChunkMap = BTreeMap<u64, f64>;

pub const DEFAULT_NODE_BUDGET: usize = 50_000_000;

#[derive(Clone, Debug)]
pub struct ValueIteration {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub residual: f64,
    pub sweeps: usize,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} outside (0, 1)")));
    }
    Ok(())
}

fn backup(model: &dyn DiscreteModel, v: &[f64], s: usize, a: usize, gamma: f64) -> f64 {
    model
        .outcomes(s, a, 0)
        .iter()
        .map(|o| o.prob * (o.reward + if o.terminal { 0.0 } else { gamma * v[o.next] }))
        .sum()
}

/// Synchronous value iteration until the sup-norm Bellman residual is below `tol`.
pub fn value_iteration(model: &dyn DiscreteModel, gamma: f64, tol: f64) -> Result<ValueIteration> {
    check_gamma(gamma)?;
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut v = vec![0.0; ns];
    let mut sweeps = 0;
    loop {
        let mut next = vec![0.0; ns];
        let mut residual: f64 = 0.0;
        for s in 0..ns {
            if model.is_terminal(s) {
                continue;
            }
            let best = (0..na).map(|a| backup(model, &v, s, a, gamma)).fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((best - v[s]).abs());
            next[s] = best;
        }
        v = next;
        sweeps += 1;
        if residual <= tol {
            break;
        }
        if sweeps > 1_000_000 {
            return Err(Error::Diverged { step: sweeps, what: "value iteration".into() });
        }
    }
    let q: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            if model.is_terminal(s) {
                vec![0.0; na]
            } else {
                (0..na).map(|a| backup(model, &v, s, a, gamma)).collect()
            }
        })
        .collect();
    let residual = (0..ns)
        .filter(|&s| !model.is_terminal(s))
        .map(|s| (q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max) - v[s]).abs())
        .fold(0.0, f64::max);
    Ok(ValueIteration { v, q, residual, sweeps })
}

/// Result of executing a fixed action sequence open-loop from one state.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenLoop {
    /// `E[sum_j gamma^j r_j]` over the executed steps.
    pub reward: f64,
    /// Probability of being in each non-terminal state after all steps.
    pub alive: Vec<f64>,
    /// Probability of having terminated in each terminal state.
    pub terminated: Vec<f64>,
}

pub struct Budget {
    pub limit: usize,
    pub used: usize,
}

impl Budget {
    pub fn new(limit: usize) -> Self {
        Budget { limit, used: 0 }
    }

    fn spend(&mut self, n: usize) -> Result<()> {
        self.used += n;
        if self.used > self.limit {
            return Err(Error::NodeBudget { budget: self.limit });
        }
        Ok(())
    }
}

/// Push an alive-state distribution through one open-loop action.
fn advance(
    model: &dyn DiscreteModel,
    dist: &[f64],
    a: usize,
    t_open: usize,
    disc: f64,
    budget: &mut Budget,
) -> Result<(Vec<f64>, Vec<(usize, f64)>, f64)> {
    let mut next = vec![0.0; dist.len()];
    let mut ended = Vec::new();
    let mut reward = 0.0;
    let mut nodes = 0;
    for (s, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for o in model.outcomes(s, a, t_open) {
            nodes += 1;
            let m = p * o.prob;
            reward += disc * m * o.reward;
            if o.terminal {
                ended.push((o.next, m));
            } else {
                next[o.next] += m;
            }
        }
    }
    budget.spend(nodes)?;
    Ok((next, ended, reward))
}

pub fn open_loop(
    model: &dyn DiscreteModel,
    s: usize,
    actions: &[usize],
    gamma: f64,
    budget: &mut Budget,
) -> Result<OpenLoop> {
    let ns = model.n_states();
    let mut dist = vec![0.0; ns];
    let mut terminated = vec![0.0; ns];
    if model.is_terminal(s) {
        terminated[s] = 1.0;
        return Ok(OpenLoop { reward: 0.0, alive: dist, terminated });
    }
    dist[s] = 1.0;
    let mut reward = 0.0;
    let mut disc = 1.0;
    for (j, &a) in actions.iter().enumerate() {
        let (next, ended, r) = advance(model, &dist, a, j, disc, budget)?;
        reward += r;
        for (t, m) in ended {
            terminated[t] += m;
        }
        dist = next;
        disc *= gamma;
    }
    Ok(OpenLoop { reward, alive: dist, terminated })
}

/// `Q^{k,*}(s, c) = E[sum_{j<k} gamma^j r_j] + gamma^k E[V*(s_k)]` for one chunk.
pub fn chunk_value(
    model: &dyn DiscreteModel,
    v_star: &[f64],
    s: usize,
    actions: &[usize],
    gamma: f64,
    budget: &mut Budget,
) -> Result<f64> {
    let ol = open_loop(model, s, actions, gamma, budget)?;
    let tail: f64 = ol.alive.iter().zip(v_star).map(|(p, v)| p * v).sum();
    Ok(ol.reward + gamma.powi(actions.len() as i32) * tail)
}

fn pow_u64(base: usize, exp: usize) -> u64 {
    (base as u64).pow(exp as u32)
}

/// Chunk values at every non-terminal state. With `support = None` every one
/// of the `n_actions^k` chunks is enumerated; otherwise only chunks present in
/// `support[s]`. Prefix distributions are shared across chunks.
pub fn k_step_chunk_values(
    model: &dyn DiscreteModel,
    v_star: &[f64],
    k: usize,
    gamma: f64,
    support: Option<&[ChunkMap]>,
    budget: &mut Budget,
) -> Result<Vec<ChunkMap>> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    check_gamma(gamma)?;
    let (ns, na) = (model.n_states(), model.n_actions());
    let mut out = vec![ChunkMap::new(); ns];
    for s in 0..ns {
        if model.is_terminal(s) {
            continue;
        }
        let prefixes: Option<HashSet<(usize, u64)>> = support.map(|sup| {
            let mut set = HashSet::new();
            for &c in sup[s].keys() {
                for j in 1..=k {
                    set.insert((j, c / pow_u64(na, k - j)));
                }
            }
            set
        });
        if matches!(&prefixes, Some(p) if p.is_empty()) {
            continue;
        }
        let mut dist = vec![0.0; ns];
        dist[s] = 1.0;
        let mut ctx = Dfs { model, v_star, k, gamma, na, prefixes: prefixes.as_ref(), out: &mut out[s], budget };
        ctx.go(0, 0, &dist, 0.0, 1.0)?;
    }
    Ok(out)
}

struct Dfs<'a> {
    model: &'a dyn DiscreteModel,
    v_star: &'a [f64],
    k: usize,
    gamma: f64,
    na: usize,
    prefixes: Option<&'a HashSet<(usize, u64)>>,
    out: &'a mut ChunkMap,
    budget: &'a mut Budget,
}

impl Dfs<'_> {
    fn go(&mut self, depth: usize, prefix: u64, dist: &[f64], acc: f64, disc: f64) -> Result<()> {
        if depth == self.k {
            let tail: f64 = dist.iter().zip(self.v_star).map(|(p, v)| p * v).sum();
            self.out.insert(prefix, acc + disc * tail);
            return Ok(());
        }
        for a in 0..self.na {
            let child = prefix * self.na as u64 + a as u64;
            if let Some(p) = self.prefixes {
                if !p.contains(&(depth + 1, child)) {
                    continue;
                }
            }
            let (next, _, r) = advance(self.model, dist, a, depth, disc, self.budget)?;
            self.go(depth + 1, child, &next, acc + r, disc * self.gamma)?;
        }
        Ok(())
    }
}
