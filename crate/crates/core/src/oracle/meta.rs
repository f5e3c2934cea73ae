use nalgebra::{DMatrix, DVector};

use super::dp::{open_loop, Budget, DEFAULT_NODE_BUDGET};
use super::OracleTables;
use crate::envs::DiscreteModel;
use crate::error::{Error, Result};

/// Chunk policy over the meta-MDP whose actions are `(k, chunk)` pairs. The
/// chunk at scale `k` is always the best behavior-support chunk under `Q^{k,*}`.
#[derive(Clone, Debug, PartialEq)]
pub enum MetaPolicySpec {
    Fixed(usize),
    /// Per-state scale; `None` for terminal states.
    Adaptive(Vec<Option<usize>>),
}

impl MetaPolicySpec {
    pub fn oracle(tables: &OracleTables) -> Self {
        MetaPolicySpec::Adaptive(tables.k_dagger.clone())
    }
}

/// Exact value of a chunk policy: solves `V = r + M V`, where `M` holds the
/// discounted open-loop `k`-step transition probabilities.
pub fn evaluate_meta_policy(
    model: &dyn DiscreteModel,
    tables: &OracleTables,
    spec: &MetaPolicySpec,
    gamma: f64,
) -> Result<Vec<f64>> {
    let ns = model.n_states();
    let mut decision: Vec<Option<(usize, u64)>> = vec![None; ns];
    for (s, slot) in decision.iter_mut().enumerate() {
        if model.is_terminal(s) {
            continue;
        }
        let k = match spec {
            MetaPolicySpec::Fixed(k) => Some(*k),
            MetaPolicySpec::Adaptive(ks) => ks.get(s).copied().flatten(),
        };
        if let Some(k) = k {
            let ki = tables.scale_index(k)?;
            if let Some(c) = tables.best_chunk[s][ki] {
                *slot = Some((k, c));
            }
        }
    }
    let idx: Vec<usize> = (0..ns).filter(|&s| decision[s].is_some()).collect();
    let mut pos = vec![usize::MAX; ns];
    for (i, &s) in idx.iter().enumerate() {
        pos[s] = i;
    }
    let n = idx.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut r = DVector::<f64>::zeros(n);
    let mut budget = Budget::new(DEFAULT_NODE_BUDGET);
    for (i, &s) in idx.iter().enumerate() {
        let (k, c) = decision[s].expect("decision state");
        let actions: Vec<usize> = tables.chunk(c, k).actions().iter().map(|a| a.index().expect("discrete")).collect();
        let ol = open_loop(model, s, &actions, gamma, &mut budget)?;
        r[i] = ol.reward;
        let disc = gamma.powi(k as i32);
        let mut mass = 0.0;
        for (t, &p) in ol.alive.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            if pos[t] == usize::MAX {
                return Err(Error::EmptySupport(format!("state {t} reachable from {s} has no chunk choice")));
            }
            a[(i, pos[t])] -= disc * p;
            mass += disc * p;
        }
        if mass >= 1.0 - 1e-12 {
            return Err(Error::NotContraction(mass));
        }
    }
    let v = a.lu().solve(&r).ok_or(Error::NotContraction(1.0))?;
    let mut out = vec![0.0; ns];
    for (i, &s) in idx.iter().enumerate() {
        out[s] = v[i];
    }
    for s in 0..ns {
        if !model.is_terminal(s) && decision[s].is_none() {
            out[s] = f64::NAN;
        }
    }
    Ok(out)
}
