//! Exact dynamic programming on finite environments.

mod aolc;
mod behavior;
mod dp;
mod expectile;
mod meta;

pub use aolc::{aolc_tv_check, AolcReport};
pub use behavior::{behavior_chunks_exact, empirical_chunks};
pub use dp::{
    chunk_value, k_step_chunk_values, open_loop, value_iteration, Budget, ChunkMap, OpenLoop,
    ValueIteration, DEFAULT_NODE_BUDGET,
};
pub use expectile::{expectile, expectile_objective};
pub use meta::{evaluate_meta_policy, MetaPolicySpec};

use serde::Serialize;

use crate::envs::{BehaviorPolicySpec, DiscreteModel};
use crate::error::{Error, Result};
use crate::mdp::{ActionChunk, Dataset, ScaleSet};

pub const EXPECTILE_TOL: f64 = 1e-10;
/// Advantages closer than this are treated as tied when picking `k_dagger`.
pub const TIE_TOL: f64 = 1e-12;

/// Where the behavior chunk distribution comes from.
#[derive(Clone, Copy, Debug)]
pub enum BehaviorSource<'a> {
    /// Exact enumeration of a Markov behavior policy.
    Exact(&'a BehaviorPolicySpec),
    /// Empirical marginal of a dataset.
    Empirical(&'a Dataset),
}

/// Pick the scale with the largest best-advantage. Ties (within [`TIE_TOL`])
/// go to the larger scale. Returns the scale index and the separation gap;
/// the gap is `+inf` when there is a single scale.
pub fn select_scale(a_bar: &[f64]) -> (usize, f64) {
    let best = a_bar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_TOL * (1.0 + best.abs());
    let pick = (0..a_bar.len()).rev().find(|&i| a_bar[i] >= best - tol).expect("non-empty");
    let runner_up = a_bar
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pick)
        .map(|(_, &a)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    let delta = if runner_up == f64::NEG_INFINITY { f64::INFINITY } else { (a_bar[pick] - runner_up).max(0.0) };
    (pick, delta)
}

#[derive(Clone, Debug)]
pub struct OracleTables {
    pub gamma: f64,
    pub kappa: f64,
    pub scales: ScaleSet,
    pub n_actions: usize,
    pub v_star: Vec<f64>,
    pub q_star: Vec<Vec<f64>>,
    /// `q_k[ki][s]`: chunk values over the behavior support, scale `scales[ki]`.
    pub q_k: Vec<Vec<ChunkMap>>,
    /// `pi_beta[ki][s]`: behavior chunk probabilities.
    pub pi_beta: Vec<Vec<ChunkMap>>,
    /// `v_k_beta[s][ki]`; NaN where the state has no support.
    pub v_k_beta: Vec<Vec<f64>>,
    /// `a_bar[s][ki]`: best discount-normalized advantage over the support.
    pub a_bar: Vec<Vec<f64>>,
    /// `best_chunk[s][ki]`: chunk index attaining `a_bar`.
    pub best_chunk: Vec<Vec<Option<u64>>>,
    pub delta: Vec<f64>,
    pub k_dagger: Vec<Option<usize>>,
}

impl OracleTables {
    pub fn compute(
        model: &dyn DiscreteModel,
        gamma: f64,
        scales: &ScaleSet,
        kappa: f64,
        behavior: BehaviorSource<'_>,
        node_budget: usize,
    ) -> Result<Self> {
        let vi = value_iteration(model, gamma, 1e-12)?;
        let mut budget = Budget::new(node_budget);
        let mut q_k = Vec::new();
        let mut pi_beta = Vec::new();
        for &k in scales.as_slice() {
            let pb = match behavior {
                BehaviorSource::Exact(spec) => behavior_chunks_exact(model, spec, k, &mut budget)?,
                BehaviorSource::Empirical(ds) => empirical_chunks(model, ds, k),
            };
            q_k.push(k_step_chunk_values(model, &vi.v, k, gamma, Some(&pb), &mut budget)?);
            pi_beta.push(pb);
        }
        Self::from_parts(model, gamma, kappa, scales.clone(), vi, q_k, pi_beta)
    }

    /// Assemble baselines, advantages and the oracle selector from chunk tables.
    pub fn from_parts(
        model: &dyn DiscreteModel,
        gamma: f64,
        kappa: f64,
        scales: ScaleSet,
        vi: ValueIteration,
        q_k: Vec<Vec<ChunkMap>>,
        pi_beta: Vec<Vec<ChunkMap>>,
    ) -> Result<Self> {
        let ns = model.n_states();
        let nk = scales.len();
        let mut v_k_beta = vec![vec![f64::NAN; nk]; ns];
        let mut a_bar = vec![vec![f64::NAN; nk]; ns];
        let mut best_chunk = vec![vec![None; nk]; ns];
        let mut delta = vec![f64::NAN; ns];
        let mut k_dagger = vec![None; ns];
        for s in 0..ns {
            if model.is_terminal(s) || scales.as_slice().iter().enumerate().any(|(ki, _)| pi_beta[ki][s].is_empty()) {
                continue;
            }
            for (ki, &k) in scales.as_slice().iter().enumerate() {
                let (vals, ws): (Vec<f64>, Vec<f64>) =
                    pi_beta[ki][s].iter().map(|(c, &w)| (q_k[ki][s][c], w)).unzip();
                let base = expectile(&vals, &ws, kappa, EXPECTILE_TOL)?;
                v_k_beta[s][ki] = base;
                let mut best: Option<(u64, f64)> = None;
                for &c in pi_beta[ki][s].keys() {
                    let adv = (q_k[ki][s][&c] - base) / gamma.powi(k as i32);
                    if best.is_none_or(|(_, b)| adv > b) {
                        best = Some((c, adv));
                    }
                }
                let (c, adv) = best.expect("non-empty support");
                a_bar[s][ki] = adv;
                best_chunk[s][ki] = Some(c);
            }
            let (pick, gap) = select_scale(&a_bar[s]);
            k_dagger[s] = Some(scales.as_slice()[pick]);
            delta[s] = gap;
        }
        Ok(OracleTables {
            gamma,
            kappa,
            scales,
            n_actions: model.n_actions(),
            v_star: vi.v,
            q_star: vi.q,
            q_k,
            pi_beta,
            v_k_beta,
            a_bar,
            best_chunk,
            delta,
            k_dagger,
        })
    }

    pub fn scale_index(&self, k: usize) -> Result<usize> {
        self.scales.position(k).ok_or_else(|| Error::invalid(format!("scale {k} not in {:?}", self.scales.as_slice())))
    }

    pub fn chunk(&self, idx: u64, k: usize) -> ActionChunk {
        ActionChunk::from_discrete_index(idx as usize, k, self.n_actions)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(OracleJson::from(self)).expect("plain data")
    }
}

fn num(x: f64) -> serde_json::Value {
    if x.is_nan() {
        serde_json::Value::Null
    } else if x == f64::INFINITY {
        serde_json::Value::String("inf".into())
    } else {
        serde_json::json!(x)
    }
}

fn chunk_key(idx: u64, k: usize, na: usize) -> String {
    ActionChunk::from_discrete_index(idx as usize, k, na)
        .actions()
        .iter()
        .map(|a| a.index().expect("discrete").to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Serialize)]
struct OracleJson {
    gamma: f64,
    kappa: f64,
    scales: Vec<usize>,
    v_star: Vec<f64>,
    q_star: Vec<Vec<f64>>,
    q_k: Vec<Vec<std::collections::BTreeMap<String, f64>>>,
    pi_beta: Vec<Vec<std::collections::BTreeMap<String, f64>>>,
    v_k_beta: Vec<Vec<serde_json::Value>>,
    a_bar: Vec<Vec<serde_json::Value>>,
    delta: Vec<serde_json::Value>,
    k_dagger: Vec<Option<usize>>,
}

impl From<&OracleTables> for OracleJson {
    fn from(t: &OracleTables) -> Self {
        let ks = t.scales.as_slice();
        let keyed = |tables: &Vec<Vec<ChunkMap>>| {
            tables
                .iter()
                .zip(ks)
                .map(|(rows, &k)| {
                    rows.iter()
                        .map(|m| m.iter().map(|(&c, &v)| (chunk_key(c, k, t.n_actions), v)).collect())
                        .collect()
                })
                .collect()
        };
        OracleJson {
            gamma: t.gamma,
            kappa: t.kappa,
            scales: ks.to_vec(),
            v_star: t.v_star.clone(),
            q_star: t.q_star.clone(),
            q_k: keyed(&t.q_k),
            pi_beta: keyed(&t.pi_beta),
            v_k_beta: t.v_k_beta.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect(),
            a_bar: t.a_bar.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect(),
            delta: t.delta.iter().map(|&x| num(x)).collect(),
            k_dagger: t.k_dagger.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_scale_ties_go_large() {
        assert_eq!(select_scale(&[1.0, 1.0, 1.0]), (2, 0.0));
        assert_eq!(select_scale(&[2.0, 1.0, 0.5]), (0, 1.0));
        let (i, d) = select_scale(&[0.3]);
        assert_eq!(i, 0);
        assert!(d.is_infinite());
    }
}
