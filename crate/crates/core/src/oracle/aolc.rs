use super::behavior::empirical_chunks;
use super::dp::{open_loop, Budget, DEFAULT_NODE_BUDGET};
use crate::envs::DiscreteModel;
use crate::error::Result;
use crate::mdp::{chunk_starts, ActionChunk, Dataset};

#[derive(Clone, Debug, PartialEq)]
pub struct AolcReport {
    /// TV distance per state; `None` where the state had too few samples.
    pub tv: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
    pub max: f64,
    pub mean: f64,
}

/// Compares the empirical `P_D(s_{t+kappa(s)} | s_t = s)` with open-loop
/// replay of the empirical chunk marginal at the same scale.
pub fn aolc_tv_check(
    model: &dyn DiscreteModel,
    dataset: &Dataset,
    kappa_fn: &dyn Fn(usize) -> usize,
    min_count: usize,
) -> Result<AolcReport> {
    let ns = model.n_states();
    let na = model.n_actions();
    let mut tv = vec![None; ns];
    let mut skipped = Vec::new();
    let mut budget = Budget::new(DEFAULT_NODE_BUDGET);
    let mut marginals = std::collections::HashMap::new();
    for s in 0..ns {
        if model.is_terminal(s) {
            continue;
        }
        let k = kappa_fn(s);
        let mut ends = vec![0.0; ns];
        let mut count = 0usize;
        for traj in &dataset.trajectories {
            for t in chunk_starts(traj, k, 1) {
                if traj.states[t].index() != Some(s) {
                    continue;
                }
                let stop = (t + k).min(traj.len());
                ends[traj.states[stop].index().expect("discrete state")] += 1.0;
                count += 1;
            }
        }
        if count < min_count.max(1) {
            skipped.push(s);
            continue;
        }
        for e in &mut ends {
            *e /= count as f64;
        }
        let marginal = marginals.entry(k).or_insert_with(|| empirical_chunks(model, dataset, k));
        let mut replay = vec![0.0; ns];
        for (&c, &w) in &marginal[s] {
            let acts: Vec<usize> = ActionChunk::from_discrete_index(c as usize, k, na)
                .actions()
                .iter()
                .map(|a| a.index().expect("discrete"))
                .collect();
            let ol = open_loop(model, s, &acts, 0.5, &mut budget)?;
            for t in 0..ns {
                replay[t] += w * (ol.alive[t] + ol.terminated[t]);
            }
        }
        let d = 0.5 * ends.iter().zip(&replay).map(|(p, q)| (p - q).abs()).sum::<f64>();
        tv[s] = Some(d);
    }
    let vals: Vec<f64> = tv.iter().flatten().copied().collect();
    let max = vals.iter().copied().fold(0.0, f64::max);
    let mean = if vals.is_empty() { 0.0 } else { vals.iter().sum::<f64>() / vals.len() as f64 };
    Ok(AolcReport { tv, skipped, max, mean })
}
