use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::ChunkSampler;
use crate::envs::DiscreteModel;
use crate::error::{Error, Result};
use crate::mdp::{chunk_starts, ActionChunk, Dataset, StateRepr, Trajectory};
use crate::nn::Tensor;

#[derive(Clone, Debug, Default)]
struct StateTable {
    chunks: Vec<u64>,
    counts: Vec<u64>,
    slot: HashMap<u64, usize>,
    /// Running sums of `counts`, rebuilt lazily.
    cumulative: Vec<u64>,
}

impl StateTable {
    fn add(&mut self, idx: u64) {
        match self.slot.get(&idx) {
            Some(&i) => self.counts[i] += 1,
            None => {
                self.slot.insert(idx, self.chunks.len());
                self.chunks.push(idx);
                self.counts.push(1);
            }
        }
        self.cumulative.clear();
    }

    fn rebuild(&mut self) {
        let mut acc = 0;
        self.cumulative = self.counts.iter().map(|c| {
            acc += c;
            acc
        }).collect();
    }

    fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-state frequencies of observed `h`-step chunks. States without data
/// fall back to a uniform draw over the chunks of the nearest observed state.
#[derive(Clone, Debug)]
pub struct EmpiricalChunkSampler {
    pub h: usize,
    pub n_actions: usize,
    tables: Vec<StateTable>,
    /// `distance[a][b]` under the environment's metric.
    distance: Vec<Vec<f64>>,
}

impl EmpiricalChunkSampler {
    pub fn new(model: &dyn DiscreteModel, h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("chunk horizon must be >= 1"));
        }
        let n = model.n_states();
        let distance = (0..n).map(|a| (0..n).map(|b| model.distance(a, b)).collect()).collect();
        Ok(EmpiricalChunkSampler { h, n_actions: model.n_actions(), tables: vec![StateTable::default(); n], distance })
    }

    pub fn from_dataset(model: &dyn DiscreteModel, dataset: &Dataset, h: usize) -> Result<Self> {
        let mut s = Self::new(model, h)?;
        for t in &dataset.trajectories {
            s.add_trajectory(t)?;
        }
        Ok(s)
    }

    /// Count every `h`-chunk the extractor would emit from `traj`, tail chunks
    /// padded by repeating the last action.
    pub fn add_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        for t in chunk_starts(traj, self.h, 1) {
            let s = traj.states[t].index().ok_or_else(|| Error::NotDiscrete("empirical sampler".into()))?;
            if s >= self.tables.len() {
                return Err(Error::Shape(format!("state {s} outside table")));
            }
            let stop = (t + self.h).min(traj.len());
            let mut padded = traj.actions[t..stop].to_vec();
            padded.resize(self.h, padded.last().cloned().expect("non-empty window"));
            let idx = ActionChunk(padded)
                .discrete_index(self.n_actions)
                .ok_or_else(|| Error::NotDiscrete("empirical sampler".into()))?;
            self.tables[s].add(idx as u64);
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.tables.iter().all(|t| t.chunks.is_empty())
    }

    /// Observed chunk frequencies at `s` (empty when unobserved).
    pub fn frequencies(&self, s: usize) -> BTreeMap<u64, f64> {
        let t = &self.tables[s];
        let total = t.total() as f64;
        t.chunks.iter().zip(&t.counts).map(|(&c, &n)| (c, n as f64 / total)).collect()
    }

    pub fn nearest_observed(&self, s: usize) -> Option<usize> {
        (0..self.tables.len())
            .filter(|&o| !self.tables[o].chunks.is_empty())
            .min_by(|&a, &b| self.distance[s][a].total_cmp(&self.distance[s][b]).then(a.cmp(&b)))
    }

    pub fn sample_index(&self, s: usize, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<u64>> {
        if s >= self.tables.len() {
            return Err(Error::Shape(format!("state {s} outside table")));
        }
        if n == 0 {
            return Err(Error::invalid("N must be >= 1"));
        }
        let t = &self.tables[s];
        if !t.chunks.is_empty() {
            let cum: std::borrow::Cow<'_, [u64]> = if t.cumulative.len() == t.counts.len() {
                std::borrow::Cow::Borrowed(&t.cumulative)
            } else {
                let mut c = t.clone();
                c.rebuild();
                std::borrow::Cow::Owned(c.cumulative)
            };
            let total = *cum.last().expect("non-empty");
            return Ok((0..n)
                .map(|_| {
                    let u = rng.random_range(0..total);
                    t.chunks[cum.partition_point(|&c| c <= u)]
                })
                .collect());
        }
        let o = self.nearest_observed(s).ok_or_else(|| Error::EmptySupport("empirical sampler has no data".into()))?;
        let chunks = &self.tables[o].chunks;
        Ok((0..n).map(|_| chunks[rng.random_range(0..chunks.len())]).collect())
    }

    /// Counts as tensors `sampler.{state,chunk,count}`, sorted by key.
    pub fn tensors(&self) -> Vec<Tensor> {
        let mut rows: Vec<(usize, u64, u64)> = Vec::new();
        for (s, t) in self.tables.iter().enumerate() {
            let mut entries: Vec<(u64, u64)> = t.chunks.iter().copied().zip(t.counts.iter().copied()).collect();
            entries.sort_unstable();
            rows.extend(entries.into_iter().map(|(c, n)| (s, c, n)));
        }
        let t = |name: &str, data: Vec<f64>| Tensor { name: format!("sampler.{name}"), shape: vec![data.len()], data };
        vec![
            t("state", rows.iter().map(|r| r.0 as f64).collect()),
            t("chunk", rows.iter().map(|r| r.1 as f64).collect()),
            t("count", rows.iter().map(|r| r.2 as f64).collect()),
        ]
    }

    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let get = |name: &str| -> Result<&[f64]> {
            let full = format!("sampler.{name}");
            tensors
                .iter()
                .find(|t| t.name == full)
                .map(|t| t.data.as_slice())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {full}")))
        };
        let (s, c, n) = (get("state")?, get("chunk")?, get("count")?);
        if c.len() != s.len() || n.len() != s.len() {
            return Err(Error::Format("sampler tensors are ragged".into()));
        }
        let mut tables = vec![StateTable::default(); self.tables.len()];
        for ((&s, &c), &n) in s.iter().zip(c).zip(n) {
            let table = tables.get_mut(s as usize).ok_or_else(|| Error::Format(format!("sampler state {s} out of range")))?;
            table.add(c as u64);
            let last = table.counts.len() - 1;
            table.counts[last] = n as u64;
        }
        self.tables = tables;
        self.finalize();
        Ok(())
    }

    /// Refresh cached running sums after additions; sampling works without it
    /// but is slower.
    pub fn finalize(&mut self) {
        for t in &mut self.tables {
            if t.cumulative.len() != t.counts.len() {
                t.rebuild();
            }
        }
    }
}

impl ChunkSampler for EmpiricalChunkSampler {
    fn horizon(&self) -> usize {
        self.h
    }

    fn sample(&self, state: &StateRepr, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<ActionChunk>> {
        let s = state.index().ok_or_else(|| Error::NotDiscrete("empirical sampler".into()))?;
        Ok(self
            .sample_index(s, n, rng)?
            .into_iter()
            .map(|i| ActionChunk::from_discrete_index(i as usize, self.h, self.n_actions))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{ChainEnv, ChainParams};
    use crate::mdp::Action;

    fn model() -> ChainEnv {
        ChainEnv::new(ChainParams { length: 6, p_slip: 0.0 }).unwrap()
    }

    fn traj(actions: &[usize]) -> Trajectory {
        Trajectory {
            states: (0..=actions.len()).map(|_| StateRepr::Discrete(1)).collect(),
            actions: actions.iter().map(|&a| Action::Discrete(a)).collect(),
            rewards: vec![-1.0; actions.len()],
            terminal: false,
        }
    }

    #[test]
    fn single_chunk_repeats() {
        let mut s = EmpiricalChunkSampler::new(&model(), 2).unwrap();
        s.add_trajectory(&traj(&[1, 0])).unwrap();
        let out = s.sample_index(1, 5, &mut crate::rng::rng(0)).unwrap();
        assert_eq!(out, vec![2; 5]);
    }

    #[test]
    fn tensors_roundtrip() {
        let mut s = EmpiricalChunkSampler::new(&model(), 1).unwrap();
        s.add_trajectory(&traj(&[1, 0, 1, 1])).unwrap();
        let mut back = EmpiricalChunkSampler::new(&model(), 1).unwrap();
        back.load_tensors(&s.tensors()).unwrap();
        assert_eq!(back.frequencies(1), s.frequencies(1));
        assert_eq!(back.tensors(), s.tensors());
    }

    #[test]
    fn unseen_state_uses_nearest() {
        let mut s = EmpiricalChunkSampler::new(&model(), 1).unwrap();
        s.add_trajectory(&traj(&[1, 0])).unwrap();
        assert_eq!(s.nearest_observed(4), Some(1));
        let out = s.sample_index(4, 200, &mut crate::rng::rng(0)).unwrap();
        assert!(out.contains(&0) && out.contains(&1));
    }

    #[test]
    fn empty_table_is_an_error() {
        let s = EmpiricalChunkSampler::new(&model(), 1).unwrap();
        assert!(matches!(s.sample_index(0, 1, &mut crate::rng::rng(0)), Err(Error::EmptySupport(_))));
    }
}
