//! Trajectories, action chunks and chunked transitions.
//!
//! Everything downstream trains on [`ChunkedTransition`]s: a state, the next
//! `k` actions taken from the data, the discounted reward collected while
//! executing them, and the state reached `k` steps later.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRepr {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl StateRepr {
    pub fn index(&self) -> Option<usize> {
        match self {
            StateRepr::Discrete(i) => Some(*i),
            StateRepr::Continuous(_) => None,
        }
    }

    pub fn as_slice(&self) -> Option<&[f64]> {
        match self {
            StateRepr::Discrete(_) => None,
            StateRepr::Continuous(v) => Some(v),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            StateRepr::Discrete(_) => true,
            StateRepr::Continuous(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_slice(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Action::Discrete(_) => true,
            Action::Continuous(v) => v.iter().all(|x| x.is_finite()),
        }
    }
}

/// An ordered run of actions executed open-loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionChunk(pub Vec<Action>);

impl ActionChunk {
    pub fn new(actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::invalid("action chunk must hold at least one action"));
        }
        if !actions.iter().all(Action::is_finite) {
            return Err(Error::NonFinite("action chunk entry".into()));
        }
        Ok(ActionChunk(actions))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn actions(&self) -> &[Action] {
        &self.0
    }

    /// The first `k` actions. Panics if `k` exceeds the chunk length.
    pub fn prefix(&self, k: usize) -> ActionChunk {
        ActionChunk(self.0[..k].to_vec())
    }

    /// Mixed-radix index of a discrete chunk (first action most significant).
    pub fn discrete_index(&self, n_actions: usize) -> Option<usize> {
        let mut idx = 0usize;
        for a in &self.0 {
            idx = idx * n_actions + a.index()?;
        }
        Some(idx)
    }

    pub fn from_discrete_index(mut idx: usize, len: usize, n_actions: usize) -> ActionChunk {
        let mut acts = vec![Action::Discrete(0); len];
        for slot in acts.iter_mut().rev() {
            *slot = Action::Discrete(idx % n_actions);
            idx /= n_actions;
        }
        ActionChunk(acts)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateRepr>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// True when the episode ended in an absorbing terminal state. Episodes
    /// cut by a time limit keep `terminal = false`.
    pub terminal: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::Shape(format!(
                "trajectory has {} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        if self.rewards.len() != self.actions.len() {
            return Err(Error::Shape(format!(
                "trajectory has {} rewards for {} actions",
                self.rewards.len(),
                self.actions.len()
            )));
        }
        if self.rewards.iter().any(|r| r.is_nan()) {
            return Err(Error::NonFinite("reward".into()));
        }
        Ok(())
    }
}

/// A `k`-step slice of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkedTransition {
    pub trajectory: usize,
    pub start: usize,
    pub state: StateRepr,
    /// Always `k` long. Chunks cut short by termination are padded by
    /// repeating the last real action; see `valid_len`.
    pub chunk: ActionChunk,
    pub valid_len: usize,
    pub partial_return: f64,
    pub next_state: StateRepr,
    /// 0 iff the episode terminated inside the chunk.
    pub mask: f64,
}

/// Sorted, distinct chunk sizes; the largest is the critic horizon `h`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ScaleSet(Vec<usize>);

impl ScaleSet {
    pub fn new(mut scales: Vec<usize>) -> Result<Self> {
        scales.sort_unstable();
        scales.dedup();
        if scales.is_empty() {
            return Err(Error::invalid("scale set must be non-empty"));
        }
        if scales[0] == 0 {
            return Err(Error::invalid("chunk sizes must be positive"));
        }
        Ok(ScaleSet(scales))
    }

    /// `{k in universe : k <= h}`, with `h` always included.
    pub fn from_universe(universe: &[usize], h: usize) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("critic horizon must be positive"));
        }
        let mut ks: Vec<usize> = universe.iter().copied().filter(|&k| k > 0 && k <= h).collect();
        ks.push(h);
        ScaleSet::new(ks)
    }

    pub fn horizon(&self) -> usize {
        *self.0.last().expect("non-empty")
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    pub fn position(&self, k: usize) -> Option<usize> {
        self.0.binary_search(&k).ok()
    }

    /// Scales other than the horizon.
    pub fn partial(&self) -> &[usize] {
        &self.0[..self.0.len() - 1]
    }
}

impl TryFrom<Vec<usize>> for ScaleSet {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        ScaleSet::new(v)
    }
}

impl From<ScaleSet> for Vec<usize> {
    fn from(s: ScaleSet) -> Self {
        s.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: String,
    #[serde(default)]
    pub env_params: serde_json::Value,
    #[serde(default)]
    pub behavior: serde_json::Value,
    pub seed: u64,
    #[serde(default = "format_version")]
    pub version: u32,
}

fn format_version() -> u32 {
    1
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    header: DatasetMeta,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, trajectories: Vec<Trajectory>) -> Result<Self> {
        for t in &trajectories {
            t.validate()?;
        }
        Ok(Dataset { meta, trajectories })
    }

    pub fn n_transitions(&self) -> usize {
        self.trajectories.iter().map(Trajectory::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Line-delimited JSON: one header record, then one record per trajectory.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = HeaderRecord { header: self.meta.clone() };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.trajectories {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Format("dataset file is empty".into()))??;
        let header: HeaderRecord = serde_json::from_str(&first)
            .map_err(|e| Error::Format(format!("bad header record: {e}")))?;
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record {}: {e}", i + 1)))?;
            trajectories.push(t);
        }
        Dataset::new(header.header, trajectories)
    }
}

/// `sum_j gamma^j r_j`, accumulated left to right.
pub fn discounted_partial_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("rewards must be non-empty"));
    }
    let mut acc = 0.0;
    let mut disc = 1.0;
    for &r in rewards {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc)
}

#[derive(Clone, Debug, Default)]
pub struct ChunkExtraction {
    pub transitions: Vec<ChunkedTransition>,
    /// Set when `k` exceeded the length of every episode.
    pub k_exceeds_all_episodes: bool,
}

/// Start indices that yield a `k`-chunk for a trajectory: all full windows,
/// plus the tail starts when the episode terminated.
pub fn chunk_starts(traj: &Trajectory, k: usize, stride: usize) -> impl Iterator<Item = usize> {
    let t_len = traj.len();
    let end = if traj.terminal {
        t_len
    } else {
        (t_len + 1).saturating_sub(k)
    };
    (0..end).step_by(stride.max(1))
}

/// Build the `k`-step transition starting at `start`.
pub fn chunk_at(
    traj: &Trajectory,
    trajectory: usize,
    start: usize,
    k: usize,
    gamma: f64,
) -> Result<ChunkedTransition> {
    let t_len = traj.len();
    if start >= t_len {
        return Err(Error::invalid(format!("start {start} beyond trajectory length {t_len}")));
    }
    let stop = (start + k).min(t_len);
    let valid_len = stop - start;
    if valid_len < k && !traj.terminal {
        return Err(Error::invalid("chunk crosses a non-terminal episode end"));
    }
    let partial_return = discounted_partial_return(&traj.rewards[start..stop], gamma)?;
    let mut actions = traj.actions[start..stop].to_vec();
    let last = actions.last().cloned().expect("valid_len >= 1");
    actions.resize(k, last);
    let mask = if traj.terminal && start + k >= t_len { 0.0 } else { 1.0 };
    Ok(ChunkedTransition {
        trajectory,
        start,
        state: traj.states[start].clone(),
        chunk: ActionChunk(actions),
        valid_len,
        partial_return,
        next_state: traj.states[stop].clone(),
        mask,
    })
}

pub fn extract_chunks(dataset: &Dataset, k: usize, gamma: f64) -> Result<ChunkExtraction> {
    extract_chunks_strided(dataset, k, gamma, 1)
}

pub fn extract_chunks_strided(
    dataset: &Dataset,
    k: usize,
    gamma: f64,
    stride: usize,
) -> Result<ChunkExtraction> {
    if k == 0 {
        return Err(Error::invalid("chunk size must be >= 1"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma {gamma} outside (0, 1)")));
    }
    if dataset.trajectories.is_empty() {
        return Ok(ChunkExtraction::default());
    }
    if dataset.trajectories.iter().all(|t| t.len() < k) {
        log::warn!("chunk size {k} exceeds every episode length");
        return Ok(ChunkExtraction { transitions: Vec::new(), k_exceeds_all_episodes: true });
    }
    let mut transitions = Vec::new();
    for (ti, traj) in dataset.trajectories.iter().enumerate() {
        for start in chunk_starts(traj, k, stride) {
            transitions.push(chunk_at(traj, ti, start, k, gamma)?);
        }
    }
    Ok(ChunkExtraction { transitions, k_exceeds_all_episodes: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: Vec<f64>, terminal: bool) -> Trajectory {
        let n = rewards.len();
        Trajectory {
            states: (0..=n).map(StateRepr::Discrete).collect(),
            actions: vec![Action::Discrete(1); n],
            rewards,
            terminal,
        }
    }

    #[test]
    fn partial_return_examples() {
        assert_eq!(discounted_partial_return(&[0.0], 0.99).unwrap(), 0.0);
        let r = discounted_partial_return(&[-1.0, -1.0, -1.0], 0.99).unwrap();
        assert!((r + 2.9701).abs() < 1e-12);
        assert!(discounted_partial_return(&[f64::NAN], 0.9).is_err());
    }

    #[test]
    fn two_step_chunk_on_three_step_episode() {
        let ds = Dataset::new(DatasetMeta::default(), vec![traj(vec![-1.0, -1.0, 0.0], true)]).unwrap();
        let ex = extract_chunks(&ds, 2, 0.99).unwrap();
        let first = &ex.transitions[0];
        assert!((first.partial_return + 1.99).abs() < 1e-12);
        assert_eq!(first.next_state, StateRepr::Discrete(2));
        assert_eq!(first.mask, 1.0);
        // t=1 reaches the terminal state exactly, t=2 is a truncated tail.
        assert_eq!(ex.transitions.len(), 3);
        assert_eq!(ex.transitions[1].mask, 0.0);
        assert_eq!(ex.transitions[2].valid_len, 1);
        assert_eq!(ex.transitions[2].chunk.len(), 2);
    }

    #[test]
    fn unit_chunks_are_one_step_td() {
        let t = traj(vec![-1.0, -1.0, -1.0, 0.0], true);
        let ds = Dataset::new(DatasetMeta::default(), vec![t.clone()]).unwrap();
        let ex = extract_chunks(&ds, 1, 0.9).unwrap();
        assert_eq!(ex.transitions.len(), 4);
        for (tr, r) in ex.transitions.iter().zip(&t.rewards) {
            assert_eq!(tr.partial_return, *r);
        }
    }

    #[test]
    fn non_terminal_episode_emits_only_full_windows() {
        let ds = Dataset::new(DatasetMeta::default(), vec![traj(vec![-1.0; 6], false)]).unwrap();
        let ex = extract_chunks(&ds, 4, 0.9).unwrap();
        assert_eq!(ex.transitions.len(), 3);
        assert!(ex.transitions.iter().all(|t| t.mask == 1.0 && t.valid_len == 4));
    }

    #[test]
    fn oversized_k_flags_and_returns_empty() {
        let ds = Dataset::new(DatasetMeta::default(), vec![traj(vec![-1.0; 3], true)]).unwrap();
        let ex = extract_chunks(&ds, 10, 0.9).unwrap();
        assert!(ex.transitions.is_empty());
        assert!(ex.k_exceeds_all_episodes);
        let empty = extract_chunks(&Dataset::default(), 3, 0.9).unwrap();
        assert!(empty.transitions.is_empty() && !empty.k_exceeds_all_episodes);
    }

    #[test]
    fn scale_set_from_universe() {
        let k = ScaleSet::from_universe(&[1, 5, 10, 25], 10).unwrap();
        assert_eq!(k.as_slice(), &[1, 5, 10]);
        assert_eq!(k.horizon(), 10);
        assert_eq!(k.partial(), &[1, 5]);
        let odd = ScaleSet::from_universe(&[1, 5, 10, 25], 4).unwrap();
        assert_eq!(odd.as_slice(), &[1, 4]);
        assert!(ScaleSet::new(vec![]).is_err());
    }

    #[test]
    fn chunk_index_roundtrip() {
        let c = ActionChunk(vec![Action::Discrete(1), Action::Discrete(0), Action::Discrete(3)]);
        let idx = c.discrete_index(4).unwrap();
        assert_eq!(idx, 16 + 3);
        assert_eq!(ActionChunk::from_discrete_index(idx, 3, 4), c);
    }
}
