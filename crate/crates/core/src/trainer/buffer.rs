use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::mdp::{chunk_at, chunk_starts, ChunkedTransition, Dataset, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Offline,
    Online,
}

/// One sampled `h`-window: a trajectory and a start index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub source: Provenance,
    pub trajectory: usize,
    pub start: usize,
}

#[derive(Clone, Debug, Default)]
struct Pool {
    trajectories: VecDeque<Trajectory>,
    /// Running window counts, one per trajectory.
    cumulative: Vec<usize>,
    transitions: usize,
}

impl Pool {
    fn rebuild(&mut self, h: usize) {
        let mut acc = 0;
        self.cumulative = self
            .trajectories
            .iter()
            .map(|t| {
                acc += chunk_starts(t, h, 1).count();
                acc
            })
            .collect();
    }

    fn windows(&self) -> usize {
        self.cumulative.last().copied().unwrap_or(0)
    }

    fn locate(&self, u: usize, h: usize) -> (usize, usize) {
        let ti = self.cumulative.partition_point(|&c| c <= u);
        let before = if ti == 0 { 0 } else { self.cumulative[ti - 1] };
        let start = chunk_starts(&self.trajectories[ti], h, 1).nth(u - before).expect("window in range");
        (ti, start)
    }
}

/// Trajectory store with a permanent offline pool and a FIFO online pool.
/// Batches draw `h`-windows uniformly within each pool.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    pub h: usize,
    /// Bound on online transitions.
    pub capacity: usize,
    /// Offline share of each batch once online data exists.
    pub mix_ratio: f64,
    offline: Pool,
    online: Pool,
}

impl ReplayBuffer {
    pub fn new(h: usize, capacity: usize, mix_ratio: f64) -> Result<Self> {
        if h == 0 {
            return Err(Error::invalid("window length must be >= 1"));
        }
        if !(0.0..=1.0).contains(&mix_ratio) {
            return Err(Error::invalid(format!("mix ratio {mix_ratio} outside [0, 1]")));
        }
        Ok(ReplayBuffer { h, capacity, mix_ratio, offline: Pool::default(), online: Pool::default() })
    }

    /// `R <- D`.
    pub fn from_dataset(dataset: &Dataset, h: usize, capacity: usize, mix_ratio: f64) -> Result<Self> {
        let mut b = Self::new(h, capacity, mix_ratio)?;
        for t in &dataset.trajectories {
            t.validate()?;
            b.offline.transitions += t.len();
            b.offline.trajectories.push_back(t.clone());
        }
        b.offline.rebuild(h);
        Ok(b)
    }

    /// Append an online trajectory, evicting the oldest online ones beyond capacity.
    pub fn push_online(&mut self, traj: Trajectory) -> Result<()> {
        traj.validate()?;
        self.online.transitions += traj.len();
        self.online.trajectories.push_back(traj);
        while self.online.transitions > self.capacity && self.online.trajectories.len() > 1 {
            let old = self.online.trajectories.pop_front().expect("non-empty");
            self.online.transitions -= old.len();
        }
        self.online.rebuild(self.h);
        Ok(())
    }

    pub fn offline_transitions(&self) -> usize {
        self.offline.transitions
    }

    pub fn online_transitions(&self) -> usize {
        self.online.transitions
    }

    pub fn online_trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.online.trajectories.iter()
    }

    fn pool(&self, p: Provenance) -> &Pool {
        match p {
            Provenance::Offline => &self.offline,
            Provenance::Online => &self.online,
        }
    }

    pub fn trajectory(&self, w: &Window) -> &Trajectory {
        &self.pool(w.source).trajectories[w.trajectory]
    }

    /// Offline and online shares of a batch of `n`.
    pub fn split(&self, n: usize) -> (usize, usize) {
        match (self.offline.windows() > 0, self.online.windows() > 0) {
            (true, true) => {
                let off = (self.mix_ratio * n as f64).round() as usize;
                (off, n - off)
            }
            (true, false) => (n, 0),
            (false, true) => (0, n),
            (false, false) => (0, 0),
        }
    }

    /// `None` when neither pool holds a full window.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<Window>> {
        let (off, on) = self.split(n);
        if off + on == 0 {
            return None;
        }
        let mut out = Vec::with_capacity(n);
        for (source, count) in [(Provenance::Offline, off), (Provenance::Online, on)] {
            let pool = self.pool(source);
            for _ in 0..count {
                let (trajectory, start) = pool.locate(rng.random_range(0..pool.windows()), self.h);
                out.push(Window { source, trajectory, start });
            }
        }
        Some(out)
    }

    /// The `k`-prefix of a sampled window.
    pub fn chunk(&self, w: &Window, k: usize, gamma: f64) -> Result<ChunkedTransition> {
        chunk_at(self.trajectory(w), w.trajectory, w.start, k, gamma)
    }
}
