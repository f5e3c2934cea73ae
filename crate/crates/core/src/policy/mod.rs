//! Behavior policies that propose `h`-step candidate chunks.

mod empirical;
mod flow;

pub use empirical::EmpiricalChunkSampler;
pub use flow::{FlowConfig, FlowPolicy, FlowSample};

use crate::error::Result;
use crate::mdp::{ActionChunk, StateRepr};

pub trait ChunkSampler {
    fn horizon(&self) -> usize;
    fn sample(&self, state: &StateRepr, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<ActionChunk>>;
}

/// Either behavior model, as held by the trainer.
#[derive(Clone, Debug)]
pub enum BehaviorModel {
    Flow(FlowPolicy),
    Empirical(EmpiricalChunkSampler),
}

impl ChunkSampler for BehaviorModel {
    fn horizon(&self) -> usize {
        match self {
            BehaviorModel::Flow(p) => p.horizon(),
            BehaviorModel::Empirical(p) => p.horizon(),
        }
    }

    fn sample(&self, state: &StateRepr, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<ActionChunk>> {
        match self {
            BehaviorModel::Flow(p) => p.sample(state, n, rng),
            BehaviorModel::Empirical(p) => p.sample(state, n, rng),
        }
    }
}
