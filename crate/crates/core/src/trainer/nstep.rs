use rand_chacha::ChaCha8Rng;

use super::{behavior_for, Decision, Policy, ReplayBuffer, TrainConfig};
use crate::critics::{Encoder, Ensemble, Fit, Row};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionChunk, Dataset, StateRepr};
use crate::policy::{BehaviorModel, ChunkSampler};
use crate::rng;

/// Single-action critic trained with the uncorrected `n`-step return.
/// Acts by best-of-N over the first actions of behavior chunks.
#[derive(Clone, Debug)]
pub struct NStepAgent {
    pub n: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    pub q: Ensemble,
    pub behavior: BehaviorModel,
}

impl NStepAgent {
    fn first_actions(&self, state: &StateRepr, rng: &mut dyn rand::RngCore) -> Result<Vec<ActionChunk>> {
        Ok(self.behavior.sample(state, self.n_candidates, rng)?.into_iter().map(|c| c.prefix(1)).collect())
    }

    /// `max_i Q(s, a_i)` over behavior first actions, live critic mean.
    pub fn value(&self, state: &StateRepr, rng: &mut dyn rand::RngCore) -> Result<f64> {
        let cands = self.first_actions(state, rng)?;
        let rows: Vec<Row<'_>> = cands.iter().map(|c| Row::new(state, c.actions())).collect();
        Ok(self.q.predict_mean(&rows, false)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn q_value(&self, state: &StateRepr, a: &Action) -> Result<f64> {
        Ok(self.q.predict_mean(&[Row::new(state, std::slice::from_ref(a))], false)?[0])
    }
}

impl Policy for NStepAgent {
    fn scales(&self) -> Vec<usize> {
        vec![1]
    }

    fn decide(&self, state: &StateRepr, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let cands = self.first_actions(state, rng)?;
        let rows: Vec<Row<'_>> = cands.iter().map(|c| Row::new(state, c.actions())).collect();
        let q = self.q.predict_mean(&rows, false)?;
        let mut best = 0;
        for (i, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = i;
            }
        }
        Ok(Decision { k_star: 1, chunk_index: best, chunk: cands[best].clone(), best: vec![q[best]] })
    }
}

/// `Q(s_t, a_t) <- sum_{j<n} gamma^j r_{t+j} + gamma^n mask max_i min_j Qbar(s_{t+n}, a_i)`
/// for `config.offline_steps` steps, with `a_i` the first actions of `h`-step
/// behavior candidates.
pub fn nstep_baseline_train(config: &TrainConfig, env: &dyn Env, dataset: &Dataset, n: usize, h: usize) -> Result<NStepAgent> {
    config.validate()?;
    if n == 0 || n > h {
        return Err(Error::invalid(format!("n = {n} must be in 1..=h (h = {h})")));
    }
    if dataset.is_empty() {
        return Err(Error::invalid("n-step training needs a non-empty dataset"));
    }
    let encoder = Encoder::for_env(env);
    let q = Ensemble::new(encoder, 1, config.ensemble, &config.head_config(env), &mut rng::child(config.seed, 0))?;
    let behavior = behavior_for(env, dataset, h, config, config.seed)?;
    if let BehaviorModel::Flow(_) = behavior {
        return Err(Error::invalid("the n-step baseline expects a pretrained behavior; use a discrete environment"));
    }
    let mut agent = NStepAgent { n, gamma: config.gamma, n_candidates: config.n_candidates, q, behavior };
    let buffer = ReplayBuffer::from_dataset(dataset, n, config.buffer_capacity, 1.0)?;
    let mut rng = rng::child(config.seed, 1);
    let gn = config.gamma.powi(n as i32);
    for step in 0..config.offline_steps {
        let windows = buffer.sample(config.batch_size, &mut rng).ok_or_else(|| Error::invalid("no full n-window"))?;
        let batch = windows.iter().map(|w| buffer.chunk(w, n, config.gamma)).collect::<Result<Vec<_>>>()?;
        let mut targets = Vec::with_capacity(batch.len());
        for t in &batch {
            let boot = if t.mask == 0.0 {
                0.0
            } else {
                let cands = agent.first_actions(&t.next_state, &mut rng)?;
                let rows: Vec<Row<'_>> = cands.iter().map(|c| Row::new(&t.next_state, c.actions())).collect();
                agent.q.predict_min(&rows, true)?.into_iter().fold(f64::NEG_INFINITY, f64::max)
            };
            targets.push(t.partial_return + gn * t.mask * boot);
        }
        let firsts: Vec<ActionChunk> = batch.iter().map(|t| t.chunk.prefix(1)).collect();
        let rows: Vec<Row<'_>> = batch.iter().zip(&firsts).map(|(t, c)| Row::new(&t.state, c.actions())).collect();
        let grads = agent
            .q
            .members
            .iter()
            .map(|m| m.loss_grad(&rows, &targets, Fit::Mse))
            .collect::<Result<Vec<_>>>()?;
        for (m, (l, g)) in agent.q.members.iter_mut().zip(grads) {
            if !l.is_finite() {
                return Err(Error::Diverged { step, what: "non-finite n-step loss".into() });
            }
            m.apply(&g, rows.len())?;
        }
    }
    Ok(agent)
}
