//! Offline pretraining, online fine-tuning with open-loop execution, and
//! snapshot evaluation.

mod buffer;
mod metrics;
mod nstep;

pub use buffer::{Provenance, ReplayBuffer, Window};
pub use metrics::{
    state_label, write_traces, EvalSummary, LossAverager, MetricsLog, MetricsRow, Phase, StepLosses, TraceRecord,
};
pub use nstep::{nstep_baseline_train, NStepAgent};
pub(crate) use metrics::csv_err;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critics::{
    bootstrap_values, qh_loss, qk_loss, vh_loss, vk_loss, BootstrapSource, CriticBundle, Encoder, HeadConfig,
    HeadKind, LossGrads, TableConfig,
};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::mdp::{ActionChunk, ChunkedTransition, Dataset, ScaleSet, StateRepr, Trajectory};
use crate::nn::{load_checkpoint, save_checkpoint, AdamWConfig, Tensor};
use crate::policy::{BehaviorModel, ChunkSampler, EmpiricalChunkSampler, FlowConfig, FlowPolicy};
use crate::rng;
use crate::selector::{select, SelectorVariant};

/// Training hyperparameters. Missing fields take the desk profile values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    /// Expectile of the value heads.
    pub kappa: f64,
    /// Behavior candidates per query and per EMAQ target.
    pub n_candidates: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub ema_tau: f64,
    pub width: usize,
    pub depth: usize,
    pub ensemble: usize,
    /// `None` picks tables on discrete environments and networks otherwise.
    pub head: Option<HeadKind>,
    pub table_power: f64,
    pub table_floor: f64,
    pub flow_steps: usize,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub warmup: usize,
    pub utd: usize,
    /// Offline share of online-phase batches.
    pub mix_ratio: f64,
    pub buffer_capacity: usize,
    pub bootstrap: BootstrapSource,
    pub log_interval: usize,
    /// 0 evaluates only at the end of each phase.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            gamma: 0.99,
            kappa: 0.9,
            n_candidates: 8,
            batch_size: 256,
            lr: 3e-4,
            weight_decay: 0.0,
            ema_tau: 0.005,
            width: 64,
            depth: 2,
            ensemble: 2,
            head: None,
            table_power: 0.6,
            table_floor: 0.0,
            flow_steps: 10,
            offline_steps: 20_000,
            online_steps: 20_000,
            warmup: 0,
            utd: 1,
            mix_ratio: 0.5,
            buffer_capacity: 1_000_000,
            bootstrap: BootstrapSource::ValueH,
            log_interval: 1000,
            eval_interval: 5000,
            eval_episodes: 50,
            seed: 0,
        }
    }

    pub fn paper_defaults() -> Self {
        TrainConfig {
            width: 512,
            depth: 4,
            n_candidates: 32,
            offline_steps: 1_000_000,
            online_steps: 1_000_000,
            eval_interval: 100_000,
            log_interval: 10_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma {} outside (0, 1)", self.gamma));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa {} outside (0, 1)", self.kappa));
        }
        if self.n_candidates == 0 || self.batch_size == 0 || self.ensemble == 0 || self.flow_steps == 0 {
            return bad("n_candidates, batch_size, ensemble and flow_steps must be >= 1".into());
        }
        if self.utd == 0 || self.log_interval == 0 || self.eval_episodes == 0 {
            return bad("utd, log_interval and eval_episodes must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return bad(format!("mix_ratio {} outside [0, 1]", self.mix_ratio));
        }
        if !(self.lr > 0.0) || self.width == 0 || self.depth == 0 {
            return bad("lr, width and depth must be positive".into());
        }
        Ok(())
    }

    pub fn head_config(&self, env: &dyn Env) -> HeadConfig {
        let kind = self.head.unwrap_or(if env.discrete().is_some() { HeadKind::Table } else { HeadKind::Net });
        HeadConfig {
            kind,
            width: self.width,
            depth: self.depth,
            final_scale: 0.01,
            ema_tau: self.ema_tau,
            adam: self.adam(),
            table: TableConfig { power: self.table_power, floor: self.table_floor },
        }
    }

    pub fn adam(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig { width: self.width, depth: self.depth, steps: self.flow_steps, adam: self.adam() }
    }
}

/// Empirical chunk table on discrete tiers, flow policy on continuous ones.
pub fn behavior_for(env: &dyn Env, dataset: &Dataset, h: usize, config: &TrainConfig, seed: u64) -> Result<BehaviorModel> {
    match env.discrete() {
        Some(m) => {
            let mut s = EmpiricalChunkSampler::from_dataset(m, dataset, h)?;
            s.finalize();
            Ok(BehaviorModel::Empirical(s))
        }
        None => Ok(BehaviorModel::Flow(FlowPolicy::new(
            env.feature_dim(),
            env.action_space(),
            h,
            &config.flow_config(),
            &mut rng::child(seed, 7),
        )?)),
    }
}

/// What a policy decided at one query.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub k_star: usize,
    pub chunk_index: usize,
    /// Executed open-loop; length `k_star`.
    pub chunk: ActionChunk,
    /// Best raw score per scale of [`Policy::scales`]; NaN where not scored.
    pub best: Vec<f64>,
}

pub trait Policy: Sync {
    fn scales(&self) -> Vec<usize>;
    fn decide(&self, state: &StateRepr, rng: &mut ChaCha8Rng) -> Result<Decision>;
}

/// Critics, behavior model and selector: everything needed to act.
#[derive(Clone, Debug)]
pub struct Agent {
    pub gamma: f64,
    pub n_candidates: usize,
    pub selector: SelectorVariant,
    pub bundle: CriticBundle,
    pub behavior: BehaviorModel,
}

impl Policy for Agent {
    fn scales(&self) -> Vec<usize> {
        self.bundle.scales.as_slice().to_vec()
    }

    fn decide(&self, state: &StateRepr, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let cands = self.behavior.sample(state, self.n_candidates, rng)?;
        let sel = select(self.selector, &self.bundle, state, &cands, self.gamma, rng)?;
        let row_max = |r: &Vec<f64>| r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best = match self.selector {
            SelectorVariant::Fixed(k) => self
                .bundle
                .scales
                .as_slice()
                .iter()
                .map(|&s| if s == k { row_max(&sel.raw[0]) } else { f64::NAN })
                .collect(),
            SelectorVariant::Random => vec![f64::NAN; self.bundle.scales.len()],
            _ => sel.raw.iter().map(row_max).collect(),
        };
        Ok(Decision { k_star: sel.k_star, chunk_index: sel.chunk_index, chunk: sel.chunk, best })
    }
}

#[derive(Clone, Debug)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub success: bool,
    pub discounted_return: f64,
    pub traces: Vec<TraceRecord>,
}

/// Roll out one episode, re-querying the policy after each committed chunk.
pub fn run_episode(
    policy: &dyn Policy,
    env: &mut dyn Env,
    env_seed: u64,
    rng: &mut ChaCha8Rng,
    gamma: f64,
    episode: usize,
) -> Result<Episode> {
    let mut s = env.reset(env_seed);
    let mut traj = Trajectory { states: vec![s.clone()], actions: vec![], rewards: vec![], terminal: false };
    let mut traces = Vec::new();
    let mut ret = 0.0;
    let mut disc = 1.0;
    loop {
        let d = policy.decide(&s, rng)?;
        traces.push(TraceRecord {
            phase: "eval",
            step: traj.len(),
            episode,
            t: traj.len(),
            state: s.clone(),
            k_star: d.k_star,
            chunk_index: d.chunk_index,
            best: d.best,
        });
        for (j, a) in d.chunk.actions().iter().enumerate() {
            let out = env.step_open(a, j)?;
            ret += disc * out.reward;
            disc *= gamma;
            traj.actions.push(a.clone());
            traj.rewards.push(out.reward);
            traj.states.push(out.state.clone());
            if out.done() {
                traj.terminal = out.terminated;
                return Ok(Episode { success: out.terminated, trajectory: traj, discounted_return: ret, traces });
            }
            s = out.state;
        }
    }
}

pub fn summarize(episodes: &[Episode], scales: &[usize]) -> EvalSummary {
    let n = episodes.len().max(1) as f64;
    let decisions: Vec<usize> = episodes.iter().flat_map(|e| e.traces.iter().map(|t| t.k_star)).collect();
    let nd = decisions.len().max(1) as f64;
    let mut kstar_freq: BTreeMap<usize, f64> = scales.iter().map(|&k| (k, 0.0)).collect();
    for k in &decisions {
        *kstar_freq.entry(*k).or_insert(0.0) += 1.0 / nd;
    }
    EvalSummary {
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
        mean_return: episodes.iter().map(|e| e.discounted_return).sum::<f64>() / n,
        mean_kstar: decisions.iter().sum::<usize>() as f64 / nd,
        kstar_freq,
    }
}

/// Evaluation seed for episode `i`; independent of training progress.
pub fn eval_seed(seed: u64, i: usize) -> u64 {
    rng::split(rng::split(seed, 0xE7A1), i as u64)
}

/// Greedy rollouts of a frozen policy. Episodes run in parallel with
/// per-episode seeds, so results do not depend on scheduling.
pub fn evaluate(policy: &dyn Policy, env: &dyn Env, episodes: usize, seed: u64, gamma: f64) -> Result<(EvalSummary, Vec<Episode>)> {
    let eps = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let s = eval_seed(seed, i);
            let mut env = env.boxed_clone();
            run_episode(policy, env.as_mut(), rng::split(s, 0), &mut rng::child(s, 1), gamma, i)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize(&eps, &policy.scales()), eps))
}

/// Owns every trainable parameter; one instance per run.
pub struct Trainer {
    pub config: TrainConfig,
    pub agent: Agent,
    pub log: MetricsLog,
    /// Online-phase selection traces.
    pub traces: Vec<TraceRecord>,
    pub grad_steps: usize,
    pub env_steps: usize,
    /// Written when training aborts on a non-finite loss.
    pub abort_checkpoint: Option<PathBuf>,
    rng: ChaCha8Rng,
    avg: LossAverager,
    offline_done: usize,
    eval_env: Box<dyn Env>,
}

fn finite(lg: &LossGrads, step: usize) -> Result<f64> {
    let l = lg.loss();
    if l.is_finite() {
        Ok(l)
    } else {
        Err(Error::Diverged { step, what: format!("non-finite loss in {:?}", lg.head) })
    }
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        env: &dyn Env,
        dataset: &Dataset,
        scales: ScaleSet,
        selector: SelectorVariant,
    ) -> Result<Self> {
        config.validate()?;
        if config.bootstrap == BootstrapSource::Value1 && !scales.contains(1) {
            return Err(Error::invalid("the V^1 bootstrap needs 1 in the scale set"));
        }
        if let SelectorVariant::Fixed(k) = selector {
            if !scales.contains(k) {
                return Err(Error::invalid(format!("fixed:{k} is not in the scale set {:?}", scales.as_slice())));
            }
        }
        let h = scales.horizon();
        let encoder = Encoder::for_env(env);
        let bundle =
            CriticBundle::new(encoder, scales.clone(), config.ensemble, &config.head_config(env), &mut rng::child(config.seed, 0))?;
        let behavior = behavior_for(env, dataset, h, &config, config.seed)?;
        let agent = Agent { gamma: config.gamma, n_candidates: config.n_candidates, selector, bundle, behavior };
        Ok(Trainer {
            log: MetricsLog::new(scales.as_slice().to_vec()),
            traces: Vec::new(),
            grad_steps: 0,
            env_steps: 0,
            abort_checkpoint: None,
            rng: rng::child(config.seed, 1),
            avg: LossAverager::default(),
            offline_done: 0,
            eval_env: env.boxed_clone(),
            agent,
            config,
        })
    }

    pub fn scales(&self) -> &ScaleSet {
        &self.agent.bundle.scales
    }

    /// Offline steps already taken, e.g. by a run whose checkpoint was loaded.
    /// Online metric steps are numbered after them.
    pub fn set_offline_done(&mut self, steps: usize) {
        self.offline_done = steps;
        self.grad_steps = self.grad_steps.max(steps);
    }

    fn candidates(&mut self, rows: &[ChunkedTransition]) -> Result<Vec<Vec<ActionChunk>>> {
        let n = self.config.n_candidates;
        rows.iter()
            .map(|t| if t.mask == 0.0 { Ok(Vec::new()) } else { self.agent.behavior.sample(&t.next_state, n, &mut self.rng) })
            .collect()
    }

    /// One gradient step on Q^h, V^h, then Q^k and V^k for each k below h, then behavior
    /// cloning. `None` when the buffer has no full window yet.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<Option<StepLosses>> {
        let Some(windows) = buffer.sample(self.config.batch_size, &mut self.rng) else {
            return Ok(None);
        };
        let (gamma, kappa, step) = (self.config.gamma, self.config.kappa, self.grad_steps);
        let h = self.agent.bundle.h();
        let th: Vec<ChunkedTransition> = windows.iter().map(|w| buffer.chunk(w, h, gamma)).collect::<Result<_>>()?;

        let cands = self.candidates(&th)?;
        let lg = qh_loss(&self.agent.bundle, &th, &cands, gamma)?;
        let qh = finite(&lg, step)?;
        self.agent.bundle.apply(&lg)?;
        let lg = vh_loss(&self.agent.bundle, &th, kappa)?;
        let vh = finite(&lg, step)?;
        self.agent.bundle.apply(&lg)?;

        let mut out = StepLosses { qh, vh, ..StepLosses::default() };
        let partial = self.agent.bundle.scales.partial().to_vec();
        for k in partial {
            let tk: Vec<ChunkedTransition> = windows.iter().map(|w| buffer.chunk(w, k, gamma)).collect::<Result<_>>()?;
            let boot = match self.config.bootstrap {
                BootstrapSource::QhDirect => {
                    let c = self.candidates(&tk)?;
                    bootstrap_values(&self.agent.bundle, BootstrapSource::QhDirect, &tk, Some(&c))?
                }
                src => bootstrap_values(&self.agent.bundle, src, &tk, None)?,
            };
            let lg = qk_loss(&self.agent.bundle, k, &tk, gamma, &boot)?;
            out.qk.push(finite(&lg, step)?);
            self.agent.bundle.apply(&lg)?;
            let lg = vk_loss(&self.agent.bundle, k, &tk, kappa)?;
            out.vk.push(finite(&lg, step)?);
            self.agent.bundle.apply(&lg)?;
        }

        if let BehaviorModel::Flow(flow) = &mut self.agent.behavior {
            let pairs: Vec<(StateRepr, ActionChunk)> = th.iter().map(|t| (t.state.clone(), t.chunk.clone())).collect();
            let (l, g) = flow.bc_loss(&pairs, &mut self.rng)?;
            if !l.is_finite() {
                return Err(Error::Diverged { step, what: "non-finite behavior cloning loss".into() });
            }
            flow.apply(&g)?;
            out.bc = Some(l);
        }
        self.grad_steps += 1;
        Ok(Some(out))
    }

    fn guarded<T>(&self, r: Result<T>) -> Result<T> {
        if let (Err(Error::Diverged { .. }), Some(path)) = (&r, &self.abort_checkpoint) {
            self.save(path)?;
        }
        r
    }

    pub fn evaluate_now(&self) -> Result<(EvalSummary, Vec<Episode>)> {
        evaluate(&self.agent, self.eval_env.as_ref(), self.config.eval_episodes, self.config.seed, self.config.gamma)
    }

    fn emit(&mut self, step: usize, phase: Phase, log_due: bool, eval_due: bool) -> Result<()> {
        let losses = if log_due { self.avg.take() } else { None };
        let eval = if eval_due { Some(self.evaluate_now()?.0) } else { None };
        if losses.is_some() || eval.is_some() {
            self.log.push(MetricsRow { step, phase, losses, eval });
        }
        Ok(())
    }

    /// Offline phase: `config.offline_steps` gradient steps on the buffer.
    pub fn offline_train(&mut self, buffer: &ReplayBuffer) -> Result<()> {
        let r = self.offline_inner(buffer);
        self.guarded(r)
    }

    fn offline_inner(&mut self, buffer: &ReplayBuffer) -> Result<()> {
        let steps = self.config.offline_steps;
        if steps > 0 && buffer.offline_transitions() == 0 {
            return Err(Error::invalid("offline training needs a non-empty dataset"));
        }
        for i in 1..=steps {
            match self.update(buffer)? {
                Some(l) => self.avg.add(&l),
                None => return Err(Error::invalid("dataset holds no full h-window")),
            }
            let ev = self.config.eval_interval;
            let eval_due = i == steps || (ev > 0 && i % ev == 0);
            self.emit(i, Phase::Offline, i % self.config.log_interval == 0 || i == steps, eval_due)?;
        }
        self.offline_done = steps;
        Ok(())
    }

    /// Online phase: query, execute open-loop, store, update.
    pub fn online_finetune(&mut self, env: &dyn Env, buffer: &mut ReplayBuffer) -> Result<()> {
        let r = self.online_inner(env, buffer);
        self.guarded(r)
    }

    fn finish_episode(&mut self, traj: Trajectory, buffer: &mut ReplayBuffer) -> Result<()> {
        if traj.is_empty() {
            return Ok(());
        }
        if let BehaviorModel::Empirical(s) = &mut self.agent.behavior {
            s.add_trajectory(&traj)?;
            s.finalize();
        }
        buffer.push_online(traj)
    }

    fn online_inner(&mut self, env: &dyn Env, buffer: &mut ReplayBuffer) -> Result<()> {
        let total = self.config.online_steps;
        let mut env = env.boxed_clone();
        let env_seeds = rng::split(self.config.seed, 2);
        let mut episode = 0;
        let mut s = env.reset(rng::split(env_seeds, 0));
        let mut traj = Trajectory { states: vec![s.clone()], actions: vec![], rewards: vec![], terminal: false };
        let mut t = 0usize;
        while t < total {
            let d = self.agent.decide(&s, &mut self.rng)?;
            self.traces.push(TraceRecord {
                phase: "online",
                step: t,
                episode,
                t: traj.len(),
                state: s.clone(),
                k_star: d.k_star,
                chunk_index: d.chunk_index,
                best: d.best,
            });
            let mut done = false;
            for (j, a) in d.chunk.actions().iter().enumerate() {
                let out = env.step_open(a, j)?;
                traj.actions.push(a.clone());
                traj.rewards.push(out.reward);
                traj.states.push(out.state.clone());
                if t >= self.config.warmup {
                    for _ in 0..self.config.utd {
                        if let Some(l) = self.update(buffer)? {
                            self.avg.add(&l);
                        }
                    }
                }
                t += 1;
                self.env_steps = t;
                done = out.done();
                if done {
                    traj.terminal = out.terminated;
                }
                s = out.state;
                if t < total {
                    let ev = self.config.eval_interval;
                    self.emit(self.offline_done + t, Phase::Online, t % self.config.log_interval == 0, ev > 0 && t % ev == 0)?;
                }
                if done || t >= total {
                    break;
                }
            }
            if done {
                let fresh = Trajectory { states: vec![], actions: vec![], rewards: vec![], terminal: false };
                let finished = std::mem::replace(&mut traj, fresh);
                self.finish_episode(finished, buffer)?;
                episode += 1;
                s = env.reset(rng::split(env_seeds, episode as u64));
                traj.states.push(s.clone());
            }
        }
        if !traj.is_empty() {
            self.finish_episode(traj, buffer)?;
        }
        if total > 0 {
            self.emit(self.offline_done + total, Phase::Online, true, true)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut t = self.agent.bundle.tensors();
        match &self.agent.behavior {
            BehaviorModel::Flow(f) => t.extend(f.tensors()),
            BehaviorModel::Empirical(s) => t.extend(s.tensors()),
        }
        t
    }

    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        self.agent.bundle.load_tensors(tensors)?;
        match &mut self.agent.behavior {
            BehaviorModel::Flow(f) => f.load_tensors(tensors),
            BehaviorModel::Empirical(s) => s.load_tensors(tensors),
        }
    }

    pub fn save(&self, stem: &Path) -> Result<()> {
        save_checkpoint(stem, &self.tensors())
    }

    pub fn load(&mut self, stem: &Path) -> Result<()> {
        self.load_tensors(&load_checkpoint(stem)?)
    }
}

/// `offline_train` as a free function: build a trainer, run the offline phase.
pub fn offline_train(
    config: &TrainConfig,
    env: &dyn Env,
    dataset: &Dataset,
    scales: ScaleSet,
    selector: SelectorVariant,
) -> Result<(Trainer, ReplayBuffer)> {
    if dataset.is_empty() {
        return Err(Error::invalid("offline training needs a non-empty dataset"));
    }
    let mut trainer = Trainer::new(config.clone(), env, dataset, scales.clone(), selector)?;
    let buffer = ReplayBuffer::from_dataset(dataset, scales.horizon(), config.buffer_capacity, config.mix_ratio)?;
    trainer.offline_train(&buffer)?;
    Ok((trainer, buffer))
}

/// `online_finetune` as a free function on a trainer returned by [`offline_train`].
pub fn online_finetune(trainer: &mut Trainer, env: &dyn Env, buffer: &mut ReplayBuffer) -> Result<()> {
    trainer.online_finetune(env, buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_dataset, BehaviorPolicySpec, EnvSpec};

    fn small(config: TrainConfig) -> TrainConfig {
        TrainConfig { batch_size: 32, log_interval: 10, eval_interval: 0, eval_episodes: 4, ..config }
    }

    fn chain_setup(steps: usize) -> (Box<dyn Env>, Dataset, TrainConfig) {
        let env = EnvSpec::chain(5, 0.0).build().unwrap();
        let spec = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
        let ds = generate_dataset(env.as_ref(), &spec, 30, 1).unwrap();
        let config = small(TrainConfig { offline_steps: steps, online_steps: 40, ..TrainConfig::desk() });
        (env, ds, config)
    }

    #[test]
    fn zero_steps_leave_the_bundle_unchanged() {
        let (env, ds, config) = chain_setup(0);
        let scales = ScaleSet::new(vec![1, 2]).unwrap();
        let fresh = Trainer::new(config.clone(), env.as_ref(), &ds, scales.clone(), SelectorVariant::Aqc).unwrap();
        let (trained, _) = offline_train(&config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
        assert_eq!(fresh.tensors(), trained.tensors());
        assert!(trained.log.rows.is_empty());
    }

    #[test]
    fn warmup_covering_everything_blocks_updates() {
        let (env, ds, mut config) = chain_setup(0);
        config.warmup = config.online_steps;
        let scales = ScaleSet::new(vec![1, 2]).unwrap();
        let (mut tr, mut buf) = offline_train(&config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
        let before = tr.agent.bundle.tensors();
        tr.online_finetune(env.as_ref(), &mut buf).unwrap();
        assert_eq!(tr.grad_steps, 0);
        assert_eq!(tr.agent.bundle.tensors(), before);
        assert!(buf.online_transitions() > 0);
        assert_eq!(buf.online_transitions(), config.online_steps);
    }

    #[test]
    fn open_loop_bookkeeping() {
        let (env, ds, config) = chain_setup(50);
        let scales = ScaleSet::new(vec![1, 2]).unwrap();
        let (mut tr, mut buf) = offline_train(&config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
        tr.online_finetune(env.as_ref(), &mut buf).unwrap();
        for w in tr.traces.windows(2) {
            if w[0].episode == w[1].episode {
                assert_eq!(w[1].step - w[0].step, w[0].k_star);
            } else {
                assert!(w[1].step - w[0].step <= w[0].k_star);
            }
        }
    }

    #[test]
    fn evaluation_does_not_touch_parameters() {
        let (env, ds, config) = chain_setup(30);
        let scales = ScaleSet::new(vec![1, 2]).unwrap();
        let (tr, _) = offline_train(&config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
        let before = tr.tensors();
        let (a, _) = tr.evaluate_now().unwrap();
        let (b, _) = tr.evaluate_now().unwrap();
        assert_eq!(tr.tensors(), before);
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_metrics() {
        let (env, ds, config) = chain_setup(40);
        let run = || {
            let scales = ScaleSet::new(vec![1, 2]).unwrap();
            let (mut tr, mut buf) = offline_train(&config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
            tr.online_finetune(env.as_ref(), &mut buf).unwrap();
            let mut out = Vec::new();
            tr.log.write_csv(&mut out).unwrap();
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (env, ds, config) = chain_setup(20);
        let scales = ScaleSet::new(vec![1, 2]).unwrap();
        let (tr, _) = offline_train(&config, env.as_ref(), &ds, scales.clone(), SelectorVariant::Aqc).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        tr.save(&stem).unwrap();
        let mut fresh = Trainer::new(config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).unwrap();
        fresh.load(&stem).unwrap();
        assert_eq!(fresh.tensors(), tr.tensors());
    }

    #[test]
    fn value1_bootstrap_needs_unit_scale() {
        let (env, ds, mut config) = chain_setup(0);
        config.bootstrap = BootstrapSource::Value1;
        let scales = ScaleSet::new(vec![2, 3]).unwrap();
        assert!(Trainer::new(config, env.as_ref(), &ds, scales, SelectorVariant::Aqc).is_err());
    }
}
