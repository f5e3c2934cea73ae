use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::Serialize;

use super::config::RunConfig;
use crate::envs::{generate_dataset, Env};
use crate::error::{Error, Result};
use crate::mdp::Dataset;
use crate::oracle::{BehaviorSource, OracleTables, DEFAULT_NODE_BUDGET};
use crate::trainer::{write_traces, EvalSummary, MetricsLog, Phase, ReplayBuffer, Trainer};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const ORACLE_FILE: &str = "oracle.json";
pub const METRICS_OFFLINE: &str = "metrics_offline.csv";
pub const METRICS_ONLINE: &str = "metrics_online.csv";
pub const TRACES_FILE: &str = "traces.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const EVAL_TRACES_FILE: &str = "eval_traces.csv";
pub const CHECKPOINT_OFFLINE: &str = "checkpoint_offline";
pub const CHECKPOINT_FINAL: &str = "checkpoint_final";

fn ckpt_exists(stem: &Path) -> bool {
    stem.with_extension("json").exists() && stem.with_extension("bin").exists()
}

/// `data.path` if given, else a fresh dataset from the configured behavior.
pub fn load_dataset(config: &RunConfig, env: &dyn Env) -> Result<Dataset> {
    match &config.data.path {
        Some(p) => Dataset::read_jsonl(BufReader::new(File::open(p)?)),
        None => generate_dataset(env, &config.data.behavior, config.data.episodes, config.seed),
    }
}

/// `gen-data`: write `dataset.jsonl`.
pub fn gen_data(config: &RunConfig, dir: &Path) -> Result<Dataset> {
    let env = config.env.build()?;
    let ds = load_dataset(config, env.as_ref())?;
    ds.write_jsonl(BufWriter::new(File::create(dir.join(DATASET_FILE))?))?;
    Ok(ds)
}

/// Exact tables for the configured behavior. A Markov behavior is enumerated
/// exactly; a sticky one falls back to the dataset's empirical marginal.
pub fn oracle_tables(config: &RunConfig) -> Result<OracleTables> {
    let env = config.env.build()?;
    let model = env.discrete().ok_or_else(|| Error::NotDiscrete(env.name().into()))?;
    let scales = config.scales.scale_set()?;
    let (gamma, kappa) = (config.train.gamma, config.train.kappa);
    if config.data.behavior.persistence > 0.0 || config.data.path.is_some() {
        let ds = load_dataset(config, env.as_ref())?;
        OracleTables::compute(model, gamma, &scales, kappa, BehaviorSource::Empirical(&ds), DEFAULT_NODE_BUDGET)
    } else {
        OracleTables::compute(model, gamma, &scales, kappa, BehaviorSource::Exact(&config.data.behavior), DEFAULT_NODE_BUDGET)
    }
}

/// `oracle`: write `oracle.json`.
pub fn oracle(config: &RunConfig, dir: &Path) -> Result<OracleTables> {
    let t = oracle_tables(config)?;
    std::fs::write(dir.join(ORACLE_FILE), serde_json::to_string_pretty(&t.to_json())? + "\n")?;
    Ok(t)
}

pub fn write_metrics(log: &MetricsLog, phase: Phase, path: &Path) -> Result<()> {
    let rows = log.rows.iter().filter(|r| r.phase == phase).cloned().collect();
    MetricsLog { scales: log.scales.clone(), rows }.write_csv(BufWriter::new(File::create(path)?))
}

fn trainer(config: &RunConfig, env: &dyn Env, ds: &Dataset) -> Result<(Trainer, ReplayBuffer)> {
    let scales = config.scales.scale_set()?;
    let t = Trainer::new(config.train.clone(), env, ds, scales.clone(), config.selector)?;
    let buf = ReplayBuffer::from_dataset(ds, scales.horizon(), config.train.buffer_capacity, config.train.mix_ratio)?;
    Ok((t, buf))
}

fn with_abort_path(mut t: Trainer, dir: &Path) -> Trainer {
    t.abort_checkpoint = Some(dir.join("checkpoint_abort"));
    t
}

/// `train-offline`: `metrics_offline.csv` plus the offline checkpoint.
pub fn train_offline(config: &RunConfig, dir: &Path) -> Result<(Trainer, ReplayBuffer)> {
    let env = config.env.build()?;
    let ds = load_dataset(config, env.as_ref())?;
    let (t, buf) = trainer(config, env.as_ref(), &ds)?;
    let mut t = with_abort_path(t, dir);
    t.offline_train(&buf)?;
    write_metrics(&t.log, Phase::Offline, &dir.join(METRICS_OFFLINE))?;
    t.save(&dir.join(CHECKPOINT_OFFLINE))?;
    Ok((t, buf))
}

/// `finetune`: resume from the offline checkpoint (training one first if
/// absent), then write `metrics_online.csv`, `traces.csv` and the final checkpoint.
pub fn finetune(config: &RunConfig, dir: &Path) -> Result<Trainer> {
    let env = config.env.build()?;
    let stem = dir.join(CHECKPOINT_OFFLINE);
    let (mut t, mut buf) = if ckpt_exists(&stem) {
        let ds = load_dataset(config, env.as_ref())?;
        let (mut t, buf) = trainer(config, env.as_ref(), &ds)?;
        t.load(&stem)?;
        t.set_offline_done(config.train.offline_steps);
        (with_abort_path(t, dir), buf)
    } else {
        train_offline(config, dir)?
    };
    t.online_finetune(env.as_ref(), &mut buf)?;
    write_metrics(&t.log, Phase::Online, &dir.join(METRICS_ONLINE))?;
    write_traces(t.scales().as_slice(), &t.traces, BufWriter::new(File::create(dir.join(TRACES_FILE))?))?;
    t.save(&dir.join(CHECKPOINT_FINAL))?;
    Ok(t)
}

#[derive(Serialize)]
struct EvalJson<'a> {
    checkpoint: &'a str,
    episodes: usize,
    success_rate: f64,
    mean_return: f64,
    mean_kstar: f64,
    kstar_freq: &'a std::collections::BTreeMap<usize, f64>,
}

/// `evaluate`: score the newest checkpoint in `dir` (final, else offline).
pub fn evaluate(config: &RunConfig, dir: &Path) -> Result<EvalSummary> {
    let env = config.env.build()?;
    let ds = load_dataset(config, env.as_ref())?;
    let (mut t, _) = trainer(config, env.as_ref(), &ds)?;
    let name = [CHECKPOINT_FINAL, CHECKPOINT_OFFLINE]
        .into_iter()
        .find(|n| ckpt_exists(&dir.join(n)))
        .ok_or_else(|| Error::invalid(format!("no checkpoint in {}; run train-offline first", dir.display())))?;
    t.load(&dir.join(name))?;
    let (summary, episodes) = t.evaluate_now()?;
    let json = EvalJson {
        checkpoint: name,
        episodes: episodes.len(),
        success_rate: summary.success_rate,
        mean_return: summary.mean_return,
        mean_kstar: summary.mean_kstar,
        kstar_freq: &summary.kstar_freq,
    };
    std::fs::write(dir.join(EVAL_FILE), serde_json::to_string_pretty(&json)? + "\n")?;
    let traces: Vec<_> = episodes.into_iter().flat_map(|e| e.traces).collect();
    write_traces(t.scales().as_slice(), &traces, BufWriter::new(File::create(dir.join(EVAL_TRACES_FILE))?))?;
    Ok(summary)
}
