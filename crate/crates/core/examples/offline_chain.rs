//! Offline pretraining on a slippery chain from noisy behavior data, then a
//! short online phase. Prints success, mean selected chunk size and the
//! per-scale selection frequencies after each phase.

use chunkrl::envs::{generate_dataset, BehaviorPolicySpec, EnvSpec};
use chunkrl::mdp::ScaleSet;
use chunkrl::selector::SelectorVariant;
use chunkrl::trainer::{offline_train, EvalSummary, TrainConfig};

fn report(phase: &str, e: &EvalSummary) {
    let freq: Vec<String> = e.kstar_freq.iter().map(|(k, f)| format!("k={k}: {f:.2}")).collect();
    println!("{phase:>8}: success {:.2}, return {:.3}, mean k* {:.2} ({})", e.success_rate, e.mean_return, e.mean_kstar, freq.join(", "));
}

fn main() -> chunkrl::Result<()> {
    let env = EnvSpec::chain(15, 0.1).build()?;
    let behavior = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    let dataset = generate_dataset(env.as_ref(), &behavior, 200, 0)?;
    println!("dataset: {} episodes, {} transitions", dataset.trajectories.len(), dataset.n_transitions());

    let config = TrainConfig { offline_steps: 5_000, online_steps: 5_000, eval_interval: 0, ..TrainConfig::desk() };
    let (mut trainer, mut buffer) =
        offline_train(&config, env.as_ref(), &dataset, ScaleSet::new(vec![1, 5])?, SelectorVariant::Aqc)?;
    report("offline", &trainer.evaluate_now()?.0);
    trainer.online_finetune(env.as_ref(), &mut buffer)?;
    report("online", &trainer.evaluate_now()?.0);
    println!("{} online decisions traced, {} online transitions in the buffer", trainer.traces.len(), buffer.online_transitions());
    Ok(())
}
