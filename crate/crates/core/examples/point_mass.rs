//! Continuous control: network critics and a flow-matching behavior policy
//! on the 2-D point mass, with scales {1, 2, 4}.

use chunkrl::envs::{generate_dataset, BehaviorPolicySpec, EnvSpec, PointMassParams};
use chunkrl::mdp::ScaleSet;
use chunkrl::selector::SelectorVariant;
use chunkrl::trainer::{offline_train, TrainConfig};

fn main() -> chunkrl::Result<()> {
    let env = EnvSpec::PointMass(PointMassParams::default()).build()?;
    let dataset = generate_dataset(env.as_ref(), &BehaviorPolicySpec::default(), 100, 0)?;
    println!("dataset: {} transitions", dataset.n_transitions());
    let config = TrainConfig {
        offline_steps: 2000,
        online_steps: 1000,
        eval_interval: 1000,
        eval_episodes: 10,
        batch_size: 64,
        log_interval: 500,
        ..TrainConfig::desk()
    };
    let (mut trainer, mut buffer) =
        offline_train(&config, env.as_ref(), &dataset, ScaleSet::new(vec![1, 2, 4])?, SelectorVariant::Aqc)?;
    trainer.online_finetune(env.as_ref(), &mut buffer)?;
    for row in &trainer.log.rows {
        if let Some(l) = &row.losses {
            println!("step {:>5} {:>7}: loss q_h {:.4}  bc {:.4}", row.step, row.phase.as_str(), l.qh, l.bc.unwrap_or(f64::NAN));
        }
        if let Some(e) = &row.eval {
            println!("step {:>5} {:>7}: success {:.2}, mean k* {:.2}", row.step, row.phase.as_str(), e.success_rate, e.mean_kstar);
        }
    }
    Ok(())
}
