//! Uncorrected n-step returns versus chunked critics on noisy behavior data.
//! The n-step target averages over the behavior's own mistakes, so its value
//! at the start state falls well below the optimum; the chunked critic does not.

use chunkrl::critics::Row;
use chunkrl::envs::{generate_dataset, BehaviorPolicySpec, ChainEnv, ChainParams, EnvSpec};
use chunkrl::mdp::{ScaleSet, StateRepr};
use chunkrl::policy::ChunkSampler;
use chunkrl::oracle::value_iteration;
use chunkrl::rng;
use chunkrl::selector::SelectorVariant;
use chunkrl::trainer::{nstep_baseline_train, offline_train, TrainConfig};

fn main() -> chunkrl::Result<()> {
    let model = ChainEnv::new(ChainParams { length: 10, p_slip: 0.0 })?;
    let v_star = value_iteration(&model, 0.99, 1e-12)?.v[0];
    let env = EnvSpec::chain(10, 0.0).build()?;
    let s0 = StateRepr::Discrete(0);
    let config = TrainConfig { offline_steps: 10_000, online_steps: 0, eval_interval: 0, ..TrainConfig::desk() };
    println!("exact V*(s0) = {v_star:.3}");
    for epsilon in [0.0, 0.3, 0.5] {
        let ds = generate_dataset(env.as_ref(), &BehaviorPolicySpec { epsilon, ..BehaviorPolicySpec::default() }, 200, 2)?;
        let nstep = nstep_baseline_train(&config, env.as_ref(), &ds, 5, 5)?.value(&s0, &mut rng::rng(0))?;
        let (t, _) = offline_train(&config, env.as_ref(), &ds, ScaleSet::new(vec![1, 5])?, SelectorVariant::Aqc)?;
        let cands = t.agent.behavior.sample(&s0, 32, &mut rng::rng(0))?;
        let rows: Vec<Row<'_>> = cands.iter().map(|c| Row::new(&s0, c.actions())).collect();
        let chunked = t.agent.bundle.q(5)?.predict_mean(&rows, false)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
        println!("epsilon {epsilon:.1}: n-step (n = 5) {nstep:8.3}   chunked Q^5 {chunked:8.3}");
    }
    Ok(())
}
