//! Offline-to-online training on the two-phase grid. Writes a k* heatmap of
//! the evaluation rollouts to `kstar_map.svg` (or the path given as the first
//! argument) and prints it as text.

use std::collections::BTreeMap;

use chunkrl::envs::{generate_dataset, BehaviorPolicySpec, EnvSpec, GridParams, TwoPhaseGridEnv};
use chunkrl::harness::heatmap_svg;
use chunkrl::mdp::ScaleSet;
use chunkrl::selector::SelectorVariant;
use chunkrl::trainer::{offline_train, TrainConfig};

fn main() -> chunkrl::Result<()> {
    let params = GridParams { width: 7, height: 3, contact_width: 3, p_contact: 0.3, tau_acc: 2.0, ..GridParams::default() };
    let grid = TwoPhaseGridEnv::new(params.clone())?;
    let env = EnvSpec::grid(params.clone()).build()?;
    let dataset = generate_dataset(env.as_ref(), &BehaviorPolicySpec::default(), 200, 0)?;
    let config = TrainConfig { offline_steps: 10_000, online_steps: 10_000, eval_interval: 5_000, ..TrainConfig::desk() };
    let (mut trainer, mut buffer) =
        offline_train(&config, env.as_ref(), &dataset, ScaleSet::new(vec![1, 5])?, SelectorVariant::Aqc)?;
    trainer.online_finetune(env.as_ref(), &mut buffer)?;

    for row in trainer.log.rows.iter().filter(|r| r.eval.is_some()) {
        let e = row.eval.as_ref().expect("filtered");
        println!("step {:>6} {:>7}: success {:.2}, mean k* {:.2}", row.step, row.phase.as_str(), e.success_rate, e.mean_kstar);
    }

    let (_, episodes) = trainer.evaluate_now()?;
    let mut per_state: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for tr in episodes.iter().flat_map(|e| &e.traces) {
        let s = tr.state.index().expect("discrete");
        let e = per_state.entry(s).or_default();
        e.0 += tr.k_star as f64;
        e.1 += 1;
    }
    let cells: Vec<Option<f64>> =
        (0..params.width * params.height).map(|s| per_state.get(&s).map(|(sum, n)| sum / *n as f64)).collect();

    println!("\nmean k* per cell (top row first; '.' = not visited; columns >= {} are contact):", params.width - params.contact_width);
    for y in (0..params.height).rev() {
        let line: Vec<String> = (0..params.width)
            .map(|x| cells[grid.index(x, y)].map_or_else(|| "   .".to_string(), |k| format!("{k:4.1}")))
            .collect();
        println!("{}", line.join(" "));
    }
    let path = std::env::args().nth(1).unwrap_or_else(|| "kstar_map.svg".into());
    std::fs::write(&path, heatmap_svg("mean k*", params.width, params.height, &cells)?)?;
    println!("wrote {path}");
    Ok(())
}
