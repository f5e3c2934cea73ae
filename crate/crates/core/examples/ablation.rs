//! One ablation axis on paired seeds: z-scored versus raw advantage scores on
//! a small grid. Prints the final success of each arm and the learning-curve
//! table as CSV.

use chunkrl::harness::{run_ablation, AblationAxis, RunConfig};

fn main() -> chunkrl::Result<()> {
    let config = RunConfig::from_json_str(
        r#"{"env": {"kind": "two_phase_grid", "params": {"width": 5, "height": 3, "contact_width": 2}},
            "data": {"episodes": 100},
            "scales": {"universe": [1, 2], "h": 4},
            "train": {"offline_steps": 2000, "online_steps": 2000, "eval_interval": 1000, "eval_episodes": 20},
            "ablation": {"seeds": [0, 1]}}"#,
    )?;
    let table = run_ablation(AblationAxis::Zscore, &config)?;
    for (arm, success) in table.final_success() {
        println!("{arm:>12}: final success {success:.3}");
    }
    println!();
    table.write_csv(std::io::stdout().lock())?;
    Ok(())
}
