//! Theory checks on exact tables: selector soundness under random and
//! adversarial noise, dominance, bootstrap and value-flow bounds, noise
//! immunity. Prints measured value, bound and margin for each check.

use chunkrl::envs::{BehaviorPolicySpec, ChainEnv, ChainParams};
use chunkrl::harness::{verify_theory, TheorySettings};
use chunkrl::mdp::ScaleSet;
use chunkrl::oracle::{BehaviorSource, OracleTables, DEFAULT_NODE_BUDGET};

fn main() -> chunkrl::Result<()> {
    let chain = ChainEnv::new(ChainParams { length: 8, p_slip: 0.1 })?;
    let behavior = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    let t = OracleTables::compute(&chain, 0.99, &ScaleSet::new(vec![1, 2, 4])?, 0.9, BehaviorSource::Exact(&behavior), DEFAULT_NODE_BUDGET)?;
    let settings = TheorySettings { random_draws: 200, noise_draws: 2000, ..TheorySettings::default() };
    let report = verify_theory(&chain, &t, &settings)?;
    for r in &report.records {
        println!(
            "{} {:<44} measured {:>11.4e}  bound {:>11.4e}  margin {:>11.4e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.check,
            r.measured,
            r.bound,
            r.bound - r.measured
        );
    }
    let passed = report.records.iter().filter(|r| r.pass).count();
    println!("{passed}/{} checks pass", report.records.len());
    Ok(())
}
