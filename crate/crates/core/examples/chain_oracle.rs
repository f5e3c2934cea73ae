//! Exact tables on a slippery chain: V*, best partial-chunk advantages per
//! scale, the oracle scale k-dagger, and exact values of fixed and adaptive
//! chunk policies.

use chunkrl::envs::{BehaviorPolicySpec, ChainEnv, ChainParams, DiscreteModel};
use chunkrl::mdp::ScaleSet;
use chunkrl::oracle::{evaluate_meta_policy, BehaviorSource, MetaPolicySpec, OracleTables, DEFAULT_NODE_BUDGET};

fn main() -> chunkrl::Result<()> {
    let chain = ChainEnv::new(ChainParams { length: 8, p_slip: 0.1 })?;
    let behavior = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    let scales = ScaleSet::new(vec![1, 2, 4])?;
    let t = OracleTables::compute(&chain, 0.99, &scales, 0.9, BehaviorSource::Exact(&behavior), DEFAULT_NODE_BUDGET)?;

    println!("{:>3} {:>9} {:>27} {:>4} {:>8}", "s", "V*", "A_bar (k = 1, 2, 4)", "k+", "Delta");
    for s in 0..chain.n_states() {
        let Some(k) = t.k_dagger[s] else {
            println!("{s:>3} {:>9.4}  (goal)", t.v_star[s]);
            continue;
        };
        let adv: Vec<String> = t.a_bar[s].iter().map(|a| format!("{a:8.4}")).collect();
        println!("{s:>3} {:>9.4} {:>27} {k:>4} {:>8.4}", t.v_star[s], adv.join(" "), t.delta[s]);
    }

    let adaptive = evaluate_meta_policy(&chain, &t, &MetaPolicySpec::oracle(&t), t.gamma)?;
    println!("\nexact value at s0: adaptive {:.4}", adaptive[0]);
    for &k in scales.as_slice() {
        let v = evaluate_meta_policy(&chain, &t, &MetaPolicySpec::Fixed(k), t.gamma)?;
        println!("                   fixed:{k}  {:.4}", v[0]);
    }
    Ok(())
}
