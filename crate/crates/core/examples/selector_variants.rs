//! Every scale selector on exact grid tables, state by state, against the
//! oracle scale k-dagger.

use chunkrl::critics::{CriticBundle, Encoder, HeadConfig, HeadId, HeadKind};
use chunkrl::envs::{BehaviorPolicySpec, DiscreteModel, EnvSpec, GridParams, TwoPhaseGridEnv};
use chunkrl::mdp::{ScaleSet, StateRepr};
use chunkrl::oracle::{BehaviorSource, OracleTables, DEFAULT_NODE_BUDGET};
use chunkrl::rng;
use chunkrl::selector::{select, SelectorVariant};

fn main() -> chunkrl::Result<()> {
    let params = GridParams::default();
    let grid = TwoPhaseGridEnv::new(params.clone())?;
    let env = EnvSpec::grid(params).build()?;
    let behavior = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    let scales = ScaleSet::new(vec![1, 2, 5])?;
    let t = OracleTables::compute(&grid, 0.99, &scales, 0.9, BehaviorSource::Exact(&behavior), DEFAULT_NODE_BUDGET)?;

    let config = HeadConfig { kind: HeadKind::Table, ..HeadConfig::default() };
    let mut bundle = CriticBundle::new(Encoder::for_env(env.as_ref()), scales.clone(), 1, &config, &mut rng::rng(0))?;
    for (ki, &k) in scales.as_slice().iter().enumerate() {
        for s in 0..grid.n_states() {
            let state = StateRepr::Discrete(s);
            for (&c, &q) in &t.q_k[ki][s] {
                bundle.heads_mut(HeadId::Q(k))?[0].set_entry(&state, t.chunk(c, k).actions(), q)?;
            }
            if !t.v_k_beta[s][ki].is_nan() {
                bundle.heads_mut(HeadId::V(k))?[0].set_entry(&state, &[], t.v_k_beta[s][ki])?;
            }
        }
    }

    let variants = [SelectorVariant::RawQ, SelectorVariant::DiscountCorrected, SelectorVariant::NoZscore, SelectorVariant::Aqc];
    let mut rng = rng::rng(1);
    let mut agree = vec![0usize; variants.len()];
    let mut total = 0;
    println!("{:>3} {:>7} {:>7} {:>19} {:>10} {:>4}", "s", "oracle", "raw_q", "discount_corrected", "no_zscore", "aqc");
    for s in 0..grid.n_states() {
        let Some(k_dagger) = t.k_dagger[s] else { continue };
        let state = StateRepr::Discrete(s);
        let cands: Vec<_> = t.pi_beta[scales.len() - 1][s].keys().map(|&c| t.chunk(c, scales.horizon())).collect();
        let picks: Vec<usize> = variants
            .iter()
            .map(|&v| select(v, &bundle, &state, &cands, t.gamma, &mut rng).map(|r| r.k_star))
            .collect::<chunkrl::Result<_>>()?;
        for (a, &p) in agree.iter_mut().zip(&picks) {
            *a += (p == k_dagger) as usize;
        }
        total += 1;
        println!("{s:>3} {k_dagger:>7} {:>7} {:>19} {:>10} {:>4}", picks[0], picks[1], picks[2], picks[3]);
    }
    for (v, a) in variants.iter().zip(&agree) {
        println!("{:>20}: agrees with the oracle at {a}/{total} states", v.to_string());
    }
    Ok(())
}
