//! Learned selector on exact tables against the tabular oracle.

use std::collections::BTreeSet;

use chunkrl::critics::{CriticBundle, Encoder, HeadConfig, HeadId, HeadKind};
use chunkrl::envs::{BehaviorPolicySpec, ChainEnv, ChainParams, DiscreteModel, DiscreteEnv, GridParams, TwoPhaseGridEnv};
use chunkrl::mdp::{ScaleSet, StateRepr};
use chunkrl::oracle::{BehaviorSource, OracleTables, DEFAULT_NODE_BUDGET};
use chunkrl::rng;
use chunkrl::selector::{advantage_scores, select, SelectorVariant};

const GAMMA: f64 = 0.99;

fn tables(model: &dyn DiscreteModel, scales: &[usize]) -> OracleTables {
    let spec = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    OracleTables::compute(model, GAMMA, &ScaleSet::new(scales.to_vec()).unwrap(), 0.9, BehaviorSource::Exact(&spec), DEFAULT_NODE_BUDGET)
        .unwrap()
}

/// Table critics holding `Q^{k,*}` and `V^{k,beta}` exactly.
fn exact_bundle(encoder: Encoder, t: &OracleTables) -> CriticBundle {
    let config = HeadConfig { kind: HeadKind::Table, ..HeadConfig::default() };
    let mut b = CriticBundle::new(encoder, t.scales.clone(), 1, &config, &mut rng::rng(0)).unwrap();
    for (ki, &k) in t.scales.as_slice().iter().enumerate() {
        for (s, row) in t.q_k[ki].iter().enumerate() {
            let state = StateRepr::Discrete(s);
            for (&c, &q) in row {
                b.heads_mut(HeadId::Q(k)).unwrap()[0].set_entry(&state, t.chunk(c, k).actions(), q).unwrap();
            }
            if !t.v_k_beta[s][ki].is_nan() {
                b.heads_mut(HeadId::V(k)).unwrap()[0].set_entry(&state, &[], t.v_k_beta[s][ki]).unwrap();
            }
        }
    }
    b
}

fn check_equivalence(model: &dyn DiscreteModel, encoder: Encoder, scales: &[usize]) {
    let t = tables(model, scales);
    let bundle = exact_bundle(encoder, &t);
    let h = *scales.last().unwrap();
    let hi = scales.len() - 1;
    let mut rng = rng::rng(1);
    let mut checked = 0;
    for s in 0..model.n_states() {
        let Some(k_dagger) = t.k_dagger[s] else { continue };
        let state = StateRepr::Discrete(s);
        let cands: Vec<_> = t.pi_beta[hi][s].keys().map(|&c| t.chunk(c, h)).collect();
        let m = advantage_scores(&bundle, &state, &cands, GAMMA).unwrap();
        for (ki, &k) in scales.iter().enumerate() {
            let prefixes: BTreeSet<u64> =
                cands.iter().map(|c| c.prefix(k).discrete_index(t.n_actions).unwrap() as u64).collect();
            assert_eq!(prefixes, t.pi_beta[ki][s].keys().copied().collect(), "state {s}, k {k}: prefix support");
            for (c, &score) in cands.iter().zip(&m.scores[ki]) {
                let idx = c.prefix(k).discrete_index(t.n_actions).unwrap() as u64;
                let want = (t.q_k[ki][s][&idx] - t.v_k_beta[s][ki]) / GAMMA.powi(k as i32);
                assert!((score - want).abs() <= 1e-9, "state {s}, k {k}: {score} vs {want}");
            }
            let best = m.scores[ki].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((best - t.a_bar[s][ki]).abs() <= 1e-9);
        }
        let pick = select(SelectorVariant::NoZscore, &bundle, &state, &cands, GAMMA, &mut rng).unwrap();
        assert_eq!(pick.k_star, k_dagger, "state {s}");
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn exact_chain_tables_reproduce_the_oracle_selector() {
    let c = ChainEnv::new(ChainParams { length: 8, p_slip: 0.1 }).unwrap();
    check_equivalence(&c, Encoder::for_env(&DiscreteEnv::new(c.clone())), &[1, 2, 4]);
}

#[test]
fn exact_grid_tables_reproduce_the_oracle_selector() {
    let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
    check_equivalence(&g, Encoder::for_env(&DiscreteEnv::new(g.clone())), &[1, 5]);
}

#[test]
fn default_grid_oracle_maps_match_the_golden_file() {
    let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
    let t = tables(&g, &[1, 5]);
    // Straight-line argmax over the two scales, ties to k = 5.
    for s in 0..g.n_states() {
        let Some(k) = t.k_dagger[s] else { continue };
        let (a1, a5) = (t.a_bar[s][0], t.a_bar[s][1]);
        let want = if a1 > a5 + 1e-12 * (1.0 + a5.abs()) { 1 } else { 5 };
        assert_eq!(k, want, "state {s}");
        assert!((t.delta[s] - (a1 - a5).abs()).abs() <= 1e-12);
    }
    let golden: serde_json::Value =
        serde_json::from_str(include_str!("golden/grid5_k1_5.json")).unwrap();
    let k_dagger: Vec<Option<usize>> = serde_json::from_value(golden["k_dagger"].clone()).unwrap();
    let delta: Vec<Option<f64>> = serde_json::from_value(golden["delta"].clone()).unwrap();
    assert_eq!(t.k_dagger, k_dagger);
    for (s, d) in delta.iter().enumerate() {
        match d {
            Some(d) => assert!((t.delta[s] - d).abs() <= 1e-9, "state {s}: {} vs {d}", t.delta[s]),
            None => assert!(t.delta[s].is_nan()),
        }
    }
}
