//! Expectile baselines: exact bisection, a grid search on the asymmetric
//! loss, and a table value head trained with the expectile loss, on the same
//! weighted distribution.

use rand::Rng;

use chunkrl::critics::{vk_loss, CriticBundle, Encoder, HeadConfig, HeadId, HeadKind};
use chunkrl::envs::EnvSpec;
use chunkrl::harness::expectile_grid_search;
use chunkrl::mdp::{ActionChunk, ChunkedTransition, ScaleSet, StateRepr};
use chunkrl::oracle::expectile;
use chunkrl::rng;

fn main() -> chunkrl::Result<()> {
    // Q values of the four 2-step chunks at one chain state, and their behavior probabilities.
    let q = [-3.0, -1.5, -1.0, 0.0];
    let p = [0.4, 0.3, 0.2, 0.1];
    let env = EnvSpec::chain(5, 0.0).build()?;
    let state = StateRepr::Discrete(0);
    let chunks: Vec<ActionChunk> = (0..4).map(|i| ActionChunk::from_discrete_index(i, 2, 2)).collect();

    println!("{:>6} {:>10} {:>10} {:>10}", "kappa", "bisection", "grid", "trained");
    for kappa in [0.5, 0.7, 0.9, 0.99] {
        let exact = expectile(&q, &p, kappa, 1e-12)?;
        let grid = expectile_grid_search(&q, &p, kappa);

        let config = HeadConfig { kind: HeadKind::Table, ..HeadConfig::default() };
        let mut rng = rng::rng(7);
        let mut bundle = CriticBundle::new(Encoder::for_env(env.as_ref()), ScaleSet::new(vec![2])?, 1, &config, &mut rng)?;
        for (c, &v) in chunks.iter().zip(&q) {
            bundle.heads_mut(HeadId::Q(2))?[0].set_entry(&state, c.actions(), v)?;
        }
        for _ in 0..3000 {
            let batch: Vec<ChunkedTransition> = (0..256)
                .map(|_| {
                    let mut u: f64 = rng.random();
                    let i = p.iter().position(|&w| { u -= w; u < 0.0 }).unwrap_or(3);
                    ChunkedTransition {
                        trajectory: 0,
                        start: 0,
                        state: state.clone(),
                        chunk: chunks[i].clone(),
                        valid_len: 2,
                        partial_return: 0.0,
                        next_state: state.clone(),
                        mask: 1.0,
                    }
                })
                .collect();
            let lg = vk_loss(&bundle, 2, &batch, kappa)?;
            bundle.apply(&lg)?;
        }
        let trained = bundle.v(2)?.predict(&[chunkrl::critics::Row::state(&state)], false)?[0];
        println!("{kappa:>6} {exact:>10.5} {grid:>10.5} {trained:>10.5}");
    }
    Ok(())
}
