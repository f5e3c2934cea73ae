//! Flow-matching behavior cloning on a two-mode action distribution, then an
//! Euler-sampled histogram of the learned policy.

use rand::Rng;

use chunkrl::envs::ActionSpace;
use chunkrl::mdp::{Action, ActionChunk, StateRepr};
use chunkrl::nn::AdamWConfig;
use chunkrl::policy::{FlowConfig, FlowPolicy};
use chunkrl::rng;

fn main() -> chunkrl::Result<()> {
    let mut rng = rng::rng(13);
    let space = ActionSpace::Box { dim: 1, low: -2.0, high: 2.0 };
    let config = FlowConfig { width: 64, depth: 2, steps: 20, adam: AdamWConfig { lr: 1e-3, ..Default::default() } };
    let mut flow = FlowPolicy::new(1, space, 1, &config, &mut rng)?;
    let s = StateRepr::Continuous(vec![0.0]);

    for step in 0..3000 {
        let batch: Vec<(StateRepr, ActionChunk)> = (0..128)
            .map(|_| {
                let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (s.clone(), ActionChunk(vec![Action::Continuous(vec![a])]))
            })
            .collect();
        let (loss, grads) = flow.bc_loss(&batch, &mut rng)?;
        flow.apply(&grads)?;
        if step % 500 == 0 {
            println!("step {step:>4}  bc loss {loss:.4}");
        }
    }

    let xs: Vec<f64> =
        flow.sample_chunks(&s, 2000, 99)?.iter().map(|c| c.actions()[0].as_slice().expect("continuous")[0]).collect();
    let mut bins = [0usize; 16];
    for &x in &xs {
        bins[(((x + 2.0) / 4.0 * 16.0) as usize).min(15)] += 1;
    }
    println!();
    for (i, &n) in bins.iter().enumerate() {
        let lo = -2.0 + 0.25 * i as f64;
        println!("[{lo:+.2}, {:+.2})  {}", lo + 0.25, "#".repeat(n / 10));
    }
    let right = xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64;
    println!("\nmass right of 0: {right:.3}");
    Ok(())
}
