use proptest::prelude::*;

use chunkrl::critics::expectile_loss;
use chunkrl::mdp::{chunk_starts, extract_chunks, Action, ActionChunk, Dataset, DatasetMeta, ScaleSet, StateRepr, Trajectory};
use chunkrl::oracle::{expectile, select_scale};
use chunkrl::rng;
use chunkrl::selector::{argmax_tiebreak, zscore, Z_EPS};
use chunkrl::trainer::ReplayBuffer;

const GAMMA: f64 = 0.9;

fn trajectory(rewards: Vec<f64>, terminal: bool) -> Trajectory {
    let n = rewards.len();
    Trajectory {
        states: (0..=n).map(StateRepr::Discrete).collect(),
        actions: (0..n).map(|t| Action::Discrete(t % 2)).collect(),
        rewards,
        terminal,
    }
}

fn arb_trajectory(max_len: usize) -> impl Strategy<Value = Trajectory> {
    (prop::collection::vec(-1.0f64..0.0, 1..max_len), any::<bool>()).prop_map(|(r, t)| trajectory(r, t))
}

fn weighted() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| (prop::collection::vec(-10.0f64..10.0, n), prop::collection::vec(0.05f64..1.0, n)))
}

proptest! {
    #[test]
    fn expectile_is_bounded_and_monotone_in_kappa((xs, ws) in weighted(), k1 in 0.05f64..0.95, dk in 0.0f64..0.04) {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = expectile(&xs, &ws, k1, 1e-12).unwrap();
        let b = expectile(&xs, &ws, k1 + dk, 1e-12).unwrap();
        prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
        prop_assert!(b >= a - 1e-9);
    }

    #[test]
    fn median_expectile_is_the_weighted_mean((xs, ws) in weighted()) {
        let mean = xs.iter().zip(&ws).map(|(x, w)| x * w).sum::<f64>() / ws.iter().sum::<f64>();
        prop_assert!((expectile(&xs, &ws, 0.5, 1e-12).unwrap() - mean).abs() <= 1e-9);
    }

    #[test]
    fn expectile_shifts_with_the_data((xs, ws) in weighted(), kappa in 0.05f64..0.95, c in -5.0f64..5.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = expectile(&xs, &ws, kappa, 1e-12).unwrap();
        let b = expectile(&shifted, &ws, kappa, 1e-12).unwrap();
        prop_assert!((b - a - c).abs() <= 1e-8);
    }

    #[test]
    fn expectile_loss_gradient_matches_difference(u in -5.0f64..5.0, kappa in 0.01f64..0.99) {
        prop_assume!(u.abs() > 1e-3);
        let h = 1e-6;
        let fd = (expectile_loss(u + h, kappa).0 - expectile_loss(u - h, kappa).0) / (2.0 * h);
        prop_assert!((expectile_loss(u, kappa).1 - fd).abs() <= 1e-6 * (1.0 + fd.abs()));
    }

    #[test]
    fn zscore_ignores_per_row_affine_maps(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..4),
        scale in prop::collection::vec(0.5f64..20.0, 4),
        shift in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        prop_assume!(rows.iter().all(|r| r.iter().any(|x| (x - r[0]).abs() > 0.1)));
        let mapped: Vec<Vec<f64>> = rows.iter().enumerate()
            .map(|(i, r)| r.iter().map(|x| scale[i] * x + shift[i]).collect())
            .collect();
        let (z0, z1) = (zscore(&rows, Z_EPS), zscore(&mapped, Z_EPS));
        for (a, b) in z0.iter().flatten().zip(z1.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn tie_breaks_agree_between_oracle_and_selector(a in prop::collection::vec(prop::sample::select(vec![-1.0, 0.0, 0.5]), 1..5)) {
        let (pick, delta) = select_scale(&a);
        let column: Vec<Vec<f64>> = a.iter().map(|&x| vec![x]).collect();
        prop_assert_eq!(argmax_tiebreak(&column).0, pick);
        prop_assert!(delta >= 0.0);
        prop_assert!(a[pick + 1..].iter().all(|&x| x < a[pick]));
    }

    #[test]
    fn scale_sets_are_sorted_and_distinct(ks in prop::collection::vec(1usize..20, 1..8)) {
        let s = ScaleSet::new(ks.clone()).unwrap();
        prop_assert!(s.as_slice().windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ks.iter().all(|k| s.contains(*k)));
        prop_assert_eq!(s.horizon(), *ks.iter().max().unwrap());
    }

    #[test]
    fn chunk_indices_roundtrip(idx in 0usize..243, len in 1usize..6, na in 2usize..4) {
        let idx = idx % na.pow(len as u32);
        let c = ActionChunk::from_discrete_index(idx, len, na);
        prop_assert_eq!(c.len(), len);
        prop_assert_eq!(c.discrete_index(na), Some(idx));
    }

    #[test]
    fn extracted_chunks_follow_their_trajectory(trajs in prop::collection::vec(arb_trajectory(12), 1..4), k in 1usize..5) {
        let ds = Dataset::new(DatasetMeta::default(), trajs.clone()).unwrap();
        let ex = extract_chunks(&ds, k, GAMMA).unwrap();
        if trajs.iter().all(|t| t.len() < k) {
            prop_assert!(ex.k_exceeds_all_episodes && ex.transitions.is_empty());
            return Ok(());
        }
        let expected: usize = trajs.iter().map(|t| chunk_starts(t, k, 1).count()).sum();
        prop_assert_eq!(ex.transitions.len(), expected);
        for c in &ex.transitions {
            let t = &trajs[c.trajectory];
            prop_assert_eq!(c.chunk.len(), k);
            prop_assert_eq!(c.valid_len, k.min(t.len() - c.start));
            let ret: f64 = t.rewards[c.start..c.start + c.valid_len].iter().enumerate().map(|(j, r)| GAMMA.powi(j as i32) * r).sum();
            prop_assert!((c.partial_return - ret).abs() <= 1e-12);
            prop_assert_eq!(c.mask == 0.0, t.terminal && c.start + k >= t.len());
            prop_assert_eq!(&c.next_state, &t.states[c.start + c.valid_len]);
            let last = &c.chunk.actions()[c.valid_len - 1];
            prop_assert!(c.chunk.actions()[c.valid_len..].iter().all(|a| a == last));
        }
    }

    #[test]
    fn offline_data_survives_online_pressure(
        offline in prop::collection::vec(arb_trajectory(10), 1..4),
        online in prop::collection::vec(arb_trajectory(10), 0..12),
        capacity in 1usize..30,
        ratio in 0.0f64..1.0,
        n in 1usize..64,
        seed in any::<u64>(),
    ) {
        let ds = Dataset::new(DatasetMeta::default(), offline.clone()).unwrap();
        let mut buf = ReplayBuffer::from_dataset(&ds, 1, capacity, ratio).unwrap();
        let offline_n = buf.offline_transitions();
        for t in online {
            buf.push_online(t).unwrap();
            prop_assert_eq!(buf.offline_transitions(), offline_n);
            prop_assert!(buf.online_transitions() <= capacity || buf.online_trajectories().count() == 1);
        }
        let batch = buf.sample(n, &mut rng::rng(seed)).unwrap();
        prop_assert_eq!(batch.len(), n);
        let off = batch.iter().filter(|w| w.source == chunkrl::trainer::Provenance::Offline).count();
        if buf.online_transitions() > 0 {
            prop_assert!((off as f64 - ratio * n as f64).abs() <= 1.0);
        } else {
            prop_assert_eq!(off, n);
        }
    }
}
