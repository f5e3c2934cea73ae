//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --release --test acceptance` runs the whole suite. Criteria
//! listed in `EXPECTED_FAIL` are implemented at full strength and print FAIL;
//! they do not fail the run. Any other failure, or an expected failure that
//! starts passing, exits non-zero.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use chunkrl::critics::{
    qh_loss, qk_loss, vh_loss, vk_loss, CriticBundle, Encoder, HeadConfig, HeadGrad, HeadId, HeadKind, LossGrads,
};
use chunkrl::envs::{
    generate_dataset, BehaviorPolicySpec, ChainEnv, ChainParams, DiscreteModel, Env, EnvSpec, GridParams, PointMassParams,
    Region, TwoPhaseGridEnv,
};
use chunkrl::harness::{
    dominance, noise_immunity, pipeline, run_ablation, sparse_line, AblationAxis, NoiseMode, RunConfig,
};
use chunkrl::harness::{expectile_agreement, soundness_trials};
use chunkrl::mdp::{extract_chunks, ActionChunk, ChunkedTransition, ScaleSet, StateRepr};
use chunkrl::oracle::{chunk_value, BehaviorSource, Budget, OracleTables, DEFAULT_NODE_BUDGET};
use chunkrl::policy::{ChunkSampler, FlowConfig, FlowPolicy};
use chunkrl::rng;
use chunkrl::selector::{raw_q_select, select, SelectorVariant};
use chunkrl::trainer::{offline_train, TrainConfig, Trainer};

/// Criteria whose claim does not hold on these instances; see README.
const EXPECTED_FAIL: [usize; 4] = [3, 5, 6, 9];

const GAMMA: f64 = 0.99;
const SEEDS: [u64; 4] = [0, 1, 2, 3];

// 1
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, for near-zero gradients.
const FD_FLOOR: f64 = 1e-6;
const FD_MIN_PROBES: usize = 100;
// 2
const EXPECTILE_TOL: f64 = 0.02;
const GRID_SEARCH_TOL: f64 = 1e-6;
// 3
const SOUNDNESS_DRAWS: usize = 1000;
const SOUNDNESS_FRACTION: f64 = 0.999;
// 4
const NOISE_EPS: f64 = 0.01;
const NOISE_DRAWS: usize = 10_000;
// 5
const RAW_Q_KMIN_MIN: f64 = 0.95;
const AQC_KMIN_MAX: f64 = 0.60;
// 6
const DOMINANCE_TOL: f64 = 1e-9;
// 9
const KSTAR_GAP: f64 = 1.0;
// 10
const SUCCESS_MIN: f64 = 0.9;
// 11
const MODE_SPLIT_TOL: f64 = 0.07;
const FLOW_SAMPLES: usize = 2000;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn behavior() -> BehaviorPolicySpec {
    BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() }
}

fn tables(model: &dyn DiscreteModel, scales: &[usize], kappa: f64) -> OracleTables {
    let spec = behavior();
    OracleTables::compute(model, GAMMA, &ScaleSet::new(scales.to_vec()).unwrap(), kappa, BehaviorSource::Exact(&spec), DEFAULT_NODE_BUDGET)
        .unwrap()
}

fn chain(length: usize, p_slip: f64) -> ChainEnv {
    ChainEnv::new(ChainParams { length, p_slip }).unwrap()
}

fn contact_grid() -> GridParams {
    GridParams { width: 7, height: 3, contact_width: 3, p_contact: 0.3, tau_acc: 2.0, ..GridParams::default() }
}

// ---- 1: gradients -------------------------------------------------------

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Central differences of member losses against the analytic member gradients.
fn probe_heads(
    bundle: &mut CriticBundle,
    id: HeadId,
    loss: &dyn Fn(&CriticBundle) -> LossGrads,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let lg = loss(bundle);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let m = rng.random_range(0..lg.grads.len());
        let HeadGrad::Dense(g) = &lg.grads[m] else { panic!("network heads give dense gradients") };
        let i = rng.random_range(0..g.len());
        let orig = bundle.heads_mut(id).unwrap()[m].params()[i];
        let mut at = |x: f64| {
            bundle.heads_mut(id).unwrap()[m].params_mut()[i] = x;
            loss(bundle).losses[m]
        };
        let fd = (at(orig + FD_STEP) - at(orig - FD_STEP)) / (2.0 * FD_STEP);
        bundle.heads_mut(id).unwrap()[m].params_mut()[i] = orig;
        worst = worst.max(rel_err(g[i], fd));
    }
    worst
}

fn criterion_gradients() -> Verdict {
    let mut rng = rng::rng(11);
    let shapes = [(8, 1), (16, 2), (12, 3)];
    let per = FD_MIN_PROBES.div_ceil(2 * shapes.len());
    let mut worst = [0.0f64; 5];
    let mut count = [0usize; 5];
    let envs = [EnvSpec::chain(6, 0.1), EnvSpec::PointMass(PointMassParams::default())];
    for spec in &envs {
        let env = spec.build().unwrap();
        let ds = generate_dataset(env.as_ref(), &behavior(), 3, 5).unwrap();
        let take = |k: usize| -> Vec<ChunkedTransition> {
            extract_chunks(&ds, k, GAMMA).unwrap().transitions.into_iter().step_by(3).take(12).collect()
        };
        let (b1, b3) = (take(1), take(3));
        let cands: Vec<Vec<ActionChunk>> = b3.iter().map(|_| b3.iter().take(4).map(|t| t.chunk.clone()).collect()).collect();
        let boot: Vec<f64> = (0..b1.len()).map(|i| -1.0 + 0.1 * i as f64).collect();
        for &(width, depth) in &shapes {
            let config = HeadConfig { kind: HeadKind::Net, width, depth, final_scale: 1.0, ..HeadConfig::default() };
            let mut bundle =
                CriticBundle::new(Encoder::for_env(env.as_ref()), ScaleSet::new(vec![1, 3]).unwrap(), 2, &config, &mut rng)
                    .unwrap();
            // decouple live parameters from the shadows that form the targets
            for id in [HeadId::Q(1), HeadId::Q(3), HeadId::V(1), HeadId::V(3)] {
                for h in bundle.heads_mut(id).unwrap() {
                    for p in h.params_mut() {
                        *p += 0.05 * (2.0 * rng.random::<f64>() - 1.0);
                    }
                }
            }
            let cases: [(usize, HeadId, Box<dyn Fn(&CriticBundle) -> LossGrads>); 4] = [
                (0, HeadId::Q(3), Box::new(|b: &CriticBundle| qh_loss(b, &b3, &cands, GAMMA).unwrap())),
                (1, HeadId::V(3), Box::new(|b: &CriticBundle| vh_loss(b, &b3, 0.9).unwrap())),
                (2, HeadId::Q(1), Box::new(|b: &CriticBundle| qk_loss(b, 1, &b1, GAMMA, &boot).unwrap())),
                (3, HeadId::V(1), Box::new(|b: &CriticBundle| vk_loss(b, 1, &b1, 0.7).unwrap())),
            ];
            for (slot, id, f) in cases.iter() {
                worst[*slot] = worst[*slot].max(probe_heads(&mut bundle, *id, f.as_ref(), per, &mut rng));
                count[*slot] += per;
            }
        }
    }
    // flow BC on continuous chunks of several widths
    let pm = EnvSpec::PointMass(PointMassParams::default()).build().unwrap();
    let ds = generate_dataset(pm.as_ref(), &behavior(), 3, 6).unwrap();
    let flow_shapes = [(1, 8, 1), (3, 16, 2), (2, 12, 3)];
    for &(h, width, depth) in &flow_shapes {
        let cfg = FlowConfig { width, depth, ..FlowConfig::default() };
        let mut flow = FlowPolicy::new(pm.feature_dim(), pm.action_space(), h, &cfg, &mut rng).unwrap();
        let batch: Vec<(StateRepr, ActionChunk)> = extract_chunks(&ds, h, GAMMA)
            .unwrap()
            .transitions
            .into_iter()
            .step_by(5)
            .take(10)
            .map(|t| (t.state, t.chunk))
            .collect();
        let noise = flow.draw(batch.len(), &mut rng);
        let (_, g) = flow.bc_loss_with(&batch, &noise).unwrap();
        let n = FD_MIN_PROBES.div_ceil(flow_shapes.len());
        for _ in 0..n {
            let i = rng.random_range(0..g.len());
            let orig = flow.params()[i];
            flow.params_mut()[i] = orig + FD_STEP;
            let lp = flow.bc_loss_with(&batch, &noise).unwrap().0;
            flow.params_mut()[i] = orig - FD_STEP;
            let lm = flow.bc_loss_with(&batch, &noise).unwrap().0;
            flow.params_mut()[i] = orig;
            worst[4] = worst[4].max(rel_err(g[i], (lp - lm) / (2.0 * FD_STEP)));
        }
        count[4] += n;
    }
    let names = ["qh", "vh", "qk", "vk", "bc"];
    let pass = worst.iter().all(|&w| w < FD_REL_TOL) && count.iter().all(|&c| c >= FD_MIN_PROBES);
    let detail = names.iter().zip(worst.iter().zip(&count)).map(|(n, (w, c))| format!("{n} {w:.1e}/{c}")).collect::<Vec<_>>();
    verdict(pass, format!("max rel err/probes: {} (tol {FD_REL_TOL:e})", detail.join(", ")))
}

// ---- 2: expectiles ------------------------------------------------------

/// Fix `Q^k` to the oracle tables, regress the V heads on behavior chunks and
/// return the largest gap to the oracle baselines.
fn fit_baselines(model: &dyn DiscreteModel, env: &dyn Env, t: &OracleTables, steps: usize, seed: u64) -> f64 {
    let mut rng = rng::rng(seed);
    let config = HeadConfig { kind: HeadKind::Table, ..HeadConfig::default() };
    let mut bundle = CriticBundle::new(Encoder::for_env(env), t.scales.clone(), 1, &config, &mut rng).unwrap();
    let ks = t.scales.as_slice().to_vec();
    for (ki, &k) in ks.iter().enumerate() {
        for s in 0..model.n_states() {
            for (&c, &q) in &t.q_k[ki][s] {
                let head = &mut bundle.heads_mut(HeadId::Q(k)).unwrap()[0];
                head.set_entry(&StateRepr::Discrete(s), t.chunk(c, k).actions(), q).unwrap();
            }
        }
    }
    for (ki, &k) in ks.iter().enumerate() {
        let states: Vec<usize> = (0..model.n_states()).filter(|&s| !t.v_k_beta[s][ki].is_nan()).collect();
        for _ in 0..steps {
            let batch: Vec<ChunkedTransition> = (0..1024)
                .map(|_| {
                    let s = states[rng.random_range(0..states.len())];
                    let mut u = rng.random::<f64>();
                    let mut pick = *t.pi_beta[ki][s].keys().last().unwrap();
                    for (&c, &w) in &t.pi_beta[ki][s] {
                        if u < w {
                            pick = c;
                            break;
                        }
                        u -= w;
                    }
                    ChunkedTransition {
                        trajectory: 0,
                        start: 0,
                        state: StateRepr::Discrete(s),
                        chunk: t.chunk(pick, k),
                        valid_len: k,
                        partial_return: 0.0,
                        next_state: StateRepr::Discrete(s),
                        mask: 1.0,
                    }
                })
                .collect();
            let lg = vk_loss(&bundle, k, &batch, t.kappa).unwrap();
            bundle.apply(&lg).unwrap();
        }
    }
    let mut worst: f64 = 0.0;
    for (ki, &k) in ks.iter().enumerate() {
        for s in 0..model.n_states() {
            let target = t.v_k_beta[s][ki];
            if target.is_nan() {
                continue;
            }
            let st = StateRepr::Discrete(s);
            let v = bundle.v(k).unwrap().predict(&[chunkrl::critics::Row::state(&st)], false).unwrap()[0];
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

fn criterion_expectiles() -> Verdict {
    let mut fit: f64 = 0.0;
    let mut grid: f64 = 0.0;
    let c = chain(6, 0.1);
    let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
    let cenv = EnvSpec::chain(6, 0.1).build().unwrap();
    let genv = EnvSpec::grid(GridParams::default()).build().unwrap();
    for kappa in [0.5, 0.9] {
        let tc = tables(&c, &[1, 2, 3], kappa);
        let tg = tables(&g, &[1, 2], kappa);
        fit = fit.max(fit_baselines(&c, cenv.as_ref(), &tc, 6000, 1));
        fit = fit.max(fit_baselines(&g, genv.as_ref(), &tg, 6000, 2));
        grid = grid.max(expectile_agreement(&tc).unwrap()).max(expectile_agreement(&tg).unwrap());
    }
    verdict(
        fit <= EXPECTILE_TOL && grid <= GRID_SEARCH_TOL,
        format!("trained V vs oracle {fit:.2e} (tol {EXPECTILE_TOL}); bisection vs grid {grid:.2e} (tol {GRID_SEARCH_TOL:e})"),
    )
}

// ---- 3: soundness -------------------------------------------------------

fn criterion_soundness() -> Verdict {
    let c = chain(8, 0.1);
    let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
    let line = sparse_line(12, 0.9, 1.0);
    let instances: [(&str, &dyn DiscreteModel, &[usize]); 3] =
        [("chain", &c, &[1, 2, 4]), ("grid", &g, &[1, 5]), ("line", &line, &[1, 2, 3])];
    let mut rng = rng::rng(3);
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, model, ks) in instances {
        let t = tables(model, ks, 0.9);
        let kmin = t.scales.min();
        let r = soundness_trials(&t, NoiseMode::Random, kmin, SOUNDNESS_DRAWS, SOUNDNESS_FRACTION, &mut rng);
        let a = soundness_trials(&t, NoiseMode::Adversarial, kmin, 1, SOUNDNESS_FRACTION, &mut rng);
        pass &= r.trials > 0 && r.mismatches == 0 && a.mismatches == 0;
        parts.push(format!("{name}: random {}/{} adversarial {}/{}", r.mismatches, r.trials, a.mismatches, a.trials));
    }
    verdict(pass, format!("mismatches {}", parts.join("; ")))
}

// ---- 4: noise immunity --------------------------------------------------

fn criterion_noise_immunity() -> Verdict {
    let mut rng = rng::rng(4);
    let mut pass = true;
    let mut parts = Vec::new();
    for sigma in [0.05, 0.1] {
        let (o, _) = noise_immunity(GAMMA, 0.9, NOISE_EPS, sigma, NOISE_DRAWS, &mut rng).unwrap();
        pass &= o.violations == 0 && o.states > 0;
        parts.push(format!("sigma {sigma}: max |delta| {:.4} <= {:.4}, {} violations over {} states", o.max_abs_delta, o.bound, o.violations, o.states));
    }
    verdict(pass, parts.join("; "))
}

// ---- learned runs shared by 5, 8, 9, 10 ---------------------------------

fn train_run(spec: &EnvSpec, scales: &[usize], selector: SelectorVariant, steps: (usize, usize), seed: u64, edit: impl Fn(&mut TrainConfig)) -> Trainer {
    let env = spec.build().unwrap();
    let ds = generate_dataset(env.as_ref(), &BehaviorPolicySpec::default(), 200, seed).unwrap();
    let mut config =
        TrainConfig { offline_steps: steps.0, online_steps: steps.1, eval_interval: 0, seed, ..TrainConfig::desk() };
    edit(&mut config);
    let (mut t, mut buf) = offline_train(&config, env.as_ref(), &ds, ScaleSet::new(scales.to_vec()).unwrap(), selector).unwrap();
    t.online_finetune(env.as_ref(), &mut buf).unwrap();
    t
}

fn final_success(t: &Trainer) -> f64 {
    t.log.last_eval().expect("final eval").success_rate
}

const SCALES: [usize; 2] = [1, 5];
const CHAIN_STEPS: (usize, usize) = (5_000, 5_000);
const GRID_STEPS: (usize, usize) = (10_000, 10_000);

// ---- 5: raw-Q collapse --------------------------------------------------

fn criterion_raw_q(chain_runs: &[Trainer]) -> Verdict {
    let (mut raw_min, mut aqc_min, mut n) = (0usize, 0usize, 0usize);
    for t in chain_runs {
        let (_, episodes) = t.evaluate_now().unwrap();
        let mut rng = rng::rng(5);
        let agent = &t.agent;
        for tr in episodes.iter().flat_map(|e| &e.traces) {
            let cands = agent.behavior.sample(&tr.state, agent.n_candidates, &mut rng).unwrap();
            let raw = raw_q_select(&agent.bundle, &tr.state, &cands, GAMMA).unwrap();
            let adv = select(SelectorVariant::Aqc, &agent.bundle, &tr.state, &cands, GAMMA, &mut rng).unwrap();
            raw_min += (raw.k_star == SCALES[0]) as usize;
            aqc_min += (adv.k_star == SCALES[0]) as usize;
            n += 1;
        }
    }
    let (fr, fa) = (raw_min as f64 / n as f64, aqc_min as f64 / n as f64);
    verdict(
        fr >= RAW_Q_KMIN_MIN && fa < AQC_KMIN_MAX,
        format!("k_min share over {n} decisions: raw_q {fr:.3} (need >= {RAW_Q_KMIN_MIN}), aqc {fa:.3} (need < {AQC_KMIN_MAX})"),
    )
}

// ---- 6: exact dominance -------------------------------------------------

fn criterion_dominance() -> Verdict {
    let g = TwoPhaseGridEnv::new(GridParams::default()).unwrap();
    let t = tables(&g, &SCALES, 0.9);
    let d = dominance(&g, &t).unwrap();
    let deficit = d.worst_deficit();
    let gains = d.best_gain();
    let strict = gains.iter().all(|&(_, gain)| gain > 0.0);
    let gains: Vec<String> = gains.iter().map(|(k, g)| format!("k={k}: {g:.3e}")).collect();
    verdict(
        deficit <= DOMINANCE_TOL && strict,
        format!("worst deficit {deficit:.4} (tol {DOMINANCE_TOL:e}); best gain per fixed k {}", gains.join(", ")),
    )
}

// ---- 7: bootstrap bound with learned Q^k --------------------------------

/// One open-loop execution of `chunk` from `s`, sampled from the exact model.
fn open_loop_sample(model: &dyn DiscreteModel, s: usize, chunk: &ActionChunk, rng: &mut ChaCha8Rng) -> ChunkedTransition {
    let (mut cur, mut ret, mut disc, mut valid, mut mask) = (s, 0.0, 1.0, 0, 1.0);
    for (j, a) in chunk.actions().iter().enumerate() {
        let outs = model.outcomes(cur, a.index().unwrap(), j);
        let mut u = rng.random::<f64>();
        let o = outs.iter().find(|o| { u -= o.prob; u < 0.0 }).unwrap_or(outs.last().unwrap());
        ret += disc * o.reward;
        disc *= GAMMA;
        cur = o.next;
        valid += 1;
        if o.terminal {
            mask = 0.0;
            break;
        }
    }
    ChunkedTransition {
        trajectory: 0,
        start: 0,
        state: StateRepr::Discrete(s),
        chunk: chunk.clone(),
        valid_len: valid,
        partial_return: ret,
        next_state: StateRepr::Discrete(cur),
        mask,
    }
}

/// Q^k regressed on open-loop samples that bootstrap from a perturbed V^h;
/// the bound uses the realized perturbation and the measured residual to the
/// exact fixed point.
fn criterion_bootstrap_bound() -> Verdict {
    let model = chain(8, 0.1);
    let env = EnvSpec::chain(8, 0.1).build().unwrap();
    let scales = ScaleSet::new(vec![1, 2, 4]).unwrap();
    let t = tables(&model, scales.as_slice(), 0.9);
    let live: Vec<usize> = (0..model.n_states()).filter(|&s| !model.is_terminal(s)).collect();
    let mut rng = rng::rng(7);
    let mut budget = Budget::new(DEFAULT_NODE_BUDGET);
    let mut worst_slack = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for eps_h in [0.1, 0.5] {
        let v_boot: Vec<f64> = t.v_star.iter().map(|v| v + eps_h * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let config = HeadConfig { kind: HeadKind::Table, ..HeadConfig::default() };
        let mut bundle = CriticBundle::new(Encoder::for_env(env.as_ref()), scales.clone(), 1, &config, &mut rng).unwrap();
        let h = scales.horizon();
        for s in 0..model.n_states() {
            bundle.heads_mut(HeadId::V(h)).unwrap()[0].set_entry(&StateRepr::Discrete(s), &[], v_boot[s]).unwrap();
        }
        let realized = live.iter().map(|&s| (v_boot[s] - t.v_star[s]).abs()).fold(0.0, f64::max);
        for (ki, &k) in scales.as_slice().iter().enumerate() {
            let pairs: Vec<(usize, ActionChunk)> =
                live.iter().flat_map(|&s| t.pi_beta[ki][s].keys().map(move |&c| (s, c))).map(|(s, c)| (s, t.chunk(c, k))).collect();
            for _ in 0..4000 {
                let batch: Vec<ChunkedTransition> = (0..256)
                    .map(|_| {
                        let (s, c) = &pairs[rng.random_range(0..pairs.len())];
                        open_loop_sample(&model, *s, c, &mut rng)
                    })
                    .collect();
                let boot = chunkrl::critics::bootstrap_values(&bundle, chunkrl::critics::BootstrapSource::ValueH, &batch, None).unwrap();
                let lg = qk_loss(&bundle, k, &batch, GAMMA, &boot).unwrap();
                bundle.apply(&lg).unwrap();
            }
            let gk = GAMMA.powi(k as i32);
            let (mut err, mut fit): (f64, f64) = (0.0, 0.0);
            for (s, c) in &pairs {
                let st = StateRepr::Discrete(*s);
                let q = bundle.q(k).unwrap().predict_mean(&[chunkrl::critics::Row::new(&st, c.actions())], false).unwrap()[0];
                let acts: Vec<usize> = c.actions().iter().map(|a| a.index().unwrap()).collect();
                let q_star = chunk_value(&model, &t.v_star, *s, &acts, GAMMA, &mut budget).unwrap();
                let target = chunk_value(&model, &v_boot, *s, &acts, GAMMA, &mut budget).unwrap();
                err = err.max((q - q_star).abs());
                fit = fit.max((q - target).abs());
            }
            let bound = gk / (1.0 - gk) * realized + fit / (1.0 - gk);
            worst_slack = worst_slack.max(err - bound);
            parts.push(format!("eps_h {eps_h} k={k}: {err:.4} <= {bound:.4} (fit {fit:.4})"));
        }
    }
    verdict(worst_slack <= 0.0, parts.join("; "))
}

// ---- 8: bootstrap source ordering ---------------------------------------

fn criterion_bootstrap_order() -> Verdict {
    let spec = EnvSpec::chain(20, 0.1);
    let mut means = Vec::new();
    for source in [chunkrl::critics::BootstrapSource::ValueH, chunkrl::critics::BootstrapSource::Value1] {
        let s: f64 = SEEDS
            .iter()
            .map(|&seed| final_success(&train_run(&spec, &SCALES, SelectorVariant::Aqc, CHAIN_STEPS, seed, |c| c.bootstrap = source)))
            .sum::<f64>()
            / SEEDS.len() as f64;
        means.push(s);
    }
    verdict(means[0] >= means[1], format!("mean final success V^h {:.3} vs V^1 {:.3} (L=20, 4 seeds)", means[0], means[1]))
}

// ---- 9: adaptivity signature --------------------------------------------

fn criterion_adaptivity() -> Verdict {
    let params = contact_grid();
    let grid = TwoPhaseGridEnv::new(params.clone()).unwrap();
    let spec = EnvSpec::grid(params);
    let mut acc = [(0.0, 0usize); 2];
    for &seed in &SEEDS {
        let t = train_run(&spec, &SCALES, SelectorVariant::Aqc, GRID_STEPS, seed, |_| {});
        let (_, episodes) = t.evaluate_now().unwrap();
        for tr in episodes.iter().flat_map(|e| &e.traces) {
            let i = (grid.region(tr.state.index().unwrap()) == Region::Contact) as usize;
            acc[i].0 += tr.k_star as f64;
            acc[i].1 += 1;
        }
    }
    let mean = |i: usize| if acc[i].1 == 0 { f64::NAN } else { acc[i].0 / acc[i].1 as f64 };
    let (corridor, contact) = (mean(0), mean(1));
    verdict(
        corridor - contact >= KSTAR_GAP,
        format!(
            "mean k* corridor {corridor:.3} (n={}) vs contact {contact:.3} (n={}), need gap >= {KSTAR_GAP}",
            acc[0].1, acc[1].1
        ),
    )
}

// ---- 10: end to end -----------------------------------------------------

fn criterion_end_to_end(chain_aqc: &[Trainer]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    let grid = EnvSpec::grid(GridParams::default());
    let chain_spec = EnvSpec::chain(15, 0.1);
    for (name, spec, steps) in [("chain", &chain_spec, CHAIN_STEPS), ("grid", &grid, GRID_STEPS)] {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let aqc: Vec<f64> = if name == "chain" {
            chain_aqc.iter().map(final_success).collect()
        } else {
            SEEDS.iter().map(|&s| final_success(&train_run(spec, &SCALES, SelectorVariant::Aqc, steps, s, |_| {}))).collect()
        };
        let mut best_fixed = f64::NEG_INFINITY;
        let mut fixed_parts = Vec::new();
        for &k in &SCALES {
            let m = mean(
                &SEEDS
                    .iter()
                    .map(|&s| final_success(&train_run(spec, &SCALES, SelectorVariant::Fixed(k), steps, s, |_| {})))
                    .collect::<Vec<_>>(),
            );
            best_fixed = best_fixed.max(m);
            fixed_parts.push(format!("fixed:{k} {m:.3}"));
        }
        let worst = aqc.iter().copied().fold(f64::INFINITY, f64::min);
        pass &= worst >= SUCCESS_MIN && mean(&aqc) >= best_fixed;
        parts.push(format!("{name}: aqc min {worst:.3} mean {:.3}, {}", mean(&aqc), fixed_parts.join(" ")));
    }
    verdict(pass, parts.join("; "))
}

// ---- 11: flow bimodal ---------------------------------------------------

fn criterion_flow() -> Verdict {
    let mut rng = rng::rng(13);
    let space = chunkrl::envs::ActionSpace::Box { dim: 1, low: -2.0, high: 2.0 };
    let cfg = FlowConfig { width: 64, depth: 2, steps: 20, adam: chunkrl::nn::AdamWConfig { lr: 1e-3, ..Default::default() } };
    let mut flow = FlowPolicy::new(1, space, 1, &cfg, &mut rng).unwrap();
    let s = StateRepr::Continuous(vec![0.0]);
    for _ in 0..3000 {
        let batch: Vec<(StateRepr, ActionChunk)> = (0..128)
            .map(|_| {
                let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (s.clone(), ActionChunk(vec![chunkrl::mdp::Action::Continuous(vec![a])]))
            })
            .collect();
        let (_, g) = flow.bc_loss(&batch, &mut rng).unwrap();
        flow.apply(&g).unwrap();
    }
    let xs: Vec<f64> =
        flow.sample_chunks(&s, FLOW_SAMPLES, 99).unwrap().iter().map(|c| c.actions()[0].as_slice().unwrap()[0]).collect();
    let right = xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64;
    let near = xs.iter().filter(|&&x| (x.abs() - 1.0).abs() < 0.25).count() as f64 / xs.len() as f64;
    verdict(
        (right - 0.5).abs() <= MODE_SPLIT_TOL && near > 0.5,
        format!("mass right of 0: {right:.3} (0.5 +- {MODE_SPLIT_TOL}); within 0.25 of a mode: {near:.3}"),
    )
}

// ---- 12: determinism ----------------------------------------------------

fn pipeline_outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let text = format!(
        r#"{{"env": {{"kind": "two_phase_grid", "params": {{"width": 4, "height": 3, "contact_width": 1}}}},
            "data": {{"episodes": 30}},
            "scales": {{"universe": [1, 2, 3], "h": 3}},
            "train": {{"offline_steps": 300, "online_steps": 300, "batch_size": 32, "eval_episodes": 5, "log_interval": 50, "eval_interval": 150}},
            "ablation": {{"seeds": [0, 1]}},
            "output_dir": {:?}, "seed": 5}}"#,
        dir.to_str().unwrap()
    );
    let mut c = RunConfig::from_json_str(&text).unwrap();
    let out = c.prepare_output().unwrap();
    pipeline::gen_data(&c, &out).unwrap();
    pipeline::finetune(&c, &out).unwrap();
    pipeline::evaluate(&c, &out).unwrap();
    let table = run_ablation(AblationAxis::Zscore, &c).unwrap();
    let mut abl = Vec::new();
    table.write_csv(&mut abl).unwrap();
    let mut files: Vec<(String, Vec<u8>)> = [
        pipeline::DATASET_FILE,
        pipeline::METRICS_OFFLINE,
        pipeline::METRICS_ONLINE,
        pipeline::TRACES_FILE,
        pipeline::EVAL_TRACES_FILE,
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(out.join(f)).unwrap()))
    .collect();
    files.push(("ablation_zscore.csv".into(), abl));
    files
}

fn criterion_determinism() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (x, y) = (pipeline_outputs(a.path()), pipeline_outputs(b.path()));
    let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();
    let bytes: usize = x.iter().map(|f| f.1.len()).sum();
    verdict(
        differing.is_empty() && bytes > 0,
        format!("{} files, {bytes} bytes compared; differing: {:?}", x.len(), differing),
    )
}

// ---- driver -------------------------------------------------------------

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let mut chain_runs: Vec<Trainer> = Vec::new();
    if wanted(5) || wanted(10) {
        let spec = EnvSpec::chain(15, 0.1);
        chain_runs = SEEDS.iter().map(|&s| train_run(&spec, &SCALES, SelectorVariant::Aqc, CHAIN_STEPS, s, |_| {})).collect();
    }
    let criteria: Vec<(usize, &str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        (1, "gradient correctness", Box::new(criterion_gradients)),
        (2, "expectile exactness", Box::new(criterion_expectiles)),
        (3, "selector soundness", Box::new(criterion_soundness)),
        (4, "noise immunity", Box::new(criterion_noise_immunity)),
        (5, "raw-Q collapse", Box::new(|| criterion_raw_q(&chain_runs))),
        (6, "exact dominance", Box::new(criterion_dominance)),
        (7, "bootstrap bound", Box::new(criterion_bootstrap_bound)),
        (8, "bootstrap-source ordering", Box::new(criterion_bootstrap_order)),
        (9, "adaptivity signature", Box::new(criterion_adaptivity)),
        (10, "end-to-end learning", Box::new(|| criterion_end_to_end(&chain_runs))),
        (11, "flow-matching sanity", Box::new(criterion_flow)),
        (12, "determinism", Box::new(criterion_determinism)),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in &criteria {
        if !wanted(*id) {
            continue;
        }
        let t0 = Instant::now();
        let v = run();
        let expected = EXPECTED_FAIL.contains(id);
        let tag = match (v.pass, expected) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (expected to fail)",
        };
        if v.pass == expected {
            unexpected.push(*id);
        }
        println!("criterion {id:>2} {name:<26} {tag}: {} [{:.1}s]", v.detail, t0.elapsed().as_secs_f64());
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
