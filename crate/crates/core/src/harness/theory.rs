use rand::Rng;
use serde::Serialize;

use crate::envs::{DiscreteModel, TabularEdge, TabularMdp, BehaviorPolicySpec};
use crate::error::{Error, Result};
use crate::mdp::ScaleSet;
use crate::oracle::{
    evaluate_meta_policy, expectile, expectile_objective, open_loop, select_scale, BehaviorSource, Budget,
    MetaPolicySpec, OracleTables, DEFAULT_NODE_BUDGET, EXPECTILE_TOL,
};
use crate::rng;

/// One verified inequality: `pass` iff `measured <= bound + tolerance`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryRecord {
    pub check: String,
    pub instance_hash: String,
    pub bound: f64,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub margin: f64,
}

impl TheoryRecord {
    pub fn new(check: impl Into<String>, instance_hash: &str, bound: f64, measured: f64, tolerance: f64) -> Result<Self> {
        let check = check.into();
        if !bound.is_finite() || !measured.is_finite() {
            return Err(Error::NonFinite(format!("{check}: bound {bound}, measured {measured}")));
        }
        Ok(TheoryRecord {
            check,
            instance_hash: instance_hash.to_string(),
            bound,
            measured,
            tolerance,
            pass: measured <= bound + tolerance,
            margin: bound - measured,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TheoryReport {
    pub records: Vec<TheoryRecord>,
}

impl TheoryReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn get(&self, check: &str) -> Option<&TheoryRecord> {
        self.records.iter().find(|r| r.check == check)
    }
}

/// 64-bit FNV-1a of a canonical JSON description, as hex.
pub fn instance_hash(desc: &serde_json::Value) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in desc.to_string().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

fn describe(model: &dyn DiscreteModel, t: &OracleTables, extra: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "env": model.name(),
        "params": model.params(),
        "gamma": t.gamma,
        "kappa": t.kappa,
        "scales": t.scales.as_slice(),
        "extra": extra,
    })
}

/// Minimizer of the expectile objective by repeated grid refinement.
pub fn expectile_grid_search(values: &[f64], weights: &[f64], kappa: f64) -> f64 {
    let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi - lo <= 0.0 {
        return lo;
    }
    let n = 1000;
    while hi - lo > 1e-12 * (1.0 + lo.abs()) {
        let step = (hi - lo) / n as f64;
        let (best, _) = (0..=n)
            .map(|i| (i, expectile_objective(values, weights, kappa, lo + step * i as f64)))
            .fold((0, f64::INFINITY), |(bi, bv), (i, v)| if v < bv { (i, v) } else { (bi, bv) });
        let c = lo + step * best as f64;
        (lo, hi) = (c - step, c + step);
    }
    0.5 * (lo + hi)
}

/// Largest gap between bisection and grid-search expectiles over every
/// supported `(state, scale)` of `t`.
pub fn expectile_agreement(t: &OracleTables) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for ki in 0..t.scales.len() {
        for s in 0..t.v_star.len() {
            let pb = &t.pi_beta[ki][s];
            if pb.is_empty() {
                continue;
            }
            let (vals, ws): (Vec<f64>, Vec<f64>) = pb.iter().map(|(c, &w)| (t.q_k[ki][s][c], w)).unzip();
            let b = expectile(&vals, &ws, t.kappa, EXPECTILE_TOL)?;
            worst = worst.max((b - expectile_grid_search(&vals, &ws, t.kappa)).abs());
        }
    }
    Ok(worst)
}

/// How critic errors are drawn in the soundness trials.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    /// Uniform errors within the per-scale budgets.
    Random,
    /// Worst case against `k_dagger`: its advantages pushed down, a rival's up.
    Adversarial,
}

/// Best discount-normalized advantage per scale at `s` under additive errors
/// `eq(ki, chunk)` on `Q^k` and `ev(ki)` on `V^k`.
fn noisy_a_bar(
    t: &OracleTables,
    s: usize,
    mut eq: impl FnMut(usize, u64) -> f64,
    mut ev: impl FnMut(usize) -> f64,
) -> Vec<f64> {
    t.scales
        .as_slice()
        .iter()
        .enumerate()
        .map(|(ki, &k)| {
            let base = t.v_k_beta[s][ki] + ev(ki);
            t.pi_beta[ki][s]
                .keys()
                .map(|&c| (t.q_k[ki][s][&c] + eq(ki, c) - base) / t.gamma.powi(k as i32))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn separated_states(t: &OracleTables) -> Vec<usize> {
    (0..t.delta.len()).filter(|&s| t.k_dagger[s].is_some() && t.delta[s] > 0.0 && t.delta[s].is_finite()).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoundnessOutcome {
    /// `(state, draw)` pairs evaluated.
    pub trials: usize,
    pub mismatches: usize,
    /// Largest `|A_hat^{k_hat}(s) - A^{k_dagger,*}(s)|` minus the selector-regret
    /// bound at that state; non-positive when the bound holds everywhere.
    pub worst_regret_slack: f64,
}

/// Perturb critics with composite error `eps_bar(s) = fraction * Delta(s) *
/// gamma^{threshold_k} / 2` split evenly between `Q^k` and `V^k`, and compare
/// the selector with `k_dagger` at every state with `Delta(s) > 0`.
pub fn soundness_trials<R: Rng>(
    t: &OracleTables,
    mode: NoiseMode,
    threshold_k: usize,
    draws: usize,
    fraction: f64,
    rng: &mut R,
) -> SoundnessOutcome {
    let ks = t.scales.as_slice();
    let kmin = t.scales.min();
    let diam = range_of_advantages(t);
    let mut out = SoundnessOutcome { worst_regret_slack: f64::NEG_INFINITY, ..Default::default() };
    for s in separated_states(t) {
        let delta = t.delta[s];
        let truth = t.k_dagger[s].expect("separated");
        let kd = t.scale_index(truth).expect("k_dagger in K");
        let f_true = t.a_bar[s][kd];
        let plans: Vec<Option<usize>> = match mode {
            NoiseMode::Random => vec![None; draws],
            NoiseMode::Adversarial => (0..ks.len()).filter(|&r| r != kd).map(Some).collect(),
        };
        for rival in plans {
            let frac = match mode {
                NoiseMode::Random => fraction * rng.random::<f64>(),
                NoiseMode::Adversarial => fraction,
            };
            let eps_bar = frac * delta * t.gamma.powi(threshold_k as i32) / 2.0;
            let half = eps_bar / 2.0;
            let a_hat = match rival {
                None => {
                    let mut draw = || half * (2.0 * rng.random::<f64>() - 1.0);
                    let eq: Vec<Vec<(u64, f64)>> =
                        (0..ks.len()).map(|ki| t.pi_beta[ki][s].keys().map(|&c| (c, draw())).collect()).collect();
                    let ev: Vec<f64> = (0..ks.len()).map(|_| draw()).collect();
                    noisy_a_bar(
                        t,
                        s,
                        |ki, c| eq[ki].iter().find(|(cc, _)| *cc == c).map(|p| p.1).unwrap_or(0.0),
                        |ki| ev[ki],
                    )
                }
                Some(r) => noisy_a_bar(
                    t,
                    s,
                    |ki, _| if ki == kd { -half } else if ki == r { half } else { 0.0 },
                    |ki| if ki == kd { half } else if ki == r { -half } else { 0.0 },
                ),
            };
            let (pick, _) = select_scale(&a_hat);
            out.trials += 1;
            if ks[pick] != truth {
                out.mismatches += 1;
            }
            let lhs = (a_hat[pick] - f_true).abs();
            let rhs = eps_bar + 2.0 * eps_bar / (t.gamma.powi(kmin as i32) * delta) * diam;
            out.worst_regret_slack = out.worst_regret_slack.max(lhs - rhs);
        }
    }
    if out.trials == 0 {
        out.worst_regret_slack = 0.0;
    }
    out
}

/// `max_k (sup A^{k,*} - inf A^{k,*})` over the behavior support, normalized.
fn range_of_advantages(t: &OracleTables) -> f64 {
    let mut best: f64 = 0.0;
    for (ki, &k) in t.scales.as_slice().iter().enumerate() {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..t.v_star.len() {
            let base = t.v_k_beta[s][ki];
            if base.is_nan() {
                continue;
            }
            for (c, q) in &t.q_k[ki][s] {
                if t.pi_beta[ki][s].contains_key(c) {
                    let a = (q - base) / t.gamma.powi(k as i32);
                    lo = lo.min(a);
                    hi = hi.max(a);
                }
            }
        }
        if hi >= lo {
            best = best.max(hi - lo);
        }
    }
    best
}

/// Exact values of the oracle-adaptive meta policy and of each fixed scale.
pub struct DominanceOutcome {
    pub adaptive: Vec<f64>,
    pub fixed: Vec<(usize, Vec<f64>)>,
}

impl DominanceOutcome {
    /// `max_s max_k V^k(s) - V^adaptive(s)`; non-positive under dominance.
    pub fn worst_deficit(&self) -> f64 {
        self.fixed
            .iter()
            .flat_map(|(_, v)| v.iter().zip(&self.adaptive).map(|(f, a)| f - a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per scale, the largest improvement of adaptive over fixed.
    pub fn best_gain(&self) -> Vec<(usize, f64)> {
        self.fixed
            .iter()
            .map(|(k, v)| (*k, v.iter().zip(&self.adaptive).map(|(f, a)| a - f).fold(f64::NEG_INFINITY, f64::max)))
            .collect()
    }
}

pub fn dominance(model: &dyn DiscreteModel, t: &OracleTables) -> Result<DominanceOutcome> {
    let adaptive = evaluate_meta_policy(model, t, &MetaPolicySpec::oracle(t), t.gamma)?;
    let fixed = t
        .scales
        .as_slice()
        .iter()
        .map(|&k| Ok((k, evaluate_meta_policy(model, t, &MetaPolicySpec::Fixed(k), t.gamma)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DominanceOutcome { adaptive, fixed })
}

/// Per scale, `||Q^k_fp - Q^{k,*}||_inf` over the behavior support when the
/// bootstrap is `v_boot` instead of `V*`: `Q^k_fp = R_k + gamma^k E[v_boot(s_k)]`.
pub fn bootstrap_errors(model: &dyn DiscreteModel, t: &OracleTables, v_boot: &[f64]) -> Result<Vec<f64>> {
    let mut budget = Budget::new(DEFAULT_NODE_BUDGET);
    let na = model.n_actions();
    let mut out = Vec::new();
    for (ki, &k) in t.scales.as_slice().iter().enumerate() {
        let gk = t.gamma.powi(k as i32);
        let mut worst: f64 = 0.0;
        for s in 0..t.v_star.len() {
            for &c in t.pi_beta[ki][s].keys() {
                let acts: Vec<usize> = crate::mdp::ActionChunk::from_discrete_index(c as usize, k, na)
                    .actions()
                    .iter()
                    .map(|a| a.index().expect("discrete"))
                    .collect();
                let ol = open_loop(model, s, &acts, t.gamma, &mut budget)?;
                let diff: f64 = ol.alive.iter().enumerate().map(|(j, p)| p * (v_boot[j] - t.v_star[j])).sum();
                worst = worst.max((gk * diff).abs());
            }
        }
        out.push(worst);
    }
    Ok(out)
}

/// `V*` plus `eps_h * u(s)` with `u` uniform in `[-1, 1]` (`random`) or `u = 1`.
pub fn perturbed_values<R: Rng>(v_star: &[f64], eps_h: f64, random: bool, rng: &mut R) -> Vec<f64> {
    v_star.iter().map(|v| v + eps_h * if random { 2.0 * rng.random::<f64>() - 1.0 } else { 1.0 }).collect()
}

/// Slack of the bootstrap bound `gamma^k/(1-gamma^k) eps_h + eps_k/(1-gamma^k)`:
/// the largest `error_k - bound_k` over scales.
pub fn bootstrap_bound_slack(scales: &[usize], gamma: f64, errors: &[f64], eps_h: f64, fit: &[f64]) -> f64 {
    scales
        .iter()
        .zip(errors)
        .zip(fit)
        .map(|((&k, &e), &f)| {
            let gk = gamma.powi(k as i32);
            e - (gk / (1.0 - gk) * eps_h + f / (1.0 - gk))
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Slack of value-flow monotonicity over all pairs `k1 < k2`.
pub fn value_flow_slack(scales: &[usize], gamma: f64, errors: &[f64], fit: &[f64]) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..scales.len() {
        for j in i + 1..scales.len() {
            let ratio = gamma.powi(scales[i] as i32) / gamma.powi(scales[j] as i32);
            let extra = ((fit[i] - ratio * fit[j]) / (1.0 - gamma.powi(scales[i] as i32))).max(0.0);
            worst = worst.max(errors[i] - (ratio * errors[j] + extra));
        }
    }
    worst
}

/// A line of `n` states with an absorbing goal past the right end. Action 0
/// moves right with probability `p_move` (else stays), action 1 moves left.
/// The only reward is `reward` on entering the goal.
pub fn sparse_line(n: usize, p_move: f64, reward: f64) -> TabularMdp {
    let goal = n;
    let edge = |next: usize, prob: f64| TabularEdge { next, prob, reward: if next == goal { reward } else { 0.0 } };
    let mut transitions = Vec::with_capacity(n + 1);
    for s in 0..n {
        let right = vec![edge(s + 1, p_move), edge(s, 1.0 - p_move)];
        transitions.push(vec![right, vec![edge(s.saturating_sub(1), 1.0)]]);
    }
    transitions.push(vec![]);
    TabularMdp {
        n_states: n + 1,
        n_actions: 2,
        transitions,
        terminal: vec![goal],
        start: 0,
        expert: Some(vec![0; n + 1]),
        horizon_cap: 4 * (n + 1),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseImmunityOutcome {
    pub max_abs_delta: f64,
    pub bound: f64,
    pub violations: usize,
    pub draws: usize,
    pub states: usize,
}

/// Noise immunity on a sparse line whose left part has `V* <= eps`. The
/// region is the set of states from which every `h`-step continuation stays
/// where `V* <= eps`, so exact `Q^k / gamma^k` and `V^k / gamma^k` lie in
/// `[0, eps]`. Errors of at most `sigma` are added to both normalized values.
pub fn noise_immunity<R: Rng>(
    gamma: f64,
    kappa: f64,
    eps: f64,
    sigma: f64,
    draws: usize,
    rng: &mut R,
) -> Result<(NoiseImmunityOutcome, serde_json::Value)> {
    let scales = ScaleSet::new(vec![1, 2, 5])?;
    let h = scales.horizon();
    // gamma^(d-1) <= eps once d exceeds this many steps from the goal
    let d0 = (eps.ln() / gamma.ln()).ceil() as usize + 1;
    let n = d0 + h + 8;
    let line = sparse_line(n, 0.9, 1.0);
    let spec = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
    let t = OracleTables::compute(&line, gamma, &scales, kappa, BehaviorSource::Exact(&spec), DEFAULT_NODE_BUDGET)?;
    // state s is n - s steps from the goal
    let region: Vec<usize> = (0..n).filter(|&s| n - s >= d0 + h && t.v_star[s] <= eps).collect();
    let mut out = NoiseImmunityOutcome { max_abs_delta: 0.0, bound: eps + 2.0 * sigma, violations: 0, draws, states: region.len() };
    for _ in 0..draws {
        for &s in &region {
            for (ki, &k) in scales.as_slice().iter().enumerate() {
                let gk = gamma.powi(k as i32);
                let v = t.v_k_beta[s][ki] / gk + sigma * (2.0 * rng.random::<f64>() - 1.0);
                for (c, q) in &t.q_k[ki][s] {
                    if !t.pi_beta[ki][s].contains_key(c) {
                        continue;
                    }
                    let d = q / gk + sigma * (2.0 * rng.random::<f64>() - 1.0) - v;
                    out.max_abs_delta = out.max_abs_delta.max(d.abs());
                    if d.abs() > out.bound + 1e-12 {
                        out.violations += 1;
                    }
                }
            }
        }
    }
    let desc = serde_json::json!({"env": "sparse_line", "n": n, "gamma": gamma, "kappa": kappa, "eps": eps, "sigma": sigma});
    Ok((out, desc))
}

/// Knobs for [`verify_theory`].
#[derive(Clone, Debug)]
pub struct TheorySettings {
    pub random_draws: usize,
    pub eps_h: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub noise_eps: f64,
    pub noise_draws: usize,
    pub seed: u64,
}

impl Default for TheorySettings {
    fn default() -> Self {
        TheorySettings {
            random_draws: 1000,
            eps_h: vec![0.1, 0.5],
            sigmas: vec![0.05, 0.1],
            noise_eps: 0.01,
            noise_draws: 10_000,
            seed: 0,
        }
    }
}

/// Every check on one finite instance plus the constructed noise-immunity
/// instance.
pub fn verify_theory(model: &dyn DiscreteModel, t: &OracleTables, settings: &TheorySettings) -> Result<TheoryReport> {
    let mut r = TheoryReport::default();
    let hash = instance_hash(&describe(model, t, serde_json::Value::Null));
    let mut rng = rng::child(settings.seed, 0x7E0);
    let ks = t.scales.as_slice().to_vec();
    let (kmin, kmax) = (t.scales.min(), t.scales.horizon());

    r.records.push(TheoryRecord::new("expectile_bisection_vs_grid", &hash, 1e-6, expectile_agreement(t)?, 0.0)?);

    let random = soundness_trials(t, NoiseMode::Random, kmin, settings.random_draws, 0.999, &mut rng);
    r.records.push(TheoryRecord::new("selector_soundness_random", &hash, 0.0, random.mismatches as f64, 0.0)?);
    let adv = soundness_trials(t, NoiseMode::Adversarial, kmin, 1, 0.999, &mut rng);
    r.records.push(TheoryRecord::new("selector_soundness_adversarial", &hash, 0.0, adv.mismatches as f64, 0.0)?);
    let adv_max = soundness_trials(t, NoiseMode::Adversarial, kmax, 1, 0.999, &mut rng);
    r.records.push(TheoryRecord::new("selector_soundness_adversarial_kmax", &hash, 0.0, adv_max.mismatches as f64, 0.0)?);
    r.records.push(TheoryRecord::new("selector_regret", &hash, 0.0, random.worst_regret_slack.max(adv.worst_regret_slack), 1e-12)?);

    let dom = dominance(model, t)?;
    r.records.push(TheoryRecord::new("dominance", &hash, 0.0, dom.worst_deficit(), 1e-9)?);
    let min_gain = dom.best_gain().into_iter().map(|(_, g)| g).fold(f64::INFINITY, f64::min);
    r.records.push(TheoryRecord::new("strict_dominance", &hash, -1e-12, -min_gain, 0.0)?);

    let zero = vec![0.0; ks.len()];
    for &eps_h in &settings.eps_h {
        for random in [false, true] {
            let v = perturbed_values(&t.v_star, eps_h, random, &mut rng);
            let err = bootstrap_errors(model, t, &v)?;
            let tag = if random { "random" } else { "shift" };
            r.records.push(TheoryRecord::new(
                format!("bootstrap_regularization_{tag}_eps{eps_h}"),
                &hash,
                0.0,
                bootstrap_bound_slack(&ks, t.gamma, &err, eps_h, &zero),
                1e-12,
            )?);
            r.records.push(TheoryRecord::new(
                format!("value_flow_monotonicity_{tag}_eps{eps_h}"),
                &hash,
                0.0,
                value_flow_slack(&ks, t.gamma, &err, &zero),
                1e-12,
            )?);
        }
    }

    for &sigma in &settings.sigmas {
        let (ni, desc) = noise_immunity(t.gamma, t.kappa, settings.noise_eps, sigma, settings.noise_draws, &mut rng)?;
        r.records.push(TheoryRecord::new(format!("noise_immunity_sigma{sigma}"), &instance_hash(&desc), ni.bound, ni.max_abs_delta, 1e-12)?);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::ChainEnv;
    use crate::envs::ChainParams;

    fn chain_tables(l: usize, p: f64) -> (ChainEnv, OracleTables) {
        let env = ChainEnv::new(ChainParams { length: l, p_slip: p }).unwrap();
        let spec = BehaviorPolicySpec { epsilon: 0.3, ..BehaviorPolicySpec::default() };
        let t = OracleTables::compute(&env, 0.99, &ScaleSet::new(vec![1, 2]).unwrap(), 0.9, BehaviorSource::Exact(&spec), DEFAULT_NODE_BUDGET)
            .unwrap();
        (env, t)
    }

    #[test]
    fn grid_search_finds_the_two_point_expectile() {
        let v = expectile_grid_search(&[-1.0, 0.0], &[0.5, 0.5], 0.9);
        assert!((v + 0.1).abs() < 1e-7);
    }

    #[test]
    fn record_pass_follows_the_tolerance() {
        assert!(TheoryRecord::new("x", "h", 1.0, 1.0 + 1e-13, 1e-12).unwrap().pass);
        assert!(!TheoryRecord::new("x", "h", 1.0, 1.1, 1e-12).unwrap().pass);
        assert!(TheoryRecord::new("x", "h", f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn exact_bootstrap_has_no_error() {
        let (env, t) = chain_tables(4, 0.1);
        let err = bootstrap_errors(&env, &t, &t.v_star).unwrap();
        assert!(err.iter().all(|&e| e < 1e-12));
        let shifted: Vec<f64> = t.v_star.iter().map(|v| v + 0.5).collect();
        let err = bootstrap_errors(&env, &t, &shifted).unwrap();
        assert!(err[0] <= 0.99 * 0.5 + 1e-12 && err[0] > 0.0);
    }

    #[test]
    fn zero_noise_never_flips() {
        let (_, t) = chain_tables(4, 0.1);
        let out = soundness_trials(&t, NoiseMode::Random, 1, 20, 0.0, &mut rng::rng(0));
        assert_eq!(out.mismatches, 0);
    }

    #[test]
    fn sparse_line_values_decay_geometrically() {
        let line = sparse_line(6, 1.0, 1.0);
        let vi = crate::oracle::value_iteration(&line, 0.5, 1e-12).unwrap();
        assert!((vi.v[5] - 1.0).abs() < 1e-9);
        assert!((vi.v[3] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn instance_hash_is_stable() {
        let d = serde_json::json!({"a": 1});
        assert_eq!(instance_hash(&d), instance_hash(&serde_json::json!({"a": 1})));
        assert_ne!(instance_hash(&d), instance_hash(&serde_json::json!({"a": 2})));
    }
}
