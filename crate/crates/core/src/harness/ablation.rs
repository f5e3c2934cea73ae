use std::fmt;
use std::io::Write;
use std::str::FromStr;

use super::config::RunConfig;
use super::pipeline::load_dataset;
use crate::critics::BootstrapSource;
use crate::error::{Error, Result};
use crate::mdp::ScaleSet;
use crate::selector::SelectorVariant;
use crate::trainer::{csv_err, ReplayBuffer, Trainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Criterion,
    Adaptive,
    Bootstrap,
    Kappa,
    Zscore,
    ChunkH,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Criterion,
        AblationAxis::Adaptive,
        AblationAxis::Bootstrap,
        AblationAxis::Kappa,
        AblationAxis::Zscore,
        AblationAxis::ChunkH,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Criterion => "criterion",
            AblationAxis::Adaptive => "adaptive",
            AblationAxis::Bootstrap => "bootstrap",
            AblationAxis::Kappa => "kappa",
            AblationAxis::Zscore => "zscore",
            AblationAxis::ChunkH => "chunk_h",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation axis {s:?}")))
    }
}

/// One arm: a label and the config it runs.
#[derive(Clone, Debug)]
pub struct Arm {
    pub variant: String,
    pub config: RunConfig,
}

fn arm(variant: impl Into<String>, base: &RunConfig, edit: impl FnOnce(&mut RunConfig)) -> Arm {
    let mut config = base.clone();
    edit(&mut config);
    Arm { variant: variant.into(), config }
}

/// The arms of an axis, derived from `base`.
pub fn arms(which: AblationAxis, base: &RunConfig) -> Result<Vec<Arm>> {
    let h = base.scales.h;
    Ok(match which {
        AblationAxis::Criterion => [
            SelectorVariant::Aqc,
            SelectorVariant::RawQ,
            SelectorVariant::DiscountCorrected,
            SelectorVariant::Random,
        ]
        .into_iter()
        .map(|s| arm(s.to_string(), base, |c| c.selector = s))
        .collect(),
        AblationAxis::Adaptive => vec![
            arm("single_critic_fixed_h", base, |c| {
                c.scales.universe = vec![h];
                c.selector = SelectorVariant::Fixed(h);
            }),
            arm("multi_critic_fixed_h", base, |c| c.selector = SelectorVariant::Fixed(h)),
            arm("multi_critic_adaptive", base, |c| c.selector = SelectorVariant::Aqc),
        ],
        AblationAxis::Bootstrap => [
            ("v_h", BootstrapSource::ValueH),
            ("v_1", BootstrapSource::Value1),
            ("q_h", BootstrapSource::QhDirect),
        ]
        .into_iter()
        .map(|(name, b)| arm(name, base, |c| c.train.bootstrap = b))
        .collect(),
        AblationAxis::Kappa => {
            base.ablation.kappas.iter().map(|&k| arm(format!("kappa_{k}"), base, |c| c.train.kappa = k)).collect()
        }
        AblationAxis::Zscore => vec![
            arm("zscore", base, |c| c.selector = SelectorVariant::Aqc),
            arm("no_zscore", base, |c| c.selector = SelectorVariant::NoZscore),
        ],
        AblationAxis::ChunkH => base
            .ablation
            .horizons
            .iter()
            .map(|&hh| arm(format!("h_{hh}"), base, |c| c.scales.h = hh))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub step: usize,
    pub phase: &'static str,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_kstar: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub which: AblationAxis,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub const HEADER: [&'static str; 8] =
        ["which", "variant", "seed", "step", "phase", "success_rate", "mean_return", "mean_kstar"];

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::HEADER).map_err(csv_err)?;
        for r in &self.rows {
            out.write_record([
                self.which.as_str().to_string(),
                r.variant.clone(),
                r.seed.to_string(),
                r.step.to_string(),
                r.phase.to_string(),
                r.success_rate.to_string(),
                r.mean_return.to_string(),
                r.mean_kstar.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Mean final success per variant, in arm order.
    pub fn final_success(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64, usize)> = Vec::new();
        let last = |v: &str, s: u64| self.rows.iter().filter(|r| r.variant == v && r.seed == s).max_by_key(|r| r.step);
        let mut seen: Vec<(String, u64)> = Vec::new();
        for r in &self.rows {
            if seen.iter().any(|(v, s)| *v == r.variant && *s == r.seed) {
                continue;
            }
            seen.push((r.variant.clone(), r.seed));
            let fin = last(&r.variant, r.seed).expect("row exists").success_rate;
            match out.iter_mut().find(|(v, _, _)| *v == r.variant) {
                Some(e) => {
                    e.1 += fin;
                    e.2 += 1;
                }
                None => out.push((r.variant.clone(), fin, 1)),
            }
        }
        out.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect()
    }
}

/// Offline then online training of one arm at one seed; one row per eval point.
pub fn run_arm(arm: &Arm, seed: u64) -> Result<Vec<AblationRow>> {
    let mut config = arm.config.clone();
    config.seed = seed;
    config.train.seed = seed;
    let env = config.env.build()?;
    let ds = load_dataset(&config, env.as_ref())?;
    let scales: ScaleSet = config.scales.scale_set()?;
    let mut t = Trainer::new(config.train.clone(), env.as_ref(), &ds, scales.clone(), config.selector)?;
    let mut buf = ReplayBuffer::from_dataset(&ds, scales.horizon(), config.train.buffer_capacity, config.train.mix_ratio)?;
    t.offline_train(&buf)?;
    t.online_finetune(env.as_ref(), &mut buf)?;
    Ok(t.log
        .rows
        .iter()
        .filter_map(|r| {
            r.eval.as_ref().map(|e| AblationRow {
                variant: arm.variant.clone(),
                seed,
                step: r.step,
                phase: r.phase.as_str(),
                success_rate: e.success_rate,
                mean_return: e.mean_return,
                mean_kstar: e.mean_kstar,
            })
        })
        .collect())
}

/// Every arm of the axis on every configured seed. Seeds are paired: each
/// seed fixes the dataset and the training streams for all arms.
pub fn run_ablation(which: AblationAxis, config: &RunConfig) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for a in arms(which, config)? {
        for &seed in &config.ablation.seeds {
            log::info!("ablation {which}: {} seed {seed}", a.variant);
            rows.extend(run_arm(&a, seed)?);
        }
    }
    Ok(AblationTable { which, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::from_json_str(
            r#"{"env": {"kind": "chain", "params": {"length": 4, "p_slip": 0.0}},
                "data": {"episodes": 10},
                "scales": {"universe": [1, 2], "h": 2},
                "train": {"offline_steps": 20, "online_steps": 10, "batch_size": 8, "eval_episodes": 2, "log_interval": 10},
                "ablation": {"seeds": [0, 1], "kappas": [0.5, 0.9], "horizons": [1, 2]}}"#,
        )
        .unwrap()
    }

    #[test]
    fn axes_have_the_named_arms() {
        let b = base();
        let names = |w| arms(w, &b).unwrap().into_iter().map(|a| a.variant).collect::<Vec<_>>();
        assert_eq!(names(AblationAxis::Criterion), ["aqc", "raw_q", "discount_corrected", "random"]);
        assert_eq!(names(AblationAxis::Bootstrap), ["v_h", "v_1", "q_h"]);
        assert_eq!(names(AblationAxis::Kappa), ["kappa_0.5", "kappa_0.9"]);
        let single = &arms(AblationAxis::Adaptive, &b).unwrap()[0].config;
        assert_eq!(single.scales.scale_set().unwrap().as_slice(), &[2]);
        assert!("nonsense".parse::<AblationAxis>().is_err());
    }

    #[test]
    fn zscore_axis_runs_on_paired_seeds() {
        let t = run_ablation(AblationAxis::Zscore, &base()).unwrap();
        for v in ["zscore", "no_zscore"] {
            let seeds: Vec<u64> = t.rows.iter().filter(|r| r.variant == v).map(|r| r.seed).collect();
            assert!(seeds.contains(&0) && seeds.contains(&1));
        }
        assert_eq!(t.final_success().len(), 2);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("which,variant,seed,step,phase,success_rate"));
    }
}
