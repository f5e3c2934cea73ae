//! Per-scale advantage scoring, within-scale z-scores and the ablation selectors.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::critics::{CriticBundle, Row};
use crate::error::{Error, Result};
use crate::mdp::{ActionChunk, StateRepr};
use crate::oracle::TIE_TOL;

pub const Z_EPS: f64 = 1e-6;

/// `scores[ki][i]` for scale `scales[ki]` and candidate `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub scales: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(scales: Vec<usize>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if scales.is_empty() || scales.len() != scores.len() {
            return Err(Error::Shape(format!("{} scales for {} score rows", scales.len(), scores.len())));
        }
        let n = scores[0].len();
        if n == 0 || scores.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("score rows must be non-empty and of equal length".into()));
        }
        if scores.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("score matrix".into()));
        }
        Ok(ScoreMatrix { scales, scores })
    }

    pub fn n_candidates(&self) -> usize {
        self.scores[0].len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub k_star: usize,
    pub chunk_index: usize,
    /// The `k_star`-prefix of the winning candidate.
    pub chunk: ActionChunk,
    pub raw: Vec<Vec<f64>>,
    pub normalized: Vec<Vec<f64>>,
}

/// Population mean and standard deviation of each row.
pub fn row_stats(scores: &[Vec<f64>]) -> Vec<(f64, f64)> {
    scores
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// `(psi - mean_i) / (std_i + eps)` within each scale. A single candidate is
/// left unnormalized.
pub fn zscore(scores: &[Vec<f64>], eps: f64) -> Vec<Vec<f64>> {
    if scores.first().is_some_and(|r| r.len() < 2) {
        log::debug!("single candidate: z-scoring skipped");
        return scores.to_vec();
    }
    scores
        .iter()
        .zip(row_stats(scores))
        .map(|(r, (m, sd))| r.iter().map(|x| (x - m) / (sd + eps)).collect())
        .collect()
}

/// Global argmax over `(scale, candidate)`. Ties (within a relative
/// [`TIE_TOL`]) go to the larger scale, then to the lower candidate index.
pub fn argmax_tiebreak(scores: &[Vec<f64>]) -> (usize, usize) {
    let mut best = (scores.len() - 1, 0);
    let mut val = f64::NEG_INFINITY;
    for ki in (0..scores.len()).rev() {
        for (i, &x) in scores[ki].iter().enumerate() {
            if x > val + TIE_TOL * (1.0 + val.abs()) || val == f64::NEG_INFINITY {
                val = x;
                best = (ki, i);
            }
        }
    }
    best
}

fn q_values(bundle: &CriticBundle, k: usize, state: &StateRepr, candidates: &[ActionChunk]) -> Result<Vec<f64>> {
    let rows: Vec<Row<'_>> = candidates
        .iter()
        .map(|c| {
            if c.len() < k {
                return Err(Error::Shape(format!("candidate of length {} has no {k}-prefix", c.len())));
            }
            Ok(Row::new(state, &c.actions()[..k]))
        })
        .collect::<Result<_>>()?;
    bundle.q(k)?.predict_mean(&rows, false)
}

fn check_candidates(bundle: &CriticBundle, candidates: &[ActionChunk]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::invalid("at least one candidate is required"));
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != bundle.h()) {
        return Err(Error::Shape(format!("candidate of length {} for horizon {}", c.len(), bundle.h())));
    }
    Ok(())
}

/// `psi_k(i) = (Q^k(s, a_i[..k]) - V^k(s)) / gamma^k` from the live heads.
pub fn advantage_scores(
    bundle: &CriticBundle,
    state: &StateRepr,
    candidates: &[ActionChunk],
    gamma: f64,
) -> Result<ScoreMatrix> {
    check_candidates(bundle, candidates)?;
    let scales = bundle.scales.as_slice().to_vec();
    let mut scores = Vec::with_capacity(scales.len());
    for &k in &scales {
        let v = bundle.v(k)?.predict(&[Row::state(state)], false)?[0];
        let gk = gamma.powi(k as i32);
        scores.push(q_values(bundle, k, state, candidates)?.into_iter().map(|q| (q - v) / gk).collect());
    }
    ScoreMatrix::new(scales, scores)
}

/// `Q^k(s, a_i[..k])` for every scale, optionally divided by `gamma^k`.
pub fn q_scores(
    bundle: &CriticBundle,
    state: &StateRepr,
    candidates: &[ActionChunk],
    gamma: f64,
    discount_corrected: bool,
) -> Result<ScoreMatrix> {
    check_candidates(bundle, candidates)?;
    let scales = bundle.scales.as_slice().to_vec();
    let mut scores = Vec::with_capacity(scales.len());
    for &k in &scales {
        let div = if discount_corrected { gamma.powi(k as i32) } else { 1.0 };
        scores.push(q_values(bundle, k, state, candidates)?.into_iter().map(|q| q / div).collect());
    }
    ScoreMatrix::new(scales, scores)
}

fn result(m: ScoreMatrix, normalized: Vec<Vec<f64>>, (ki, i): (usize, usize), candidates: &[ActionChunk]) -> SelectionResult {
    let k_star = m.scales[ki];
    SelectionResult { k_star, chunk_index: i, chunk: candidates[i].prefix(k_star), raw: m.scores, normalized }
}

pub fn zscore_and_select(m: ScoreMatrix, candidates: &[ActionChunk]) -> SelectionResult {
    let z = zscore(&m.scores, Z_EPS);
    let pick = argmax_tiebreak(&z);
    result(m, z, pick, candidates)
}

/// Argmax of the matrix as given.
pub fn select_raw(m: ScoreMatrix, candidates: &[ActionChunk]) -> SelectionResult {
    let pick = argmax_tiebreak(&m.scores);
    let n = m.scores.clone();
    result(m, n, pick, candidates)
}

pub fn raw_q_select(bundle: &CriticBundle, state: &StateRepr, candidates: &[ActionChunk], gamma: f64) -> Result<SelectionResult> {
    Ok(select_raw(q_scores(bundle, state, candidates, gamma, false)?, candidates))
}

pub fn discount_corrected_select(
    bundle: &CriticBundle,
    state: &StateRepr,
    candidates: &[ActionChunk],
    gamma: f64,
) -> Result<SelectionResult> {
    Ok(select_raw(q_scores(bundle, state, candidates, gamma, true)?, candidates))
}

/// Uniform over `(scale, candidate)` pairs.
pub fn random_select<R: Rng + ?Sized>(scales: &[usize], candidates: &[ActionChunk], rng: &mut R) -> Result<SelectionResult> {
    if candidates.is_empty() || scales.is_empty() {
        return Err(Error::invalid("random selection needs candidates and scales"));
    }
    let ki = rng.random_range(0..scales.len());
    let i = rng.random_range(0..candidates.len());
    let zeros = vec![vec![0.0; candidates.len()]; scales.len()];
    Ok(result(ScoreMatrix { scales: scales.to_vec(), scores: zeros.clone() }, zeros, (ki, i), candidates))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectorVariant {
    /// Z-scored discount-normalized advantage.
    #[default]
    Aqc,
    /// Advantage argmax without z-scoring.
    NoZscore,
    RawQ,
    DiscountCorrected,
    Random,
    /// Best-of-N under `Q^k` at a single scale.
    Fixed(usize),
}

impl fmt::Display for SelectorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorVariant::Aqc => f.write_str("aqc"),
            SelectorVariant::NoZscore => f.write_str("no_zscore"),
            SelectorVariant::RawQ => f.write_str("raw_q"),
            SelectorVariant::DiscountCorrected => f.write_str("discount_corrected"),
            SelectorVariant::Random => f.write_str("random"),
            SelectorVariant::Fixed(k) => write!(f, "fixed:{k}"),
        }
    }
}

impl FromStr for SelectorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "aqc" => SelectorVariant::Aqc,
            "no_zscore" => SelectorVariant::NoZscore,
            "raw_q" => SelectorVariant::RawQ,
            "discount_corrected" => SelectorVariant::DiscountCorrected,
            "random" => SelectorVariant::Random,
            other => match other.strip_prefix("fixed:").map(str::parse::<usize>) {
                Some(Ok(k)) if k > 0 => SelectorVariant::Fixed(k),
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown selector {other:?}; expected aqc | no_zscore | raw_q | discount_corrected | random | fixed:<k>"
                    )))
                }
            },
        })
    }
}

impl TryFrom<String> for SelectorVariant {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SelectorVariant> for String {
    fn from(v: SelectorVariant) -> String {
        v.to_string()
    }
}

/// Pick `(k*, chunk)` at `state` from `h`-step candidates.
pub fn select<R: Rng + ?Sized>(
    variant: SelectorVariant,
    bundle: &CriticBundle,
    state: &StateRepr,
    candidates: &[ActionChunk],
    gamma: f64,
    rng: &mut R,
) -> Result<SelectionResult> {
    match variant {
        SelectorVariant::Aqc => Ok(zscore_and_select(advantage_scores(bundle, state, candidates, gamma)?, candidates)),
        SelectorVariant::NoZscore => Ok(select_raw(advantage_scores(bundle, state, candidates, gamma)?, candidates)),
        SelectorVariant::RawQ => raw_q_select(bundle, state, candidates, gamma),
        SelectorVariant::DiscountCorrected => discount_corrected_select(bundle, state, candidates, gamma),
        SelectorVariant::Random => random_select(bundle.scales.as_slice(), candidates, rng),
        SelectorVariant::Fixed(k) => {
            check_candidates(bundle, candidates)?;
            let q = q_values(bundle, k, state, candidates)?;
            Ok(select_raw(ScoreMatrix::new(vec![k], vec![q])?, candidates))
        }
    }
}
