//! Chunked critics `Q^h`, `Q^k`, expectile baselines `V^h`, `V^k` and their
//! training losses.

mod head;

pub use head::{Encoder, Ensemble, Fit, Head, HeadConfig, HeadGrad, HeadKind, Row, StateEncoding, TableConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionChunk, ChunkedTransition, ScaleSet};
use crate::nn::Tensor;

/// `|kappa - 1[u < 0]| u^2` and its derivative in `u`.
pub fn expectile_loss(u: f64, kappa: f64) -> (f64, f64) {
    let w = if u < 0.0 { 1.0 - kappa } else { kappa };
    (w * u * u, 2.0 * w * u)
}

/// What the partial critics bootstrap from at `s_{t+k}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapSource {
    /// EMA shadow of `V^h`.
    #[default]
    ValueH,
    /// EMA shadow of `V^1`, the baseline of the one-step critic. Requires `1 in K`.
    Value1,
    /// EMAQ maximum of the `Q^h` shadow over behavior candidates at `s_{t+k}`.
    QhDirect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeadId {
    Q(usize),
    V(usize),
}

/// Per-member losses and gradients of one update.
#[derive(Clone, Debug)]
pub struct LossGrads {
    pub head: HeadId,
    pub losses: Vec<f64>,
    pub grads: Vec<HeadGrad>,
    pub batch: usize,
}

impl LossGrads {
    pub fn loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct CriticBundle {
    pub scales: ScaleSet,
    pub encoder: Encoder,
    pub q: Vec<Ensemble>,
    pub v: Vec<Head>,
}

impl CriticBundle {
    /// One Q ensemble and one V head per scale, `h` included.
    pub fn new<R: Rng>(
        encoder: Encoder,
        scales: ScaleSet,
        ensemble: usize,
        config: &HeadConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut q = Vec::new();
        let mut v = Vec::new();
        for &k in scales.as_slice() {
            q.push(Ensemble::new(encoder, k, ensemble, config, rng)?);
            v.push(Head::new(encoder, 0, config, rng)?);
        }
        Ok(CriticBundle { scales, encoder, q, v })
    }

    pub fn h(&self) -> usize {
        self.scales.horizon()
    }

    fn index(&self, k: usize) -> Result<usize> {
        self.scales
            .position(k)
            .ok_or_else(|| Error::invalid(format!("no critic head for k = {k} in {:?}", self.scales.as_slice())))
    }

    pub fn q(&self, k: usize) -> Result<&Ensemble> {
        Ok(&self.q[self.index(k)?])
    }

    pub fn v(&self, k: usize) -> Result<&Head> {
        Ok(&self.v[self.index(k)?])
    }

    pub fn q_h(&self) -> &Ensemble {
        self.q.last().expect("non-empty scale set")
    }

    pub fn v_h(&self) -> &Head {
        self.v.last().expect("non-empty scale set")
    }

    pub fn heads_mut(&mut self, id: HeadId) -> Result<Vec<&mut Head>> {
        match id {
            HeadId::Q(k) => {
                let i = self.index(k)?;
                Ok(self.q[i].members.iter_mut().collect())
            }
            HeadId::V(k) => {
                let i = self.index(k)?;
                Ok(vec![&mut self.v[i]])
            }
        }
    }

    /// Optimizer step and EMA update for the head the losses belong to.
    pub fn apply(&mut self, lg: &LossGrads) -> Result<()> {
        let batch = lg.batch;
        let heads = self.heads_mut(lg.head)?;
        if heads.len() != lg.grads.len() {
            return Err(Error::Shape("gradient count does not match ensemble size".into()));
        }
        for (h, g) in heads.into_iter().zip(&lg.grads) {
            h.apply(g, batch)?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (i, &k) in self.scales.as_slice().iter().enumerate() {
            for (j, m) in self.q[i].members.iter().enumerate() {
                out.extend(m.tensors(&format!("q{k}.{j}")));
            }
            out.extend(self.v[i].tensors(&format!("v{k}")));
        }
        out
    }

    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let scales = self.scales.as_slice().to_vec();
        for (i, &k) in scales.iter().enumerate() {
            for (j, m) in self.q[i].members.iter_mut().enumerate() {
                m.load_tensors(&format!("q{k}.{j}"), tensors)?;
            }
            self.v[i].load_tensors(&format!("v{k}"), tensors)?;
        }
        Ok(())
    }
}

fn check_len(batch: &[ChunkedTransition], k: usize) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    if let Some(t) = batch.iter().find(|t| t.chunk.len() != k) {
        return Err(Error::Shape(format!("chunk of length {} where {k} was expected", t.chunk.len())));
    }
    Ok(())
}

fn fit_ensemble(ens: &Ensemble, id: HeadId, rows: &[Row<'_>], targets: &[f64], fit: Fit) -> Result<LossGrads> {
    let mut losses = Vec::new();
    let mut grads = Vec::new();
    for m in &ens.members {
        let (l, g) = m.loss_grad(rows, targets, fit)?;
        losses.push(l);
        grads.push(g);
    }
    Ok(LossGrads { head: id, losses, grads, batch: rows.len() })
}

/// `max_i min_j Qbar^h_j(s', c_i)` over behavior candidates.
pub fn emaq_target(q_h: &Ensemble, s_next: &crate::mdp::StateRepr, candidates: &[ActionChunk]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptySupport("EMAQ target needs at least one candidate".into()));
    }
    let rows: Vec<Row<'_>> = candidates.iter().map(|c| Row::new(s_next, c.actions())).collect();
    Ok(q_h.predict_min(&rows, true)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

/// `R + gamma^k mask b` for every row, with `b` the bootstrap values.
pub fn td_targets(batch: &[ChunkedTransition], k: usize, gamma: f64, boot: &[f64]) -> Result<Vec<f64>> {
    if boot.len() != batch.len() {
        return Err(Error::Shape(format!("{} bootstrap values for {} rows", boot.len(), batch.len())));
    }
    let gk = gamma.powi(k as i32);
    Ok(batch
        .iter()
        .zip(boot)
        .map(|(t, &b)| t.partial_return + if t.mask == 0.0 { 0.0 } else { gk * t.mask * b })
        .collect())
}

/// EMAQ `h`-step TD: `Q^h(s, c)` regressed onto `R + gamma^h mask max_i Qbar^h(s', c_i)`.
/// `candidates[r]` are behavior chunks at row `r`'s next state; rows with mask 0 may
/// pass an empty list.
pub fn qh_loss(
    bundle: &CriticBundle,
    batch: &[ChunkedTransition],
    candidates: &[Vec<ActionChunk>],
    gamma: f64,
) -> Result<LossGrads> {
    let h = bundle.h();
    check_len(batch, h)?;
    if candidates.len() != batch.len() {
        return Err(Error::Shape("one candidate set per row is required".into()));
    }
    let boot = batch
        .iter()
        .zip(candidates)
        .map(|(t, c)| if t.mask == 0.0 { Ok(0.0) } else { emaq_target(bundle.q_h(), &t.next_state, c) })
        .collect::<Result<Vec<_>>>()?;
    let targets = td_targets(batch, h, gamma, &boot)?;
    let rows: Vec<Row<'_>> = batch.iter().map(|t| Row::new(&t.state, t.chunk.actions())).collect();
    fit_ensemble(bundle.q_h(), HeadId::Q(h), &rows, &targets, Fit::Mse)
}

/// Expectile regression of `V^k(s)` onto `min_j Qbar^k_j(s, c)` at the data chunk.
pub fn v_loss(bundle: &CriticBundle, k: usize, batch: &[ChunkedTransition], kappa: f64) -> Result<LossGrads> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::invalid(format!("kappa {kappa} outside (0, 1)")));
    }
    check_len(batch, k)?;
    let q_rows: Vec<Row<'_>> = batch.iter().map(|t| Row::new(&t.state, t.chunk.actions())).collect();
    let targets = bundle.q(k)?.predict_min(&q_rows, true)?;
    let rows: Vec<Row<'_>> = batch.iter().map(|t| Row::state(&t.state)).collect();
    let (l, g) = bundle.v(k)?.loss_grad(&rows, &targets, Fit::Expectile(kappa))?;
    Ok(LossGrads { head: HeadId::V(k), losses: vec![l], grads: vec![g], batch: rows.len() })
}

pub fn vh_loss(bundle: &CriticBundle, batch: &[ChunkedTransition], kappa: f64) -> Result<LossGrads> {
    v_loss(bundle, bundle.h(), batch, kappa)
}

pub fn vk_loss(bundle: &CriticBundle, k: usize, batch: &[ChunkedTransition], kappa: f64) -> Result<LossGrads> {
    v_loss(bundle, k, batch, kappa)
}

/// Bootstrap values at each row's `s_{t+k}`. Rows with mask 0 get 0.
pub fn bootstrap_values(
    bundle: &CriticBundle,
    source: BootstrapSource,
    batch: &[ChunkedTransition],
    candidates: Option<&[Vec<ActionChunk>]>,
) -> Result<Vec<f64>> {
    match source {
        BootstrapSource::ValueH | BootstrapSource::Value1 => {
            let head = match source {
                BootstrapSource::ValueH => bundle.v_h(),
                _ => bundle.v(1)?,
            };
            let rows: Vec<Row<'_>> = batch.iter().map(|t| Row::state(&t.next_state)).collect();
            let vals = head.predict(&rows, true)?;
            Ok(batch.iter().zip(vals).map(|(t, v)| if t.mask == 0.0 { 0.0 } else { v }).collect())
        }
        BootstrapSource::QhDirect => {
            let cands = candidates.ok_or_else(|| Error::invalid("Q^h bootstrap needs candidates"))?;
            if cands.len() != batch.len() {
                return Err(Error::Shape("one candidate set per row is required".into()));
            }
            batch
                .iter()
                .zip(cands)
                .map(|(t, c)| if t.mask == 0.0 { Ok(0.0) } else { emaq_target(bundle.q_h(), &t.next_state, c) })
                .collect()
        }
    }
}

/// `Q^k(s, c_{1:k})` regressed onto `R_k + gamma^k mask b(s_{t+k})`, with the
/// bootstrap values `b` held fixed.
pub fn qk_loss(
    bundle: &CriticBundle,
    k: usize,
    batch: &[ChunkedTransition],
    gamma: f64,
    boot: &[f64],
) -> Result<LossGrads> {
    check_len(batch, k)?;
    let targets = td_targets(batch, k, gamma, boot)?;
    let rows: Vec<Row<'_>> = batch.iter().map(|t| Row::new(&t.state, t.chunk.actions())).collect();
    fit_ensemble(bundle.q(k)?, HeadId::Q(k), &rows, &targets, Fit::Mse)
}
