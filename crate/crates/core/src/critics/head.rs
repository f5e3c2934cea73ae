use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::{ActionSpace, Env};
use crate::error::{Error, Result};
use crate::mdp::{Action, StateRepr};
use crate::nn::{AdamW, AdamWConfig, DenseNet, EmaTarget, Tensor};

/// How states are fed to network heads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateEncoding {
    OneHot(usize),
    Raw(usize),
}

/// Maps `(state, chunk)` rows to network inputs and table keys.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub state: StateEncoding,
    pub space: ActionSpace,
}

impl Encoder {
    pub fn for_env(env: &dyn Env) -> Self {
        let state = match env.discrete() {
            Some(m) => StateEncoding::OneHot(m.n_states()),
            None => StateEncoding::Raw(env.feature_dim()),
        };
        Encoder { state, space: env.action_space() }
    }

    pub fn state_dim(&self) -> usize {
        match self.state {
            StateEncoding::OneHot(n) | StateEncoding::Raw(n) => n,
        }
    }

    /// Network input width for a head over `k`-action chunks.
    pub fn input_dim(&self, k: usize) -> usize {
        self.state_dim() + k * self.space.encoded_dim()
    }

    pub fn encode(&self, row: &Row<'_>, out: &mut Vec<f64>) -> Result<()> {
        match (self.state, row.state) {
            (StateEncoding::OneHot(n), StateRepr::Discrete(i)) if *i < n => {
                let base = out.len();
                out.resize(base + n, 0.0);
                out[base + i] = 1.0;
            }
            (StateEncoding::Raw(d), StateRepr::Continuous(v)) if v.len() == d => out.extend_from_slice(v),
            (_, s) => return Err(Error::Shape(format!("state {s:?} does not match encoding {:?}", self.state))),
        }
        for a in row.chunk {
            if !self.space.contains(a) {
                return Err(Error::Shape(format!("action {a:?} outside {:?}", self.space)));
            }
            self.space.encode_into(a, out);
        }
        Ok(())
    }

    fn batch(&self, rows: &[Row<'_>], k: usize) -> Result<Array2<f64>> {
        let width = self.input_dim(k);
        let mut flat = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.chunk.len() != k {
                return Err(Error::Shape(format!("chunk of length {} for a head over {k} actions", r.chunk.len())));
            }
            self.encode(r, &mut flat)?;
        }
        Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("row widths checked"))
    }

    fn key(&self, row: &Row<'_>, k: usize) -> Result<(usize, u64)> {
        let s = row.state.index().ok_or_else(|| Error::NotDiscrete("table heads need discrete states".into()))?;
        let n = match self.space {
            ActionSpace::Discrete(n) => n as u64,
            ActionSpace::Box { .. } => return Err(Error::NotDiscrete("table heads need discrete actions".into())),
        };
        if row.chunk.len() != k {
            return Err(Error::Shape(format!("chunk of length {} for a head over {k} actions", row.chunk.len())));
        }
        let mut idx = 0u64;
        for a in row.chunk {
            match a {
                Action::Discrete(i) if (*i as u64) < n => idx = idx * n + *i as u64,
                other => return Err(Error::Shape(format!("action {other:?} outside {:?}", self.space))),
            }
        }
        Ok((s, idx))
    }
}

/// One `(state, chunk)` query. Value heads use an empty chunk.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub state: &'a StateRepr,
    pub chunk: &'a [Action],
}

impl<'a> Row<'a> {
    pub fn new(state: &'a StateRepr, chunk: &'a [Action]) -> Self {
        Row { state, chunk }
    }

    pub fn state(state: &'a StateRepr) -> Self {
        Row { state, chunk: &[] }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Dense network (required for continuous states or actions).
    #[default]
    Net,
    /// One parameter per observed `(state, chunk)`; discrete tiers only.
    Table,
}

/// Step size of table entries: `max((1 + n)^-power, floor)` after `n` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub power: f64,
    pub floor: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig { power: 0.6, floor: 0.0 }
    }
}

/// Regression objective of a head against fixed targets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Fit {
    /// `(pred - y)^2`.
    Mse,
    /// `|kappa - 1[u < 0]| u^2` with `u = y - pred`.
    Expectile(f64),
}

impl Fit {
    /// Per-row loss and its derivative with respect to the prediction.
    pub fn eval(self, pred: f64, y: f64) -> (f64, f64) {
        match self {
            Fit::Mse => {
                let d = pred - y;
                (d * d, 2.0 * d)
            }
            Fit::Expectile(kappa) => {
                let (l, dl_du) = super::expectile_loss(y - pred, kappa);
                (l, -dl_du)
            }
        }
    }
}

/// Gradient of a head's mean loss.
#[derive(Clone, Debug, PartialEq)]
pub enum HeadGrad {
    Dense(Vec<f64>),
    /// `(key, d loss / d entry, rows hitting the entry)`.
    Table(Vec<((usize, u64), f64, usize)>),
}

#[derive(Clone, Debug)]
enum Body {
    Net { net: DenseNet, params: Vec<f64>, opt: AdamW },
    Table { slots: HashMap<(usize, u64), usize>, params: Vec<f64>, counts: Vec<u64>, config: TableConfig },
}

/// A scalar head over `(state, k-chunk)` with its EMA shadow.
#[derive(Clone, Debug)]
pub struct Head {
    pub k: usize,
    encoder: Encoder,
    body: Body,
    ema: EmaTarget,
}

/// Hyperparameters shared by every critic and value head.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub width: usize,
    pub depth: usize,
    pub final_scale: f64,
    pub ema_tau: f64,
    pub adam: AdamWConfig,
    pub table: TableConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            kind: HeadKind::Net,
            width: 64,
            depth: 2,
            final_scale: 0.01,
            ema_tau: 0.005,
            adam: AdamWConfig::default(),
            table: TableConfig::default(),
        }
    }
}

impl Head {
    pub fn new<R: Rng>(encoder: Encoder, k: usize, config: &HeadConfig, rng: &mut R) -> Result<Self> {
        let body = match config.kind {
            HeadKind::Net => {
                let net = DenseNet::mlp(encoder.input_dim(k), config.width, config.depth, 1)?;
                let params = net.init(rng, config.final_scale);
                let opt = AdamW::new(config.adam, net.n_params(), net.segments());
                Body::Net { net, params, opt }
            }
            HeadKind::Table => {
                if !matches!(encoder.state, StateEncoding::OneHot(_)) || !matches!(encoder.space, ActionSpace::Discrete(_)) {
                    return Err(Error::NotDiscrete("table heads need a discrete environment".into()));
                }
                Body::Table { slots: HashMap::new(), params: Vec::new(), counts: Vec::new(), config: config.table }
            }
        };
        let ema = EmaTarget::new(config.ema_tau, Self::params_of(&body))?;
        Ok(Head { k, encoder, body, ema })
    }

    fn params_of(body: &Body) -> &[f64] {
        match body {
            Body::Net { params, .. } | Body::Table { params, .. } => params,
        }
    }

    pub fn kind(&self) -> HeadKind {
        match self.body {
            Body::Net { .. } => HeadKind::Net,
            Body::Table { .. } => HeadKind::Table,
        }
    }

    pub fn params(&self) -> &[f64] {
        Self::params_of(&self.body)
    }

    /// Mutable live parameters. For tables only entries created so far are exposed.
    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.body {
            Body::Net { params, .. } | Body::Table { params, .. } => params,
        }
    }

    pub fn shadow(&self) -> &[f64] {
        &self.ema.shadow
    }

    /// Copy live parameters into the shadow.
    pub fn hard_sync(&mut self) {
        let p = self.params().to_vec();
        self.ema.shadow = p;
    }

    /// Set a table entry in both the live table and the shadow.
    pub fn set_entry(&mut self, state: &StateRepr, chunk: &[Action], value: f64) -> Result<()> {
        let key = self.encoder.key(&Row::new(state, chunk), self.k)?;
        match &mut self.body {
            Body::Table { slots, params, counts, .. } => {
                let i = *slots.entry(key).or_insert_with(|| {
                    params.push(0.0);
                    counts.push(0);
                    self.ema.shadow.push(0.0);
                    params.len() - 1
                });
                params[i] = value;
                self.ema.shadow[i] = value;
                Ok(())
            }
            Body::Net { .. } => Err(Error::invalid("set_entry needs a table head")),
        }
    }

    /// Predictions from the live parameters, or from the EMA shadow when `target`.
    pub fn predict(&self, rows: &[Row<'_>], target: bool) -> Result<Vec<f64>> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        match &self.body {
            Body::Net { net, params, .. } => {
                let x = self.encoder.batch(rows, self.k)?;
                let p = if target { &self.ema.shadow } else { params };
                Ok(net.predict(p, x.view())?.column(0).to_vec())
            }
            Body::Table { slots, params, .. } => {
                let p = if target { &self.ema.shadow } else { params };
                rows.iter()
                    .map(|r| Ok(slots.get(&self.encoder.key(r, self.k)?).map_or(0.0, |&i| p[i])))
                    .collect()
            }
        }
    }

    /// Mean loss of the live head against `targets`, and its gradient.
    pub fn loss_grad(&self, rows: &[Row<'_>], targets: &[f64], fit: Fit) -> Result<(f64, HeadGrad)> {
        if rows.len() != targets.len() || rows.is_empty() {
            return Err(Error::Shape(format!("{} rows for {} targets", rows.len(), targets.len())));
        }
        let b = rows.len() as f64;
        match &self.body {
            Body::Net { net, params, .. } => {
                let x = self.encoder.batch(rows, self.k)?;
                let tape = net.forward(params, x.view())?;
                let mut loss = 0.0;
                let mut dout = Array2::zeros((rows.len(), 1));
                for (i, &y) in targets.iter().enumerate() {
                    let (l, g) = fit.eval(tape.output[(i, 0)], y);
                    loss += l;
                    dout[(i, 0)] = g / b;
                }
                let (grads, _) = net.backward(params, &tape, dout.view())?;
                Ok((loss / b, HeadGrad::Dense(grads)))
            }
            Body::Table { slots, params, .. } => {
                let mut acc: Vec<((usize, u64), f64, usize)> = Vec::new();
                let mut at: HashMap<(usize, u64), usize> = HashMap::new();
                let mut loss = 0.0;
                for (r, &y) in rows.iter().zip(targets) {
                    let key = self.encoder.key(r, self.k)?;
                    let pred = slots.get(&key).map_or(0.0, |&i| params[i]);
                    let (l, g) = fit.eval(pred, y);
                    loss += l;
                    let j = *at.entry(key).or_insert_with(|| {
                        acc.push((key, 0.0, 0));
                        acc.len() - 1
                    });
                    acc[j].1 += g / b;
                    acc[j].2 += 1;
                }
                Ok((loss / b, HeadGrad::Table(acc)))
            }
        }
    }

    /// One optimizer step followed by the EMA update.
    pub fn apply(&mut self, grad: &HeadGrad, batch: usize) -> Result<()> {
        match (&mut self.body, grad) {
            (Body::Net { params, opt, .. }, HeadGrad::Dense(g)) => opt.step(params, g)?,
            (Body::Table { slots, params, counts, config }, HeadGrad::Table(entries)) => {
                for &(key, g, n) in entries {
                    if !g.is_finite() {
                        return Err(Error::NonFiniteGradient { layer: 0 });
                    }
                    let i = *slots.entry(key).or_insert_with(|| {
                        params.push(0.0);
                        counts.push(0);
                        self.ema.shadow.push(0.0);
                        params.len() - 1
                    });
                    let alpha = (1.0 + counts[i] as f64).powf(-config.power).max(config.floor);
                    // Step on the per-row mean of the squared-loss derivative, halved so
                    // that alpha = 1 jumps straight to the batch target.
                    params[i] -= alpha * 0.5 * g * batch as f64 / n as f64;
                    counts[i] += 1;
                }
            }
            _ => return Err(Error::Shape("gradient kind does not match head kind".into())),
        }
        let p = Self::params_of(&self.body).to_vec();
        self.ema.update(&p)
    }

    /// Live and shadow parameters as named tensors. Table heads also store
    /// their keys and update counts.
    pub fn tensors(&self, name: &str) -> Vec<Tensor> {
        let t = |suffix: &str, data: Vec<f64>| Tensor { name: format!("{name}.{suffix}"), shape: vec![data.len()], data };
        match &self.body {
            Body::Net { params, .. } => vec![t("params", params.clone()), t("ema", self.ema.shadow.clone())],
            Body::Table { slots, params, counts, .. } => {
                let mut keys: Vec<(&(usize, u64), &usize)> = slots.iter().collect();
                keys.sort();
                let idx: Vec<usize> = keys.iter().map(|(_, &i)| i).collect();
                vec![
                    t("state", keys.iter().map(|(k, _)| k.0 as f64).collect()),
                    t("chunk", keys.iter().map(|(k, _)| k.1 as f64).collect()),
                    t("params", idx.iter().map(|&i| params[i]).collect()),
                    t("ema", idx.iter().map(|&i| self.ema.shadow[i]).collect()),
                    t("count", idx.iter().map(|&i| counts[i] as f64).collect()),
                ]
            }
        }
    }

    pub fn load_tensors(&mut self, name: &str, tensors: &[Tensor]) -> Result<()> {
        let get = |suffix: &str| -> Result<&[f64]> {
            let full = format!("{name}.{suffix}");
            tensors
                .iter()
                .find(|t| t.name == full)
                .map(|t| t.data.as_slice())
                .ok_or_else(|| Error::Format(format!("checkpoint lacks tensor {full}")))
        };
        match &mut self.body {
            Body::Net { params, .. } => {
                let (p, e) = (get("params")?, get("ema")?);
                if p.len() != params.len() || e.len() != params.len() {
                    return Err(Error::Format(format!("tensor {name} has the wrong size")));
                }
                params.copy_from_slice(p);
                self.ema.shadow = e.to_vec();
            }
            Body::Table { slots, params, counts, .. } => {
                let (s, c, p, e, n) = (get("state")?, get("chunk")?, get("params")?, get("ema")?, get("count")?);
                if [c.len(), p.len(), e.len(), n.len()].iter().any(|&l| l != s.len()) {
                    return Err(Error::Format(format!("table {name} has ragged tensors")));
                }
                slots.clear();
                for (i, (&s, &c)) in s.iter().zip(c).enumerate() {
                    slots.insert((s as usize, c as u64), i);
                }
                *params = p.to_vec();
                *counts = n.iter().map(|&x| x as u64).collect();
                self.ema.shadow = e.to_vec();
            }
        }
        Ok(())
    }
}

/// Independently initialized copies of a Q head; targets use the member minimum.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub members: Vec<Head>,
}

impl Ensemble {
    pub fn new<R: Rng>(encoder: Encoder, k: usize, size: usize, config: &HeadConfig, rng: &mut R) -> Result<Self> {
        if size == 0 {
            return Err(Error::invalid("ensemble size must be >= 1"));
        }
        let members = (0..size).map(|_| Head::new(encoder, k, config, rng)).collect::<Result<_>>()?;
        Ok(Ensemble { members })
    }

    pub fn k(&self) -> usize {
        self.members[0].k
    }

    /// Elementwise minimum over members.
    pub fn predict_min(&self, rows: &[Row<'_>], target: bool) -> Result<Vec<f64>> {
        let mut out = self.members[0].predict(rows, target)?;
        for m in &self.members[1..] {
            for (o, v) in out.iter_mut().zip(m.predict(rows, target)?) {
                *o = o.min(v);
            }
        }
        Ok(out)
    }

    /// Elementwise mean over members, used for scoring.
    pub fn predict_mean(&self, rows: &[Row<'_>], target: bool) -> Result<Vec<f64>> {
        let mut out = vec![0.0; rows.len()];
        for m in &self.members {
            for (o, v) in out.iter_mut().zip(m.predict(rows, target)?) {
                *o += v;
            }
        }
        let n = self.members.len() as f64;
        Ok(out.into_iter().map(|x| x / n).collect())
    }
}
