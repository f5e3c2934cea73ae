use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ChunkSampler;
use crate::envs::ActionSpace;
use crate::error::{Error, Result};
use crate::mdp::{Action, ActionChunk, StateRepr};
use crate::nn::{AdamW, AdamWConfig, DenseNet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub width: usize,
    pub depth: usize,
    /// Euler steps used when sampling.
    pub steps: usize,
    pub adam: AdamWConfig,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { width: 64, depth: 2, steps: 10, adam: AdamWConfig::default() }
    }
}

/// One flow-matching training example with its noise draw.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowSample {
    pub x0: Vec<f64>,
    pub tau: f64,
}

/// Velocity field `v(s, x_tau, tau)` over flattened `h`-step chunks.
#[derive(Clone, Debug)]
pub struct FlowPolicy {
    pub h: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub low: f64,
    pub high: f64,
    pub steps: usize,
    net: DenseNet,
    params: Vec<f64>,
    opt: AdamW,
}

impl FlowPolicy {
    pub fn new<R: Rng>(state_dim: usize, space: ActionSpace, h: usize, config: &FlowConfig, rng: &mut R) -> Result<Self> {
        let (action_dim, low, high) = match space {
            ActionSpace::Box { dim, low, high } => (dim, low, high),
            ActionSpace::Discrete(_) => {
                return Err(Error::NotDiscrete("flow policies need continuous actions; use the empirical sampler".into()))
            }
        };
        if h == 0 || config.steps == 0 {
            return Err(Error::invalid("flow horizon and step count must be >= 1"));
        }
        let d = h * action_dim;
        let net = DenseNet::mlp(state_dim + d + 1, config.width, config.depth, d)?;
        let params = net.init(rng, 1.0);
        let opt = AdamW::new(config.adam, net.n_params(), net.segments());
        Ok(FlowPolicy { h, state_dim, action_dim, low, high, steps: config.steps, net, params, opt })
    }

    pub fn chunk_dim(&self) -> usize {
        self.h * self.action_dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn state_vec<'a>(&self, s: &'a StateRepr) -> Result<&'a [f64]> {
        match s.as_slice() {
            Some(v) if v.len() == self.state_dim => Ok(v),
            _ => Err(Error::Shape(format!("state {s:?} is not a {}-vector", self.state_dim))),
        }
    }

    fn flat(&self, chunk: &ActionChunk) -> Result<Vec<f64>> {
        if chunk.len() != self.h {
            return Err(Error::Shape(format!("chunk of length {} for horizon {}", chunk.len(), self.h)));
        }
        let mut out = Vec::with_capacity(self.chunk_dim());
        for a in chunk.actions() {
            match a.as_slice() {
                Some(v) if v.len() == self.action_dim => out.extend_from_slice(v),
                _ => return Err(Error::Shape(format!("action {a:?} is not a {}-vector", self.action_dim))),
            }
        }
        Ok(out)
    }

    /// Velocity at a batch of `(state, x, tau)` inputs, one row each.
    pub fn velocity(&self, params: &[f64], inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.net.predict(params, inputs.view())
    }

    fn input_row(&self, s: &[f64], x: &[f64], tau: f64, out: &mut Vec<f64>) {
        out.extend_from_slice(s);
        out.extend_from_slice(x);
        out.push(tau);
    }

    pub fn draw<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<FlowSample> {
        (0..n)
            .map(|_| FlowSample {
                x0: (0..self.chunk_dim()).map(|_| StandardNormal.sample(rng)).collect(),
                tau: rng.random::<f64>(),
            })
            .collect()
    }

    /// `mean_rows |v(s, x_tau, tau) - (a - x0)|^2` with `x_tau = (1 - tau) x0 + tau a`
    /// for the given noise draws, and its gradient.
    pub fn bc_loss_with(&self, batch: &[(StateRepr, ActionChunk)], noise: &[FlowSample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() || batch.len() != noise.len() {
            return Err(Error::Shape(format!("{} rows for {} noise draws", batch.len(), noise.len())));
        }
        let d = self.chunk_dim();
        let width = self.state_dim + d + 1;
        let mut x = Vec::with_capacity(batch.len() * width);
        let mut target = Vec::with_capacity(batch.len() * d);
        for ((s, chunk), z) in batch.iter().zip(noise) {
            let a = self.flat(chunk)?;
            if z.x0.len() != d {
                return Err(Error::Shape("noise draw has the wrong width".into()));
            }
            let xt: Vec<f64> = z.x0.iter().zip(&a).map(|(x0, a)| (1.0 - z.tau) * x0 + z.tau * a).collect();
            self.input_row(self.state_vec(s)?, &xt, z.tau, &mut x);
            target.extend(a.iter().zip(&z.x0).map(|(a, x0)| a - x0));
        }
        let x = Array2::from_shape_vec((batch.len(), width), x).expect("row widths");
        let tape = self.net.forward(&self.params, x.view())?;
        let b = batch.len() as f64;
        let mut dout = Array2::zeros((batch.len(), d));
        let mut loss = 0.0;
        for ((i, j), v) in tape.output.indexed_iter() {
            let e = v - target[i * d + j];
            loss += e * e;
            dout[(i, j)] = 2.0 * e / b;
        }
        let (grads, _) = self.net.backward(&self.params, &tape, dout.view())?;
        Ok((loss / b, grads))
    }

    pub fn bc_loss<R: Rng>(&self, batch: &[(StateRepr, ActionChunk)], rng: &mut R) -> Result<(f64, Vec<f64>)> {
        let noise = self.draw(batch.len(), rng);
        self.bc_loss_with(batch, &noise)
    }

    pub fn apply(&mut self, grads: &[f64]) -> Result<()> {
        self.opt.step(&mut self.params, grads)
    }

    /// Euler-integrate from the given starting points, then clip to the action box.
    pub fn integrate(&self, state: &StateRepr, x0: Vec<Vec<f64>>) -> Result<Vec<ActionChunk>> {
        let s = self.state_vec(state)?;
        let d = self.chunk_dim();
        let n = x0.len();
        let mut xs = x0;
        let dt = 1.0 / self.steps as f64;
        for m in 0..self.steps {
            let tau = m as f64 * dt;
            let mut inp = Vec::with_capacity(n * (self.state_dim + d + 1));
            for x in &xs {
                self.input_row(s, x, tau, &mut inp);
            }
            let inp = Array2::from_shape_vec((n, self.state_dim + d + 1), inp).expect("row widths");
            let v = self.velocity(&self.params, &inp)?;
            for (i, x) in xs.iter_mut().enumerate() {
                for (j, xj) in x.iter_mut().enumerate() {
                    *xj += dt * v[(i, j)];
                    if !xj.is_finite() {
                        return Err(Error::NonFinite(format!("flow state at Euler step {m}")));
                    }
                }
            }
        }
        Ok(xs
            .into_iter()
            .map(|x| {
                ActionChunk(
                    x.chunks(self.action_dim)
                        .map(|a| Action::Continuous(a.iter().map(|v| v.clamp(self.low, self.high)).collect()))
                        .collect(),
                )
            })
            .collect())
    }

    pub fn sample_chunks(&self, state: &StateRepr, n: usize, seed: u64) -> Result<Vec<ActionChunk>> {
        self.sample(state, n, &mut crate::rng::rng(seed))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        vec![Tensor { name: "flow.params".into(), shape: vec![self.params.len()], data: self.params.clone() }]
    }

    pub fn load_tensors(&mut self, tensors: &[Tensor]) -> Result<()> {
        let t = tensors
            .iter()
            .find(|t| t.name == "flow.params")
            .ok_or_else(|| Error::Format("checkpoint lacks flow.params".into()))?;
        if t.data.len() != self.params.len() {
            return Err(Error::Format("flow.params has the wrong size".into()));
        }
        self.params.copy_from_slice(&t.data);
        Ok(())
    }
}

impl ChunkSampler for FlowPolicy {
    fn horizon(&self) -> usize {
        self.h
    }

    fn sample(&self, state: &StateRepr, n: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<ActionChunk>> {
        if n == 0 {
            return Err(Error::invalid("N must be >= 1"));
        }
        let x0 = (0..n).map(|_| (0..self.chunk_dim()).map(|_| StandardNormal.sample(rng)).collect()).collect();
        self.integrate(state, x0)
    }
}
