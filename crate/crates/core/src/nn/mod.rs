//! Dense networks with hand-written reverse mode, AdamW and EMA shadows.

mod checkpoint;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, Tensor, TensorEntry};
pub use optim::{AdamW, AdamWConfig, EmaTarget};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = u.tanh();
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerLayout {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

/// MLP shape. Parameters live in a flat vector: for each layer the weight
/// matrix (`fan_out x fan_in`, row-major) followed by the bias.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNet {
    sizes: Vec<usize>,
}

/// Activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl DenseNet {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(DenseNet { sizes })
    }

    pub fn mlp(input: usize, width: usize, depth: usize, output: usize) -> Result<Self> {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(output);
        DenseNet::new(sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut off = 0;
        self.sizes
            .windows(2)
            .map(|w| {
                let l = LayerLayout { w: off, b: off + w[0] * w[1], fan_in: w[0], fan_out: w[1] };
                off = l.b + w[1];
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameter range of each layer, used to attribute non-finite gradients.
    pub fn segments(&self) -> Vec<std::ops::Range<usize>> {
        self.layout().iter().map(|l| l.w..l.b + l.fan_out).collect()
    }

    /// Kaiming-uniform weights, zero biases; the output layer's weights are
    /// multiplied by `final_scale`.
    pub fn init<R: Rng>(&self, rng: &mut R, final_scale: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        let layout = self.layout();
        let last = layout.len() - 1;
        for (i, l) in layout.iter().enumerate() {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            let scale = if i == last { final_scale } else { 1.0 };
            for w in &mut p[l.w..l.b] {
                *w = scale * rng.random_range(-bound..bound);
            }
        }
        p
    }

    fn check(&self, params: &[f64], x: &ArrayView2<f64>) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        if x.ncols() != self.input_dim() || x.nrows() == 0 {
            return Err(Error::Shape(format!(
                "input batch {}x{} for net with input width {}",
                x.nrows(),
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn weights<'a>(&self, params: &'a [f64], l: &LayerLayout) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &params[l.w..l.b]).expect("layout");
        (w, &params[l.b..l.b + l.fan_out])
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Tape> {
        self.check(params, &x)?;
        let layout = self.layout();
        let last = layout.len() - 1;
        let mut inputs = Vec::with_capacity(layout.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (i, l) in layout.iter().enumerate() {
            let (w, b) = self.weights(params, l);
            let mut z = h.dot(&w.t());
            z += &ArrayView2::from_shape((1, l.fan_out), b).expect("bias row");
            inputs.push(h);
            if i == last {
                return Ok(Tape { inputs, pre, output: z });
            }
            h = z.mapv(gelu);
            pre.push(z);
        }
        unreachable!("network has at least one layer")
    }

    pub fn predict(&self, params: &[f64], x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(params, &x)?;
        let layout = self.layout();
        let last = layout.len() - 1;
        let mut h = x.to_owned();
        for (i, l) in layout.iter().enumerate() {
            let (w, b) = self.weights(params, l);
            let mut z = h.dot(&w.t());
            z += &ArrayView2::from_shape((1, l.fan_out), b).expect("bias row");
            h = if i == last { z } else { z.mapv(gelu) };
        }
        Ok(h)
    }

    /// Gradients of `sum(dout * output)` with respect to parameters and input.
    pub fn backward(
        &self,
        params: &[f64],
        tape: &Tape,
        dout: ArrayView2<f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        if dout.dim() != tape.output.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match output {:?}",
                dout.dim(),
                tape.output.dim()
            )));
        }
        let layout = self.layout();
        let mut grads = vec![0.0; self.n_params()];
        let mut delta = dout.to_owned();
        for (i, l) in layout.iter().enumerate().rev() {
            let (w, _) = self.weights(params, l);
            let gw = delta.t().dot(&tape.inputs[i]);
            grads[l.w..l.b].copy_from_slice(gw.as_slice().expect("standard layout"));
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            grads[l.b..l.b + l.fan_out].copy_from_slice(gb.as_slice().expect("contiguous"));
            let mut dx = delta.dot(&w);
            if i > 0 {
                dx.zip_mut_with(&tape.pre[i - 1], |d, &z| *d *= gelu_grad(z));
            }
            delta = dx;
        }
        Ok((grads, delta))
    }
}
