use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 3e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Decoupled weight decay: `w *= 1 - lr * wd`, then the bias-corrected Adam step.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    segments: Vec<Range<usize>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n_params: usize, segments: Vec<Range<usize>>) -> Self {
        AdamW { config, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0, segments }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    fn layer_of(&self, idx: usize) -> usize {
        self.segments.iter().position(|r| r.contains(&idx)).unwrap_or(0)
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer: self.layer_of(i) });
        }
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *p *= 1.0 - c.lr * c.weight_decay;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
        }
        Ok(())
    }
}

/// Polyak-averaged shadow copy of a parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaTarget {
    pub tau: f64,
    pub shadow: Vec<f64>,
}

impl EmaTarget {
    pub fn new(tau: f64, source: &[f64]) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::invalid(format!("EMA tau {tau} outside (0, 1]")));
        }
        Ok(EmaTarget { tau, shadow: source.to_vec() })
    }

    pub fn update(&mut self, source: &[f64]) -> Result<()> {
        if source.len() != self.shadow.len() {
            return Err(Error::Shape(format!(
                "EMA shadow has {} entries, source {}",
                self.shadow.len(),
                source.len()
            )));
        }
        let tau = self.tau;
        for (s, &x) in self.shadow.iter_mut().zip(source) {
            *s = (1.0 - tau) * *s + tau * x;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(lr: f64, wd: f64) -> AdamW {
        AdamW::new(AdamWConfig { lr, weight_decay: wd, ..Default::default() }, 1, vec![0..1])
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut opt = one(0.1, 0.0);
        let mut w = vec![0.7];
        opt.step(&mut w, &[0.0]).unwrap();
        assert_eq!(w, vec![0.7]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn decay_only_shrinks_multiplicatively() {
        let mut opt = one(0.01, 0.1);
        let mut w = vec![2.0];
        opt.step(&mut w, &[0.0]).unwrap();
        assert!((w[0] - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn first_step_on_half_square() {
        // f(w) = w^2 / 2 at w = 1: g = 1, m_hat = 1, v_hat = 1, so
        // w' = 1 - 0.1 * 1 / (1 + 1e-8).
        let mut opt = one(0.1, 0.0);
        let mut w = vec![1.0];
        opt.step(&mut w, &[1.0]).unwrap();
        assert!((w[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut opt = AdamW::new(AdamWConfig::default(), 4, vec![0..2, 2..4]);
        let mut w = vec![0.0; 4];
        let err = opt.step(&mut w, &[0.0, 0.0, f64::NAN, 0.0]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { layer: 1 }));
    }

    #[test]
    fn ema_examples() {
        let mut full = EmaTarget::new(1.0, &[0.0, 0.0]).unwrap();
        full.update(&[3.0, -1.0]).unwrap();
        assert_eq!(full.shadow, vec![3.0, -1.0]);
        let mut e = EmaTarget::new(0.005, &[0.0]).unwrap();
        e.update(&[1.0]).unwrap();
        assert!((e.shadow[0] - 0.005).abs() < 1e-15);
        assert!(e.update(&[1.0, 2.0]).is_err());
        assert!(EmaTarget::new(0.0, &[0.0]).is_err());
    }
}
