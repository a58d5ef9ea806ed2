use super::{Param, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Moments live on each [`Param`]; the
/// step counter lives here, so one optimizer drives one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self { config, step: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter in the group. A non-finite gradient
    /// anywhere aborts before any parameter is touched.
    pub fn step<T: Real>(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        for p in params.iter() {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at index {i}",
                    p.name
                )));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let decay = T::lit(1.0 - c.lr * c.weight_decay);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (nb1, nb2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        for p in params.iter_mut() {
            let p = &mut **p;
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = b1 * p.m[i] + nb1 * g;
                p.v[i] = b2 * p.v[i] + nb2 * g * g;
                let denom = (p.v[i] * inv_bc2).sqrt() + eps;
                p.value[i] = p.value[i] * decay - step_size * p.m[i] / denom;
            }
        }
        Ok(())
    }
}

pub fn global_norm<T: Real>(params: &[&Param<T>]) -> f64 {
    params
        .iter()
        .flat_map(|p| p.grad.iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(params: &mut [&mut Param<T>], max_norm: f64) -> f64 {
    let norm = {
        let view: Vec<&Param<T>> = params.iter().map(|p| &**p).collect();
        global_norm(&view)
    };
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for p in params.iter_mut() {
            for g in &mut p.grad {
                *g *= s;
            }
        }
    }
    norm
}
