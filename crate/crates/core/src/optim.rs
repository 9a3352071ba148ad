//! First-order optimizers: SGD (momentum, dampening, weight decay,
//! nesterov) and Adam (moment estimates with bias correction).
//!
//! Update rules, applied elementwise per parameter tensor:
//!
//! SGD:
//! ```text
//! g <- grad + weight_decay * p
//! v <- momentum * v + (1 - dampening) * g
//! d <- g + momentum * v   (nesterov)   |   d <- v   (otherwise)
//! p <- p - lr * d
//! ```
//!
//! Adam (t is the post-increment step index, starting at 1):
//! ```text
//! m <- beta1 * m + (1 - beta1) * g
//! v <- beta2 * v + (1 - beta2) * g^2
//! m_hat = m / (1 - beta1^t),  v_hat = v / (1 - beta2^t)
//! p <- p - lr * m_hat / (sqrt(v_hat) + eps)
//! ```
//!
//! Learning rates are allowed to be zero (a zero-rate step is a no-op used
//! by pipeline smoke tests); negative rates are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Step-size schedule: the base rate divided by 10 every 100 epochs,
/// `base_lr * 10^(-floor(epoch / 100))`.
pub fn lr_schedule<T: Scalar>(epoch: usize, base_lr: T) -> T {
    let decades = (epoch / 100) as i32;
    base_lr / T::from_f64(10f64.powi(decades))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-4,
            momentum: 0.0,
            dampening: 0.0,
            weight_decay: 0.0,
            nesterov: false,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "sgd lr must be >= 0, got {}",
                self.lr
            )));
        }
        if !self.momentum.is_finite() || self.momentum < 0.0 {
            return Err(Error::Config(format!(
                "sgd momentum must be >= 0, got {}",
                self.momentum
            )));
        }
        if !(0.0..=1.0).contains(&self.dampening) {
            return Err(Error::Config(format!(
                "sgd dampening must be in [0, 1], got {}",
                self.dampening
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "sgd weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.nesterov && (self.momentum <= 0.0 || self.dampening != 0.0) {
            return Err(Error::Config(
                "sgd nesterov requires momentum > 0 and dampening == 0".into(),
            ));
        }
        Ok(())
    }
}

/// SGD with one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    cfg: SgdConfig,
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(cfg: SgdConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd {
            cfg,
            velocity: Vec::new(),
        })
    }

    /// Rebuild from serialized state.
    pub fn from_parts(cfg: SgdConfig, velocity: Vec<Tensor<T>>) -> Result<Self> {
        cfg.validate()?;
        Ok(Sgd { cfg, velocity })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// One update over aligned parameter and gradient slices.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        check_aligned("sgd_step", params, grads)?;
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("{} velocity buffers", params.len()),
                format!("{}", self.velocity.len()),
            ));
        }
        let lr = T::from_f64(self.cfg.lr);
        let momentum = T::from_f64(self.cfg.momentum);
        let damp = T::from_f64(1.0 - self.cfg.dampening);
        let wd = T::from_f64(self.cfg.weight_decay);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if p.shape() != v.shape() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("velocity shaped {:?}", p.shape()),
                    format!("{:?}", v.shape()),
                ));
            }
            for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g_eff = gi + wd * *pi;
                *vi = momentum * *vi + damp * g_eff;
                let d = if self.cfg.nesterov {
                    g_eff + momentum * *vi
                } else {
                    *vi
                };
                *pi -= lr * d;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "adam lr must be >= 0, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!(
                    "adam {name} must be in [0, 1), got {b}"
                )));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "adam epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Adam with first/second moment buffers and a step counter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Rebuild from serialized state.
    pub fn from_parts(
        cfg: AdamConfig,
        t: u64,
        m: Vec<Tensor<T>>,
        v: Vec<Tensor<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if m.len() != v.len() {
            return Err(Error::Config(
                "adam moment buffer counts do not match".into(),
            ));
        }
        Ok(Adam { cfg, t, m, v })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    /// One update over aligned parameter and gradient slices.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        check_aligned("adam_step", params, grads)?;
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} moment buffers", params.len()),
                format!("{}", self.m.len()),
            ));
        }
        self.t = self
            .t
            .checked_add(1)
            .ok_or_else(|| Error::Config("adam step counter overflow".into()))?;

        let lr = T::from_f64(self.cfg.lr);
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.epsilon);
        let corr1 = T::one() - T::from_f64(self.cfg.beta1.powi(self.t as i32));
        let corr2 = T::one() - T::from_f64(self.cfg.beta2.powi(self.t as i32));

        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            if p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("moments shaped {:?}", p.shape()),
                    format!("{:?}", m.shape()),
                ));
            }
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / corr1;
                let v_hat = *vi / corr2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Optimizer choice, stepping a whole parameter list.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd(Sgd<T>),
    Adam(Adam<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        match self {
            Optimizer::Sgd(s) => s.step(params, grads),
            Optimizer::Adam(a) => a.step(params, grads),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        match self {
            Optimizer::Sgd(s) => s.set_lr(lr),
            Optimizer::Adam(a) => a.set_lr(lr),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Optimizer::Sgd(_) => "sgd",
            Optimizer::Adam(_) => "adam",
        }
    }
}

fn check_aligned<T: Scalar>(
    context: &str,
    params: &[Tensor<T>],
    grads: &[Tensor<T>],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            context,
            format!("{} gradients", params.len()),
            format!("{}", grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                context,
                format!("gradient shaped {:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
    }
    Ok(())
}
