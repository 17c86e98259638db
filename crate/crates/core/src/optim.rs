//! LAMB and the step-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Skip the trust ratio, which turns LAMB into Adam (plus decoupled
    /// decay). Only meant for testing.
    #[serde(default)]
    pub force_unit_trust: bool,
}

impl Default for LambConfig {
    fn default() -> Self {
        LambConfig { beta1: 0.9, beta2: 0.999, eps: 1e-6, weight_decay: 0.0, force_unit_trust: false }
    }
}

impl LambConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("LAMB betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("LAMB needs eps > 0 and weight_decay ≥ 0".into()));
        }
        Ok(())
    }
}

/// Moments for each parameter table plus the step count.
#[derive(Clone, Debug)]
pub struct LambState<T> {
    pub config: LambConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
    /// Trust ratio applied to each table on the last step.
    pub last_trust: Vec<f64>,
}

impl<T: Scalar> LambState<T> {
    pub fn new(config: LambConfig, params: &[Tensor<T>]) -> Result<Self> {
        config.validate()?;
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect::<Vec<_>>();
        Ok(LambState { config, m: zeros(), v: zeros(), t: 0, last_trust: vec![1.0; params.len()] })
    }
}

/// One LAMB update. Moments are accumulated in `T`; norms and the bias
/// corrections are taken in `f64`.
///
/// `r = m̂/(√v̂ + ε) + wd·θ`, and each table moves by `lr · ‖θ‖/‖r‖ · r`,
/// with the ratio replaced by 1 when either norm is zero.
pub fn lamb_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut LambState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim(
            "lamb_step",
            format!("{} tables, {} gradients, {} moments", params.len(), grads.len(), state.m.len()),
        ));
    }
    if !(lr >= 0.0) {
        return Err(Error::Config(format!("learning rate must be non-negative, got {lr}")));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::dim(
                "lamb_step",
                format!("table {i} is {:?} but its gradient is {:?}", p.shape(), g.shape()),
            ));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { table: i.to_string(), index: j });
        }
    }
    let c = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let mut r: Vec<f64> = Vec::new();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        r.clear();
        for ((mj, vj), &gj) in m.iter_mut().zip(v.iter_mut()).zip(g.data()) {
            *mj = b1 * *mj + (T::one() - b1) * gj;
            *vj = b2 * *vj + (T::one() - b2) * gj * gj;
        }
        for ((mj, vj), &th) in m.iter().zip(v.iter()).zip(p.data()) {
            let mhat = mj.as_f64() / bc1;
            let vhat = vj.as_f64() / bc2;
            r.push(mhat / (vhat.sqrt() + c.eps) + c.weight_decay * th.as_f64());
        }
        let trust = if c.force_unit_trust {
            1.0
        } else {
            let pn = p.norm();
            let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if pn > 0.0 && rn > 0.0 {
                pn / rn
            } else {
                1.0
            }
        };
        state.last_trust[i] = trust;
        let scale = lr * trust;
        for (th, rj) in p.data_mut().iter_mut().zip(&r) {
            *th = T::of(th.as_f64() - scale * rj);
        }
    }
    Ok(())
}

/// Piecewise-constant decay at epoch boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub base_lr: f64,
    /// Epochs at which the rate is multiplied by `decay_factor`.
    #[serde(default)]
    pub decay_epochs: Vec<u64>,
    pub decay_factor: f64,
    /// Optimizer steps per epoch.
    pub epoch_length: u64,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Schedule { base_lr: lr, decay_epochs: Vec::new(), decay_factor: 1.0, epoch_length: 1 }
    }

    /// Base rate 0.004, divided by 10 at epochs 84, 102 and 114.
    pub fn imagenet(epoch_length: u64) -> Self {
        Schedule { base_lr: 0.004, decay_epochs: vec![84, 102, 114], decay_factor: 0.1, epoch_length }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0) || !self.base_lr.is_finite() {
            return Err(Error::Config("base_lr must be a non-negative number".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config("decay_factor must lie in (0, 1]".into()));
        }
        if self.epoch_length == 0 {
            return Err(Error::Config("epoch_length must be at least 1".into()));
        }
        if self.decay_epochs.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config("decay_epochs must be ascending".into()));
        }
        Ok(())
    }

    pub fn epoch(&self, step: u64) -> u64 {
        step / self.epoch_length.max(1)
    }
}

/// `base_lr · factor^k` where `k` counts the boundaries at or before the
/// step's epoch.
pub fn lr_at(schedule: &Schedule, step: u64) -> f64 {
    let epoch = schedule.epoch(step);
    let passed = schedule.decay_epochs.iter().filter(|&&b| epoch >= b).count();
    schedule.base_lr * schedule.decay_factor.powi(passed as i32)
}
