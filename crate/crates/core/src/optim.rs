//! SGD with classical momentum and decoupled-from-nothing weight decay:
//! decay is folded into the gradient before the momentum update, matching
//! `v <- mu v + (g + wd p); p <- p - lr v`.

use crate::error::{EekdError, Result};
use crate::mlp::{Gradients, MlpSpec, ParamSet};
use crate::tensor::Tensor;

/// Optimizer hyperparameters, fixed for a whole run; the learning rate is
/// supplied per step by the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn new(momentum: f64, weight_decay: f64) -> Result<Self> {
        let cfg = SgdConfig {
            momentum,
            weight_decay,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.momentum.is_finite() || !(0.0..1.0).contains(&self.momentum) {
            return Err(EekdError::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(EekdError::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One momentum update on a single tensor.
pub fn sgd_update_tensor(
    param: &mut Tensor,
    velocity: &mut Tensor,
    grad: &Tensor,
    lr: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != velocity.shape() {
        return Err(EekdError::DimensionMismatch {
            axis: "optimizer tensor shapes",
            expected: param.len(),
            found: grad.len(),
        });
    }
    for ((p, v), &g) in param
        .data_mut()
        .iter_mut()
        .zip(velocity.data_mut().iter_mut())
        .zip(grad.data())
    {
        *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
        *p -= lr * *v;
    }
    param.ensure_finite("sgd parameters")?;
    Ok(())
}

/// One momentum update across every layer of a network. Biases decay like
/// weights; the velocity buffers live inside the parameter set.
pub fn sgd_step(
    spec: &MlpSpec,
    params: &mut ParamSet,
    grads: &Gradients,
    lr: f64,
    cfg: &SgdConfig,
) -> Result<()> {
    if grads.weights.len() != spec.num_layers() {
        return Err(EekdError::DimensionMismatch {
            axis: "gradient layer count",
            expected: spec.num_layers(),
            found: grads.weights.len(),
        });
    }
    for l in 0..spec.num_layers() {
        let (params_w, vel_w) = (&mut params.weights[l], &mut params.vel_weights[l]);
        sgd_update_tensor(params_w, vel_w, &grads.weights[l], lr, cfg)?;
        let (params_b, vel_b) = (&mut params.biases[l], &mut params.vel_biases[l]);
        sgd_update_tensor(params_b, vel_b, &grads.biases[l], lr, cfg)?;
    }
    Ok(())
}
