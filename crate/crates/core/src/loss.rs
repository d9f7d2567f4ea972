//! Losses and analytic gradients for distillation.
//!
//! The composite objective is
//! `alpha * CE(labels, softmax(z)) + (1 - alpha) * KL(target || softmax(z / tau))`,
//! where `target` is a probability row per sample and the KL term is
//! optionally scaled by `tau^2`. Gradients with respect to the student
//! logits treat `target` as a constant; the partial with respect to the
//! target entries is exposed separately for the attention weighting.

use crate::error::{EekdError, Result};
use crate::mlp::{ForwardTrace, Gradients, MlpSpec, ParamSet};
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor inside logarithms so that
/// vanishing entries give large-but-finite loss values.
pub const PROB_FLOOR: f64 = 1e-12;

/// Hyperparameters of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    /// Weight on the label cross-entropy term, in `[0, 1]`.
    pub alpha: f64,
    /// Softening temperature for both sides of the KL term.
    pub tau: f64,
    /// Multiply the KL term by `tau^2`, compensating its `1/tau` gradient
    /// scale. Off by default.
    pub kl_tau_square: bool,
}

impl LossParams {
    pub fn new(alpha: f64, tau: f64) -> Result<Self> {
        let lp = LossParams {
            alpha,
            tau,
            kl_tau_square: false,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
            return Err(EekdError::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(EekdError::InvalidTemperature(self.tau));
        }
        Ok(())
    }

    fn kl_scale(&self) -> f64 {
        if self.kl_tau_square {
            self.tau * self.tau
        } else {
            1.0
        }
    }
}

/// Row-wise softmax of `logits / tau`. Shifts by the row maximum before
/// exponentiating, so any finite logits produce valid probabilities.
pub fn softmax_tau(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(EekdError::InvalidTemperature(tau));
    }
    logits.ensure_finite("softmax logits")?;
    let (n, k) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(vec![n, k]);
    for row in 0..n {
        let z = logits.row(row);
        let m = z.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v / tau));
        let probs = out.row_mut(row);
        let mut sum = 0.0;
        for (p, &v) in probs.iter_mut().zip(z) {
            *p = (v / tau - m).exp();
            sum += *p;
        }
        for p in probs.iter_mut() {
            *p /= sum;
        }
    }
    Ok(out)
}

/// Mean over rows of `-sum_k y_k ln max(p_k, floor)`.
pub fn cross_entropy(probs: &Tensor, onehot: &Tensor) -> Result<f64> {
    same_shape(probs, onehot, "cross-entropy rows")?;
    let n = probs.rows();
    let mut total = 0.0;
    for row in 0..n {
        for (&p, &y) in probs.row(row).iter().zip(onehot.row(row)) {
            if y != 0.0 {
                total -= y * p.max(PROB_FLOOR).ln();
            }
        }
    }
    Ok(total / n as f64)
}

/// Mean over rows of `sum_k p_k (ln max(p_k, floor) - ln max(q_k, floor))`.
pub fn kl_div(p: &Tensor, q: &Tensor) -> Result<f64> {
    same_shape(p, q, "divergence rows")?;
    let n = p.rows();
    let mut total = 0.0;
    for row in 0..n {
        for (&pk, &qk) in p.row(row).iter().zip(q.row(row)) {
            if pk != 0.0 {
                total += pk * (pk.max(PROB_FLOOR).ln() - qk.max(PROB_FLOOR).ln());
            }
        }
    }
    Ok(total / n as f64)
}

/// Composite loss value for one batch. `target` rows are probability
/// vectors; they enter only the KL term.
pub fn kd_loss(
    student_logits: &Tensor,
    target: &Tensor,
    onehot: &Tensor,
    lp: &LossParams,
) -> Result<f64> {
    lp.validate()?;
    same_shape(student_logits, target, "loss logits vs target")?;
    let hard = softmax_tau(student_logits, 1.0)?;
    let ce = cross_entropy(&hard, onehot)?;
    let soft = softmax_tau(student_logits, lp.tau)?;
    let kl = kl_div(target, &soft)?;
    Ok(lp.alpha * ce + (1.0 - lp.alpha) * lp.kl_scale() * kl)
}

/// Plain cross-entropy gradient `(softmax(z) - y) / B` for label-only
/// training.
pub fn ce_grads(logits: &Tensor, onehot: &Tensor) -> Result<Tensor> {
    let probs = softmax_tau(logits, 1.0)?;
    same_shape(&probs, onehot, "cross-entropy gradient rows")?;
    let n = probs.rows() as f64;
    let data: Vec<f64> = probs
        .data()
        .iter()
        .zip(onehot.data())
        .map(|(&p, &y)| (p - y) / n)
        .collect();
    Tensor::new(probs.shape().to_vec(), data)
}

/// Gradient of the composite loss with respect to the student logits,
/// holding `target` constant:
/// `(1/B) [alpha (softmax(z) - y) + (1 - alpha) k (softmax(z/tau) - target)]`
/// with `k = tau` when the `tau^2` scale is on and `1/tau` otherwise.
pub fn loss_grads(
    student_logits: &Tensor,
    target: &Tensor,
    onehot: &Tensor,
    lp: &LossParams,
) -> Result<Tensor> {
    lp.validate()?;
    same_shape(student_logits, target, "loss logits vs target")?;
    same_shape(student_logits, onehot, "loss logits vs labels")?;
    let hard = softmax_tau(student_logits, 1.0)?;
    let soft = softmax_tau(student_logits, lp.tau)?;
    let n = student_logits.rows() as f64;
    let k = if lp.kl_tau_square {
        lp.tau
    } else {
        1.0 / lp.tau
    };
    let kd = (1.0 - lp.alpha) * k;
    let data: Vec<f64> = hard
        .data()
        .iter()
        .zip(onehot.data())
        .zip(soft.data().iter().zip(target.data()))
        .map(|((&p, &y), (&s, &t))| (lp.alpha * (p - y) + kd * (s - t)) / n)
        .collect();
    Tensor::new(student_logits.shape().to_vec(), data)
}

/// Partial derivative of the composite loss with respect to each target
/// entry, treating the entries as free variables:
/// `(1 - alpha) scale / B * (ln max(t, floor) - ln max(s, floor) + [t > floor])`
/// where `s = softmax(z / tau)`. This is the upstream signal for the
/// attention parameters.
pub fn kl_upstream_grad(
    student_logits: &Tensor,
    target: &Tensor,
    lp: &LossParams,
) -> Result<Tensor> {
    lp.validate()?;
    same_shape(student_logits, target, "upstream logits vs target")?;
    let soft = softmax_tau(student_logits, lp.tau)?;
    let n = target.rows() as f64;
    let scale = (1.0 - lp.alpha) * lp.kl_scale() / n;
    let data: Vec<f64> = target
        .data()
        .iter()
        .zip(soft.data())
        .map(|(&t, &s)| {
            let indicator = if t > PROB_FLOOR { 1.0 } else { 0.0 };
            scale * (t.max(PROB_FLOOR).ln() - s.max(PROB_FLOOR).ln() + indicator)
        })
        .collect();
    Tensor::new(target.shape().to_vec(), data)
}

/// Backpropagate `dlogits` through a forward trace. `extra_feature_grad`,
/// when present, is added to the gradient arriving at the last hidden
/// activation (the feature used by attention weighting).
pub fn backprop(
    spec: &MlpSpec,
    params: &ParamSet,
    trace: &ForwardTrace,
    dlogits: &Tensor,
    extra_feature_grad: Option<&Tensor>,
) -> Result<Gradients> {
    same_shape(dlogits, &trace.logits, "backprop upstream vs logits")?;
    let layers = spec.num_layers();
    let mut grads = Gradients::zeros(spec);
    let mut delta = dlogits.clone();

    for l in (0..layers).rev() {
        grads.weights[l] = trace.activations[l].matmul_tn(&delta)?;
        grads.biases[l] = delta.column_sums()?;
        if l == 0 {
            break;
        }
        let mut da = delta.matmul_nt(&params.weights[l])?;
        if l == layers - 1 {
            if let Some(extra) = extra_feature_grad {
                same_shape(extra, &da, "feature gradient rows")?;
                for (v, &e) in da.data_mut().iter_mut().zip(extra.data()) {
                    *v += e;
                }
            }
        }
        // ReLU gate: activations below zero pass no gradient.
        for (v, &z) in da
            .data_mut()
            .iter_mut()
            .zip(trace.pre_activations[l - 1].data())
        {
            if z <= 0.0 {
                *v = 0.0;
            }
        }
        delta = da;
    }
    Ok(grads)
}

/// Central-difference gradient of `eval` around `base`, one coordinate at a
/// time: `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
pub fn finite_diff_grad<F>(base: &[f64], h: f64, mut eval: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut point = base.to_vec();
    let mut grad = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let orig = point[i];
        point[i] = orig + h;
        let above = eval(&point);
        point[i] = orig - h;
        let below = eval(&point);
        point[i] = orig;
        grad.push((above - below) / (2.0 * h));
    }
    grad
}

fn same_shape(a: &Tensor, b: &Tensor, axis: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(EekdError::DimensionMismatch {
            axis,
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(())
}
