//! Feedforward ReLU networks with explicit parameters and forward traces.
//!
//! Layer `l` computes `z_l = a_{l-1} W_l + b_l` with `W_l` stored row-major
//! as `(in_dim x out_dim)`. Hidden layers apply ReLU; the final layer emits
//! raw logits. The last hidden activation is the feature vector used by the
//! attention weighting in the ensemble module.

use crate::error::{EekdError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Architecture description: input width, hidden widths, class count.
/// The activation is fixed to ReLU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_dims,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Re-check the invariants (used after deserializing).
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(EekdError::InvalidConfig(
                "input_dim must be positive".into(),
            ));
        }
        if self.num_classes == 0 {
            return Err(EekdError::InvalidConfig(
                "num_classes must be positive".into(),
            ));
        }
        if self.hidden_dims.is_empty() {
            return Err(EekdError::InvalidConfig(
                "hidden_dims must contain at least one layer".into(),
            ));
        }
        if self.hidden_dims.contains(&0) {
            return Err(EekdError::InvalidConfig(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Width of the last hidden layer.
    pub fn feature_dim(&self) -> usize {
        *self.hidden_dims.last().expect("non-empty hidden_dims")
    }

    /// `[input_dim, hidden..., num_classes]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    /// Number of linear layers (hidden count plus the classifier).
    pub fn num_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }
}

/// Learnable parameters plus SGD momentum buffers of identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    pub vel_weights: Vec<Tensor>,
    pub vel_biases: Vec<Tensor>,
}

impl ParamSet {
    /// Zero parameters and buffers for the given architecture.
    pub fn zeros(spec: &MlpSpec) -> Self {
        let dims = spec.layer_dims();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..spec.num_layers() {
            weights.push(Tensor::zeros(vec![dims[l], dims[l + 1]]));
            biases.push(Tensor::zeros(vec![dims[l + 1]]));
        }
        let vel_weights = weights.clone();
        let vel_biases = biases.clone();
        ParamSet {
            weights,
            biases,
            vel_weights,
            vel_biases,
        }
    }

    /// Drop the momentum buffers back to zero (used when a parameter set is
    /// repurposed as an inference-only teacher).
    pub fn reset_momentum(&mut self) {
        for v in self
            .vel_weights
            .iter_mut()
            .chain(self.vel_biases.iter_mut())
        {
            v.data_mut().fill(0.0);
        }
    }

    pub fn matches_spec(&self, spec: &MlpSpec) -> bool {
        let dims = spec.layer_dims();
        self.weights.len() == spec.num_layers()
            && self.biases.len() == spec.num_layers()
            && self
                .weights
                .iter()
                .enumerate()
                .all(|(l, w)| w.shape() == [dims[l], dims[l + 1]])
            && self
                .biases
                .iter()
                .enumerate()
                .all(|(l, b)| b.shape() == [dims[l + 1]])
    }
}

/// Gradients with the same layer layout as a [`ParamSet`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros(spec: &MlpSpec) -> Self {
        let p = ParamSet::zeros(spec);
        Gradients {
            weights: p.weights,
            biases: p.biases,
        }
    }
}

/// Everything the forward pass computed for one batch: per-layer
/// pre-activations and activations (position 0 holds the inputs), the last
/// hidden activation as `feature`, and the classifier output as `logits`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Tensor>,
    pub activations: Vec<Tensor>,
    pub feature: Tensor,
    pub logits: Tensor,
}

/// Initialize parameters from a seed: each weight is drawn uniformly from
/// `[-b, b]` with `b = sqrt(6 / (fan_in + fan_out))`, where the uniform is
/// `(2u - 1) * b` and `u` comes from [`Rng::next_f64`] on `Rng::new(seed)`.
/// Weights fill layer by layer in row-major order; biases and momentum
/// buffers start at zero.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut rng = Rng::new(seed);
    let dims = spec.layer_dims();
    let mut params = ParamSet::zeros(spec);
    for l in 0..spec.num_layers() {
        let bound = (6.0 / (dims[l] + dims[l + 1]) as f64).sqrt();
        for w in params.weights[l].data_mut() {
            *w = rng.next_symmetric(bound);
        }
    }
    params
}

/// Forward pass for one batch. Pure function of `(params, inputs)`.
pub fn forward(spec: &MlpSpec, params: &ParamSet, inputs: &Tensor) -> Result<ForwardTrace> {
    if inputs.shape().len() != 2 {
        return Err(EekdError::DimensionMismatch {
            axis: "input rank",
            expected: 2,
            found: inputs.shape().len(),
        });
    }
    if inputs.cols() != spec.input_dim {
        return Err(EekdError::DimensionMismatch {
            axis: "input feature dimension",
            expected: spec.input_dim,
            found: inputs.cols(),
        });
    }
    if !params.matches_spec(spec) {
        return Err(EekdError::DimensionMismatch {
            axis: "parameter layer shapes",
            expected: spec.num_layers(),
            found: params.weights.len(),
        });
    }

    let layers = spec.num_layers();
    let mut pre_activations = Vec::with_capacity(layers);
    let mut activations = Vec::with_capacity(layers + 1);
    activations.push(inputs.clone());

    for l in 0..layers {
        let mut z = activations[l].matmul(&params.weights[l])?;
        let bias = params.biases[l].data();
        for row in 0..z.rows() {
            for (v, &b) in z.row_mut(row).iter_mut().zip(bias) {
                *v += b;
            }
        }
        pre_activations.push(z.clone());
        if l + 1 < layers {
            for v in z.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        activations.push(z);
    }

    let logits = activations[layers].clone();
    logits.ensure_finite("forward logits")?;
    // activations[layers - 1] is the last hidden activation.
    let feature = activations[layers - 1].clone();
    Ok(ForwardTrace {
        pre_activations,
        activations,
        feature,
        logits,
    })
}
