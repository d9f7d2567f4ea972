//! Experience-ensemble knowledge distillation on small feedforward
//! networks, built for bit-for-bit reproducibility: a pinned PRNG, plain
//! f64 tensor math with hand-derived gradients, uniform teacher
//! snapshotting, fixed and attention-based snapshot weighting, and
//! training pipelines with exact cost accounting.

pub mod data;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod loss;
pub mod mlp;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod snapshot;
pub mod tensor;

pub use data::{batch_iter, gen_blobs, read_idx, Batch, Dataset};
pub use distill::{
    distill_from_teachers, distill_student, eekd_step, ensemble_accuracy, evaluate, sed_pipeline,
    train_teacher, CostLedger, DistillConfig, EpochMetrics, RunMetrics, StepOutcome, TrainConfig,
};
pub use ensemble::{
    attention_grads, attention_scores, attention_weights, ensemble_target, fixed_weights,
    AttentionGrads, AttentionParams, EnsembleWeights, WeightStrategy,
};
pub use error::{EekdError, Result};
pub use loss::{
    backprop, ce_grads, cross_entropy, finite_diff_grad, kd_loss, kl_div, kl_upstream_grad,
    loss_grads, softmax_tau, LossParams, PROB_FLOOR,
};
pub use mlp::{forward, mlp_init, ForwardTrace, Gradients, MlpSpec, ParamSet};
pub use optim::{sgd_step, sgd_update_tensor, SgdConfig};
pub use rng::{GaussianStream, Rng, GOLDEN_GAMMA};
pub use schedule::Schedule;
pub use snapshot::{
    load_checkpoint, save_checkpoint, snapshot_epochs, Checkpoint, SnapshotSet, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use tensor::Tensor;
