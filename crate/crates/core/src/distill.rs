//! End-to-end pipelines: teacher training with snapshot capture, ensemble
//! distillation, the independently-trained-teachers baseline, and exact
//! cost accounting.
//!
//! Every pipeline derives three independent seed streams from its run
//! seed: parameter initialization uses the seed directly, batch shuffling
//! draws per-epoch seeds from a stream offset by the golden-ratio
//! constant, and attention projections initialize from a stream offset by
//! twice that constant. Runs with equal configs are bit-identical.

use crate::data::{batch_iter, Batch, Dataset};
use crate::ensemble::{
    attention_grads, attention_weights, ensemble_target, fixed_weights, AttentionParams,
    EnsembleWeights, WeightStrategy,
};
use crate::error::{EekdError, Result};
use crate::loss::{
    backprop, ce_grads, kd_loss, kl_upstream_grad, loss_grads, softmax_tau, LossParams,
};
use crate::mlp::{forward, mlp_init, MlpSpec, ParamSet};
use crate::optim::{sgd_step, SgdConfig};
use crate::rng::{Rng, GOLDEN_GAMMA};
use crate::schedule::Schedule;
use crate::snapshot::{snapshot_epochs, Checkpoint, SnapshotSet};
use crate::tensor::Tensor;
use std::time::Instant;

const EVAL_CHUNK: usize = 512;

/// One training run: architecture, duration, batching, annealing, and the
/// SGD hyperparameters, all keyed by a single seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: MlpSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.schedule.validate()?;
        if self.epochs == 0 {
            return Err(EekdError::InvalidConfig("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(EekdError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if self.schedule.total_epochs() != self.epochs {
            return Err(EekdError::InvalidConfig(format!(
                "schedule spans {} epochs but the run has {}",
                self.schedule.total_epochs(),
                self.epochs
            )));
        }
        self.sgd()?;
        Ok(())
    }

    pub fn sgd(&self) -> Result<SgdConfig> {
        SgdConfig::new(self.momentum, self.weight_decay)
    }
}

/// Distillation setup: loss mix, temperature, ensemble size and weighting,
/// plus the student's own training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub alpha: f64,
    pub tau: f64,
    pub m: usize,
    pub strategy: WeightStrategy,
    pub student: TrainConfig,
    /// Scale the divergence term by `tau^2`.
    pub kl_tau_square: bool,
    /// Let the attention gradient flow through the student features into
    /// the student body (off by default: features are treated as
    /// constants when weighting teachers).
    pub attn_grad_through_v: bool,
    /// Precompute every teacher's soft targets over the whole training set
    /// once instead of re-running teachers per batch. Only valid for fixed
    /// weight strategies, which never look at per-batch features.
    pub cache_targets: bool,
}

impl DistillConfig {
    pub fn new(
        alpha: f64,
        tau: f64,
        m: usize,
        strategy: WeightStrategy,
        student: TrainConfig,
    ) -> Result<Self> {
        let dcfg = DistillConfig {
            alpha,
            tau,
            m,
            strategy,
            student,
            kl_tau_square: false,
            attn_grad_through_v: false,
            cache_targets: false,
        };
        dcfg.validate()?;
        Ok(dcfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_params()?.validate()?;
        self.student.validate()?;
        if self.m == 0 {
            return Err(EekdError::InvalidConfig(
                "ensemble size must be positive".into(),
            ));
        }
        if let WeightStrategy::Attention { embed_dim } = self.strategy {
            if embed_dim == 0 {
                return Err(EekdError::InvalidConfig(
                    "attention embed_dim must be positive".into(),
                ));
            }
        }
        if self.cache_targets && self.strategy.is_attention() {
            return Err(EekdError::InvalidConfig(
                "cache_targets requires a fixed weight strategy".into(),
            ));
        }
        if self.attn_grad_through_v && !self.strategy.is_attention() {
            return Err(EekdError::InvalidConfig(
                "attn_grad_through_v only applies to the attention strategy".into(),
            ));
        }
        Ok(())
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        let mut lp = LossParams::new(self.alpha, self.tau)?;
        lp.kl_tau_square = self.kl_tau_square;
        Ok(lp)
    }
}

/// Exact per-sample pass counts for the training phases; evaluation passes
/// are never counted. Wall clock is informational only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostLedger {
    pub teacher_train_forwards: u64,
    pub teacher_train_backwards: u64,
    pub distill_teacher_forwards: u64,
    pub distill_student_forwards: u64,
    pub distill_student_backwards: u64,
    pub wall_clock_seconds: f64,
}

impl CostLedger {
    pub fn merge(&mut self, other: &CostLedger) {
        self.teacher_train_forwards += other.teacher_train_forwards;
        self.teacher_train_backwards += other.teacher_train_backwards;
        self.distill_teacher_forwards += other.distill_teacher_forwards;
        self.distill_student_forwards += other.distill_student_forwards;
        self.distill_student_backwards += other.distill_student_backwards;
        self.wall_clock_seconds += other.wall_clock_seconds;
    }

    /// Every training-phase forward, teacher and student combined.
    pub fn total_forwards(&self) -> u64 {
        self.teacher_train_forwards + self.distill_teacher_forwards + self.distill_student_forwards
    }
}

/// Scalars recorded after each epoch of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// One-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

/// Full per-epoch history plus the last-epoch test accuracy, which is the
/// reported headline number.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    pub final_test_accuracy: f64,
}

/// Per-batch training outcome: the loss value and how many training-pass
/// predictions matched their labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
}

fn shuffle_stream(seed: u64) -> Rng {
    Rng::new(seed.wrapping_add(GOLDEN_GAMMA))
}

fn attention_seed(seed: u64) -> u64 {
    seed.wrapping_add(GOLDEN_GAMMA).wrapping_add(GOLDEN_GAMMA)
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(row, &label)| argmax(logits.row(row)) == label)
        .count()
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Top-1 accuracy of `params` on `data`.
pub fn evaluate(spec: &MlpSpec, params: &ParamSet, data: &Dataset) -> Result<f64> {
    let mut correct = 0;
    for_each_chunk(data, |inputs, labels| {
        let trace = forward(spec, params, &inputs)?;
        correct += count_correct(&trace.logits, labels);
        Ok(())
    })?;
    Ok(correct as f64 / data.len() as f64)
}

/// Top-1 accuracy of the weighted teacher ensemble: probabilities at unit
/// temperature are fused with the given global weights, then argmaxed.
pub fn ensemble_accuracy(teachers: &[Checkpoint], weights: &[f64], data: &Dataset) -> Result<f64> {
    if teachers.is_empty() {
        return Err(EekdError::InvalidConfig(
            "ensemble accuracy needs at least one teacher".into(),
        ));
    }
    let mut correct = 0;
    for_each_chunk(data, |inputs, labels| {
        let probs: Vec<Tensor> = teachers
            .iter()
            .map(|t| softmax_tau(&forward(&t.spec, &t.params, &inputs)?.logits, 1.0))
            .collect::<Result<_>>()?;
        let fused = ensemble_target(&probs, &EnsembleWeights::Global(weights.to_vec()))?;
        correct += count_correct(&fused, labels);
        Ok(())
    })?;
    Ok(correct as f64 / data.len() as f64)
}

fn for_each_chunk(data: &Dataset, mut f: impl FnMut(Tensor, &[usize]) -> Result<()>) -> Result<()> {
    let dim = data.input_dim();
    let mut start = 0;
    while start < data.len() {
        let end = (start + EVAL_CHUNK).min(data.len());
        let mut inputs = vec![0.0; (end - start) * dim];
        for (row, i) in (start..end).enumerate() {
            inputs[row * dim..(row + 1) * dim].copy_from_slice(data.inputs().row(i));
        }
        let inputs = Tensor::matrix(end - start, dim, inputs)?;
        f(inputs, &data.labels()[start..end])?;
        start = end;
    }
    Ok(())
}

/// Train a teacher with plain cross-entropy under its schedule, capturing
/// checkpoints at the `m` uniform snapshot epochs. The ledger counts one
/// forward and one backward per training sample per epoch, so the teacher
/// cost is independent of `m`: snapshotting is free.
pub fn train_teacher(
    cfg: &TrainConfig,
    m: usize,
    train: &Dataset,
    test: &Dataset,
) -> Result<(SnapshotSet, RunMetrics, CostLedger)> {
    let started = Instant::now();
    cfg.validate()?;
    check_dataset(&cfg.spec, train, "training")?;
    check_dataset(&cfg.spec, test, "test")?;
    let capture_at = snapshot_epochs(cfg.epochs, m)?;
    let sgd = cfg.sgd()?;

    let mut params = mlp_init(&cfg.spec, cfg.seed);
    let mut shuffle = shuffle_stream(cfg.seed);
    let mut ledger = CostLedger::default();
    let mut checkpoints = Vec::with_capacity(m);
    let mut history = Vec::with_capacity(cfg.epochs);
    let n = train.len() as f64;

    for epoch in 0..cfg.epochs {
        let lr = cfg.schedule.lr_at(epoch)?;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in &batch_iter(train, cfg.batch_size, shuffle.next_u64())? {
            let trace = forward(&cfg.spec, &params, &batch.inputs)?;
            ledger.teacher_train_forwards += batch.labels.len() as u64;
            let probs = softmax_tau(&trace.logits, 1.0)?;
            loss_sum +=
                crate::loss::cross_entropy(&probs, &batch.onehot)? * batch.labels.len() as f64;
            correct += count_correct(&trace.logits, &batch.labels);
            let dlogits = ce_grads(&trace.logits, &batch.onehot)?;
            let grads = backprop(&cfg.spec, &params, &trace, &dlogits, None)?;
            sgd_step(&cfg.spec, &mut params, &grads, lr, &sgd)?;
            ledger.teacher_train_backwards += batch.labels.len() as u64;
        }
        history.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: evaluate(&cfg.spec, &params, test)?,
        });
        if capture_at.contains(&(epoch + 1)) {
            checkpoints.push(Checkpoint::new(
                cfg.spec.clone(),
                params.clone(),
                epoch + 1,
                cfg.schedule.kind_name(),
                cfg.seed,
            )?);
        }
    }

    ledger.wall_clock_seconds = started.elapsed().as_secs_f64();
    let final_test_accuracy = history.last().expect("epochs >= 1").test_accuracy;
    Ok((
        SnapshotSet::new(checkpoints)?,
        RunMetrics {
            epochs: history,
            final_test_accuracy,
        },
        ledger,
    ))
}

/// One distillation step on one batch: run every teacher (features and
/// soft targets at the distillation temperature), run the student, weight
/// the teachers, fuse the targets, and take one SGD step on the student
/// and, for the attention strategy, on the projections. The ledger gains
/// `m` teacher forwards, one student forward, and one student backward per
/// sample.
pub fn eekd_step(
    batch: &Batch,
    dcfg: &DistillConfig,
    student: &mut ParamSet,
    attn: &mut Option<AttentionParams>,
    teachers: &[Checkpoint],
    lr: f64,
    ledger: &mut CostLedger,
) -> Result<StepOutcome> {
    check_teachers(dcfg, teachers)?;
    let batch_count = batch.labels.len() as u64;
    let mut features = Vec::with_capacity(teachers.len());
    let mut targets = Vec::with_capacity(teachers.len());
    for teacher in teachers {
        let trace = forward(&teacher.spec, &teacher.params, &batch.inputs)?;
        ledger.distill_teacher_forwards += batch_count;
        targets.push(softmax_tau(&trace.logits, dcfg.tau)?);
        features.push(trace.feature);
    }
    step_on_targets(
        batch,
        dcfg,
        student,
        attn,
        Some(&features),
        &targets,
        lr,
        ledger,
    )
}

#[allow(clippy::too_many_arguments)]
fn step_on_targets(
    batch: &Batch,
    dcfg: &DistillConfig,
    student: &mut ParamSet,
    attn: &mut Option<AttentionParams>,
    teacher_features: Option<&[Tensor]>,
    targets: &[Tensor],
    lr: f64,
    ledger: &mut CostLedger,
) -> Result<StepOutcome> {
    let spec = &dcfg.student.spec;
    let sgd = dcfg.student.sgd()?;
    let lp = dcfg.loss_params()?;

    let trace = forward(spec, student, &batch.inputs)?;
    ledger.distill_student_forwards += batch.labels.len() as u64;

    let weights = if dcfg.strategy.is_attention() {
        let attn_ref = attn.as_ref().ok_or_else(|| {
            EekdError::Contract("attention strategy requires attention parameters".into())
        })?;
        let features = teacher_features.ok_or_else(|| {
            EekdError::Contract("attention strategy requires teacher features".into())
        })?;
        EnsembleWeights::PerSample(attention_weights(&trace.feature, features, attn_ref)?)
    } else {
        EnsembleWeights::Global(fixed_weights(dcfg.strategy, targets.len())?)
    };
    let target = ensemble_target(targets, &weights)?;

    let loss = kd_loss(&trace.logits, &target, &batch.onehot, &lp)?;
    let correct = count_correct(&trace.logits, &batch.labels);
    let dlogits = loss_grads(&trace.logits, &target, &batch.onehot, &lp)?;

    let attn_update = if dcfg.strategy.is_attention() {
        let attn_ref = attn.as_ref().expect("checked above");
        let features = teacher_features.expect("checked above");
        let upstream = kl_upstream_grad(&trace.logits, &target, &lp)?;
        Some(attention_grads(
            &upstream,
            targets,
            &trace.feature,
            features,
            attn_ref,
            dcfg.attn_grad_through_v,
        )?)
    } else {
        None
    };

    let extra = attn_update.as_ref().and_then(|g| g.v.as_ref());
    let grads = backprop(spec, student, &trace, &dlogits, extra)?;
    sgd_step(spec, student, &grads, lr, &sgd)?;
    ledger.distill_student_backwards += batch.labels.len() as u64;
    if let Some(grads) = attn_update {
        attn.as_mut()
            .expect("checked above")
            .sgd_step(&grads, lr, &sgd)?;
    }
    Ok(StepOutcome { loss, correct })
}

/// Distill a student against an explicit teacher list. All teachers must
/// share one architecture; the student may differ in hidden widths but
/// must agree on input width and class count. Teachers are read-only.
pub fn distill_from_teachers(
    dcfg: &DistillConfig,
    teachers: &[Checkpoint],
    train: &Dataset,
    test: &Dataset,
) -> Result<(ParamSet, RunMetrics, CostLedger)> {
    let started = Instant::now();
    dcfg.validate()?;
    check_teachers(dcfg, teachers)?;
    check_dataset(&dcfg.student.spec, train, "training")?;
    check_dataset(&dcfg.student.spec, test, "test")?;

    let spec = &dcfg.student.spec;
    let mut student = mlp_init(spec, dcfg.student.seed);
    let mut attn = match dcfg.strategy {
        WeightStrategy::Attention { embed_dim } => Some(AttentionParams::init(
            spec.feature_dim(),
            teachers[0].spec.feature_dim(),
            embed_dim,
            attention_seed(dcfg.student.seed),
        )?),
        _ => None,
    };

    let mut ledger = CostLedger::default();
    let cached = if dcfg.cache_targets {
        Some(cache_full_targets(teachers, train, dcfg.tau, &mut ledger)?)
    } else {
        None
    };

    let mut shuffle = shuffle_stream(dcfg.student.seed);
    let mut history = Vec::with_capacity(dcfg.student.epochs);
    let n = train.len() as f64;
    for epoch in 0..dcfg.student.epochs {
        let lr = dcfg.student.schedule.lr_at(epoch)?;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in &batch_iter(train, dcfg.student.batch_size, shuffle.next_u64())? {
            let outcome = match &cached {
                Some(full) => {
                    let targets = gather_rows(full, &batch.indices)?;
                    step_on_targets(
                        batch,
                        dcfg,
                        &mut student,
                        &mut attn,
                        None,
                        &targets,
                        lr,
                        &mut ledger,
                    )?
                }
                None => eekd_step(
                    batch,
                    dcfg,
                    &mut student,
                    &mut attn,
                    teachers,
                    lr,
                    &mut ledger,
                )?,
            };
            loss_sum += outcome.loss * batch.labels.len() as f64;
            correct += outcome.correct;
        }
        history.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            train_accuracy: correct as f64 / n,
            test_accuracy: evaluate(spec, &student, test)?,
        });
    }

    ledger.wall_clock_seconds = started.elapsed().as_secs_f64();
    let final_test_accuracy = history.last().expect("epochs >= 1").test_accuracy;
    Ok((
        student,
        RunMetrics {
            epochs: history,
            final_test_accuracy,
        },
        ledger,
    ))
}

/// Distill a student from a snapshot set (the ensemble pipeline proper).
pub fn distill_student(
    dcfg: &DistillConfig,
    snapshots: &SnapshotSet,
    train: &Dataset,
    test: &Dataset,
) -> Result<(ParamSet, RunMetrics, CostLedger)> {
    distill_from_teachers(dcfg, snapshots.checkpoints(), train, test)
}

/// The independently-trained-teachers baseline: train `m` full teachers
/// that differ only by seed (`base.seed + i` for teacher `i` in `0..m`),
/// then distill against their final models with mean weights. The teacher
/// phase therefore costs `m` times the snapshot pipeline's teacher phase.
pub fn sed_pipeline(
    base: &TrainConfig,
    dcfg: &DistillConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<(ParamSet, RunMetrics, CostLedger)> {
    dcfg.validate()?;
    let mut ledger = CostLedger::default();
    let mut finals = Vec::with_capacity(dcfg.m);
    for i in 0..dcfg.m {
        let mut cfg = base.clone();
        cfg.seed = base.seed.wrapping_add(i as u64);
        let (snapshots, _, teacher_ledger) = train_teacher(&cfg, 1, train, test)?;
        ledger.merge(&teacher_ledger);
        finals.push(snapshots.last().clone());
    }
    let mut distill_cfg = dcfg.clone();
    distill_cfg.strategy = WeightStrategy::Mean;
    distill_cfg.attn_grad_through_v = false;
    let (student, metrics, distill_ledger) =
        distill_from_teachers(&distill_cfg, &finals, train, test)?;
    ledger.merge(&distill_ledger);
    Ok((student, metrics, ledger))
}

fn cache_full_targets(
    teachers: &[Checkpoint],
    train: &Dataset,
    tau: f64,
    ledger: &mut CostLedger,
) -> Result<Vec<Tensor>> {
    let mut full = Vec::with_capacity(teachers.len());
    for teacher in teachers {
        let mut rows = Vec::with_capacity(train.len() * train.num_classes());
        for_each_chunk(train, |inputs, labels| {
            let trace = forward(&teacher.spec, &teacher.params, &inputs)?;
            ledger.distill_teacher_forwards += labels.len() as u64;
            rows.extend_from_slice(softmax_tau(&trace.logits, tau)?.data());
            Ok(())
        })?;
        full.push(Tensor::matrix(train.len(), train.num_classes(), rows)?);
    }
    Ok(full)
}

fn gather_rows(full: &[Tensor], indices: &[usize]) -> Result<Vec<Tensor>> {
    full.iter()
        .map(|t| {
            let cols = t.cols();
            let mut data = Vec::with_capacity(indices.len() * cols);
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(indices.len(), cols, data)
        })
        .collect()
}

fn check_teachers(dcfg: &DistillConfig, teachers: &[Checkpoint]) -> Result<()> {
    if teachers.len() != dcfg.m {
        return Err(EekdError::DimensionMismatch {
            axis: "teacher count vs ensemble size",
            expected: dcfg.m,
            found: teachers.len(),
        });
    }
    let first = &teachers[0].spec;
    if teachers.iter().any(|t| t.spec != *first) {
        return Err(EekdError::Contract(
            "all teachers in one ensemble must share an architecture".into(),
        ));
    }
    let student = &dcfg.student.spec;
    if first.input_dim != student.input_dim {
        return Err(EekdError::DimensionMismatch {
            axis: "teacher vs student input width",
            expected: student.input_dim,
            found: first.input_dim,
        });
    }
    if first.num_classes != student.num_classes {
        return Err(EekdError::DimensionMismatch {
            axis: "teacher vs student class count",
            expected: student.num_classes,
            found: first.num_classes,
        });
    }
    Ok(())
}

fn check_dataset(spec: &MlpSpec, data: &Dataset, which: &'static str) -> Result<()> {
    if data.input_dim() != spec.input_dim {
        return Err(EekdError::DimensionMismatch {
            axis: which,
            expected: spec.input_dim,
            found: data.input_dim(),
        });
    }
    if data.num_classes() != spec.num_classes {
        return Err(EekdError::DimensionMismatch {
            axis: which,
            expected: spec.num_classes,
            found: data.num_classes(),
        });
    }
    Ok(())
}
