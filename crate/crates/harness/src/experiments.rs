//! The experiment implementations behind `eekd run`.
//!
//! Every experiment follows the same shape: for each repeat seed, build the
//! per-repeat training configs (base seeds plus the repeat seed), run the
//! pipeline, and emit `(variant, seed, metric, value)` rows. Comparison
//! experiments reuse one student seed per repeat across all variants, so
//! variant differences are never initialization differences.

use std::path::PathBuf;

use eekd_core::{
    distill_from_teachers, distill_student, ensemble_accuracy, evaluate, fixed_weights, gen_blobs,
    read_idx, save_checkpoint, sed_pipeline, train_teacher, CostLedger, Dataset, RunMetrics,
    Schedule, TrainConfig, WeightStrategy,
};

use crate::config::{DatasetConfig, ExperimentConfig, ExperimentKind, StrategyKind};
use crate::report::{Report, Row};
use crate::HarnessError;

/// Everything an experiment needs besides its config.
pub struct RunContext {
    pub train: Dataset,
    pub test: Dataset,
    pub out_dir: PathBuf,
    pub quiet: bool,
}

/// Loads or generates the train/test datasets. Runs before any training, so
/// failures here are config errors and leave no output behind.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), HarnessError> {
    match &cfg.dataset {
        DatasetConfig::Blobs {
            n_train,
            n_test,
            num_classes,
            dim,
            noise,
            seed,
        } => {
            // The test set draws from the same mixture with the next seed.
            let train = gen_blobs(*seed, *n_train, *num_classes, *dim, *noise)
                .map_err(HarnessError::config_from_core)?;
            let test = gen_blobs(seed.wrapping_add(1), *n_test, *num_classes, *dim, *noise)
                .map_err(HarnessError::config_from_core)?;
            Ok((train, test))
        }
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train =
                read_idx(train_images, train_labels).map_err(HarnessError::config_from_core)?;
            let test =
                read_idx(test_images, test_labels).map_err(HarnessError::config_from_core)?;
            Ok((train, test))
        }
    }
}

/// Runs the configured experiment and assembles the report.
pub fn execute(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Report, HarnessError> {
    let rows = match cfg.experiment {
        ExperimentKind::TrainTeacher => run_train_teacher(cfg, ctx)?,
        ExperimentKind::Distill => run_distill(cfg, ctx)?,
        ExperimentKind::Sed => run_sed(cfg, ctx)?,
        ExperimentKind::Principle1 => run_principle1(cfg, ctx)?,
        ExperimentKind::Principle2 => run_principle2(cfg, ctx)?,
        ExperimentKind::Principle3 => run_principle3(cfg, ctx)?,
        ExperimentKind::SedCompare => run_sed_compare(cfg, ctx)?,
    };
    Ok(Report::from_rows(cfg.experiment.name(), rows))
}

/// Standard metric rows for one finished run: headline accuracies, the final
/// training loss, and the cost ledger.
fn push_run_rows(
    rows: &mut Vec<Row>,
    variant: &str,
    seed: u64,
    metrics: &RunMetrics,
    ledger: &CostLedger,
) {
    let last = metrics.epochs.last();
    rows.push(Row::new(
        variant,
        seed,
        "test_accuracy",
        metrics.final_test_accuracy,
    ));
    if let Some(e) = last {
        rows.push(Row::new(variant, seed, "train_accuracy", e.train_accuracy));
        rows.push(Row::new(variant, seed, "train_loss", e.train_loss));
    }
    for (name, count) in [
        ("teacher_train_forwards", ledger.teacher_train_forwards),
        ("teacher_train_backwards", ledger.teacher_train_backwards),
        ("distill_teacher_forwards", ledger.distill_teacher_forwards),
        ("distill_student_forwards", ledger.distill_student_forwards),
        (
            "distill_student_backwards",
            ledger.distill_student_backwards,
        ),
        ("total_forwards", ledger.total_forwards()),
    ] {
        rows.push(Row::new(variant, seed, name, count as f64));
    }
    rows.push(Row::new(
        variant,
        seed,
        crate::report::WALL_CLOCK_METRIC,
        ledger.wall_clock_seconds,
    ));
}

fn progress(ctx: &RunContext, experiment: &str, variant: &str, seed: u64, accuracy: f64) {
    if !ctx.quiet {
        println!("[{experiment}] {variant} seed {seed}: test_accuracy {accuracy:.4}");
    }
}

fn runtime(e: eekd_core::EekdError) -> HarnessError {
    HarnessError::runtime_from_core(e)
}

/// Trains one teacher per seed and writes its snapshot checkpoints to disk.
fn run_train_teacher(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    std::fs::create_dir_all(&ctx.out_dir).map_err(|e| {
        HarnessError::Runtime(format!(
            "cannot create output dir {}: {e}",
            ctx.out_dir.display()
        ))
    })?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let (snapshots, metrics, ledger) =
            train_teacher(&tcfg, cfg.distill.m, &ctx.train, &ctx.test).map_err(runtime)?;
        for checkpoint in snapshots.checkpoints() {
            let path = ctx
                .out_dir
                .join(format!("teacher_s{seed}_e{:04}.eekd", checkpoint.epoch));
            save_checkpoint(checkpoint, &path).map_err(runtime)?;
        }
        push_run_rows(&mut rows, "teacher", seed, &metrics, &ledger);
        progress(
            ctx,
            "train-teacher",
            "teacher",
            seed,
            metrics.final_test_accuracy,
        );
    }
    Ok(rows)
}

/// Teacher + snapshot-ensemble distillation with the configured strategy.
fn run_distill(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let (snapshots, _, teacher_ledger) =
            train_teacher(&tcfg, cfg.distill.m, &ctx.train, &ctx.test).map_err(runtime)?;
        let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let dcfg = cfg.distill_config(scfg, cfg.distill.m, cfg.distill.strategy)?;
        let (_, metrics, mut ledger) =
            distill_student(&dcfg, &snapshots, &ctx.train, &ctx.test).map_err(runtime)?;
        ledger.merge(&teacher_ledger);
        let last = snapshots.last();
        let teacher_accuracy =
            evaluate(snapshots.spec(), &last.params, &ctx.test).map_err(runtime)?;
        rows.push(Row::new("eekd", seed, "teacher_accuracy", teacher_accuracy));
        push_run_rows(&mut rows, "eekd", seed, &metrics, &ledger);
        progress(ctx, "distill", "eekd", seed, metrics.final_test_accuracy);
    }
    Ok(rows)
}

/// Independently seeded teachers distilled with uniform weights.
fn run_sed(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let dcfg = cfg.distill_config(scfg, cfg.distill.m, cfg.distill.strategy)?;
        let (_, metrics, ledger) =
            sed_pipeline(&tcfg, &dcfg, &ctx.train, &ctx.test).map_err(runtime)?;
        push_run_rows(&mut rows, "sed", seed, &metrics, &ledger);
        progress(ctx, "sed", "sed", seed, metrics.final_test_accuracy);
    }
    Ok(rows)
}

/// Single final teacher vs snapshot ensembles from a monotone and a cyclic
/// schedule, all distilled with uniform weights into identically seeded
/// students. Reports the teacher-side accuracy next to the student's.
fn run_principle1(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let m = cfg.distill.m;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let mut tcfg_cyclic = tcfg.clone();
        tcfg_cyclic.schedule =
            Schedule::cyclic_cosine(tcfg.schedule.eta0(), tcfg.epochs, tcfg.epochs / m)
                .map_err(runtime)?;
        let (snaps_cosine, _, ledger_cosine) =
            train_teacher(&tcfg, m, &ctx.train, &ctx.test).map_err(runtime)?;
        let (snaps_cyclic, _, ledger_cyclic) =
            train_teacher(&tcfg_cyclic, m, &ctx.train, &ctx.test).map_err(runtime)?;

        let mean_weights = fixed_weights(WeightStrategy::Mean, m).map_err(runtime)?;
        let final_teacher = snaps_cosine.last().clone();
        let single_accuracy =
            evaluate(&final_teacher.spec, &final_teacher.params, &ctx.test).map_err(runtime)?;
        let nocycle_accuracy =
            ensemble_accuracy(snaps_cosine.checkpoints(), &mean_weights, &ctx.test)
                .map_err(runtime)?;
        let cycle_accuracy =
            ensemble_accuracy(snaps_cyclic.checkpoints(), &mean_weights, &ctx.test)
                .map_err(runtime)?;

        // One student config per repeat, shared by all three variants.
        let student = || -> Result<TrainConfig, HarnessError> {
            cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)
        };

        let dcfg_single = cfg.distill_config(student()?, 1, StrategyKind::Mean)?;
        let (_, metrics, mut ledger) = distill_from_teachers(
            &dcfg_single,
            std::slice::from_ref(&final_teacher),
            &ctx.train,
            &ctx.test,
        )
        .map_err(runtime)?;
        ledger.merge(&ledger_cosine);
        rows.push(Row::new(
            "single_teacher",
            seed,
            "teacher_accuracy",
            single_accuracy,
        ));
        push_run_rows(&mut rows, "single_teacher", seed, &metrics, &ledger);
        progress(
            ctx,
            "principle1",
            "single_teacher",
            seed,
            metrics.final_test_accuracy,
        );

        let dcfg_mean = cfg.distill_config(student()?, m, StrategyKind::Mean)?;
        let (_, metrics, mut ledger) =
            distill_student(&dcfg_mean, &snaps_cosine, &ctx.train, &ctx.test).map_err(runtime)?;
        ledger.merge(&ledger_cosine);
        rows.push(Row::new(
            "nocycle_ensemble",
            seed,
            "teacher_accuracy",
            nocycle_accuracy,
        ));
        push_run_rows(&mut rows, "nocycle_ensemble", seed, &metrics, &ledger);
        progress(
            ctx,
            "principle1",
            "nocycle_ensemble",
            seed,
            metrics.final_test_accuracy,
        );

        let (_, metrics, mut ledger) =
            distill_student(&dcfg_mean, &snaps_cyclic, &ctx.train, &ctx.test).map_err(runtime)?;
        ledger.merge(&ledger_cyclic);
        rows.push(Row::new(
            "cycle_ensemble",
            seed,
            "teacher_accuracy",
            cycle_accuracy,
        ));
        push_run_rows(&mut rows, "cycle_ensemble", seed, &metrics, &ledger);
        progress(
            ctx,
            "principle1",
            "cycle_ensemble",
            seed,
            metrics.final_test_accuracy,
        );
    }
    Ok(rows)
}

/// One distillation per weighting strategy over a shared snapshot set.
fn run_principle2(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let strategies = [
        StrategyKind::Mean,
        StrategyKind::LinearIncrease,
        StrategyKind::LinearDecrease,
        StrategyKind::Attention,
    ];
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
        let (snapshots, _, teacher_ledger) =
            train_teacher(&tcfg, cfg.distill.m, &ctx.train, &ctx.test).map_err(runtime)?;
        for strategy in strategies {
            let variant = strategy.to_strategy(cfg.distill.embed_dim).name();
            let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
            let dcfg = cfg.distill_config(scfg, cfg.distill.m, strategy)?;
            let (_, metrics, mut ledger) =
                distill_student(&dcfg, &snapshots, &ctx.train, &ctx.test).map_err(runtime)?;
            ledger.merge(&teacher_ledger);
            push_run_rows(&mut rows, variant, seed, &metrics, &ledger);
            progress(
                ctx,
                "principle2",
                variant,
                seed,
                metrics.final_test_accuracy,
            );
        }
    }
    Ok(rows)
}

/// Sweeps the ensemble size; each size retrains the teacher so every variant
/// is a complete pipeline with its own cost ledger.
fn run_principle3(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &m in &cfg.effective_m_list() {
            let variant = format!("m{m:02}");
            let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
            let (snapshots, _, teacher_ledger) =
                train_teacher(&tcfg, m, &ctx.train, &ctx.test).map_err(runtime)?;
            let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
            let dcfg = cfg.distill_config(scfg, m, cfg.distill.strategy)?;
            let (_, metrics, mut ledger) =
                distill_student(&dcfg, &snapshots, &ctx.train, &ctx.test).map_err(runtime)?;
            ledger.merge(&teacher_ledger);
            push_run_rows(&mut rows, &variant, seed, &metrics, &ledger);
            progress(
                ctx,
                "principle3",
                &variant,
                seed,
                metrics.final_test_accuracy,
            );
        }
    }
    Ok(rows)
}

/// Snapshot-ensemble vs independent-teacher distillation at each ensemble
/// size, with matching seeds so the M=1 rows coincide.
fn run_sed_compare(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<Vec<Row>, HarnessError> {
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        for &m in &cfg.effective_m_list() {
            let tcfg = cfg.teacher_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;

            let eekd_variant = format!("eekd_m{m:02}");
            let (snapshots, _, teacher_ledger) =
                train_teacher(&tcfg, m, &ctx.train, &ctx.test).map_err(runtime)?;
            let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
            let dcfg = cfg.distill_config(scfg, m, cfg.distill.strategy)?;
            let (_, metrics, mut ledger) =
                distill_student(&dcfg, &snapshots, &ctx.train, &ctx.test).map_err(runtime)?;
            ledger.merge(&teacher_ledger);
            push_run_rows(&mut rows, &eekd_variant, seed, &metrics, &ledger);
            progress(
                ctx,
                "sed-compare",
                &eekd_variant,
                seed,
                metrics.final_test_accuracy,
            );

            let sed_variant = format!("sed_m{m:02}");
            let scfg = cfg.student_train(ctx.train.input_dim(), ctx.train.num_classes(), seed)?;
            let dcfg = cfg.distill_config(scfg, m, cfg.distill.strategy)?;
            let (_, metrics, ledger) =
                sed_pipeline(&tcfg, &dcfg, &ctx.train, &ctx.test).map_err(runtime)?;
            push_run_rows(&mut rows, &sed_variant, seed, &metrics, &ledger);
            progress(
                ctx,
                "sed-compare",
                &sed_variant,
                seed,
                metrics.final_test_accuracy,
            );
        }
    }
    Ok(rows)
}
