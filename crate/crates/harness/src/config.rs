//! Experiment configuration: JSON schema, validation, and conversion into
//! the core training/distillation config types.
//!
//! Configs are strict: unknown fields are rejected so a typo cannot silently
//! fall back to a default. Validation runs before any training starts, so a
//! bad config never produces partial output.

use std::path::{Path, PathBuf};

use eekd_core::{DistillConfig, MlpSpec, Schedule, TrainConfig, WeightStrategy};
use serde::Deserialize;

use crate::HarnessError;

/// Which experiment the harness executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Train a teacher, capture snapshots, write checkpoints to disk.
    TrainTeacher,
    /// Train a teacher in memory, then distill a student from its snapshots.
    Distill,
    /// Train independently seeded teachers and distill from their final models.
    Sed,
    /// Single final teacher vs snapshot ensembles from monotone and cyclic schedules.
    Principle1,
    /// One distillation per ensemble weighting strategy over a shared snapshot set.
    Principle2,
    /// Sweep the ensemble size over `m_list`.
    Principle3,
    /// Snapshot-ensemble vs independent-teacher distillation, per ensemble size.
    SedCompare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TrainTeacher => "train-teacher",
            ExperimentKind::Distill => "distill",
            ExperimentKind::Sed => "sed",
            ExperimentKind::Principle1 => "principle1",
            ExperimentKind::Principle2 => "principle2",
            ExperimentKind::Principle3 => "principle3",
            ExperimentKind::SedCompare => "sed-compare",
        }
    }

    fn needs_student(self) -> bool {
        !matches!(self, ExperimentKind::TrainTeacher)
    }

    fn takes_m_list(self) -> bool {
        matches!(
            self,
            ExperimentKind::Principle3 | ExperimentKind::SedCompare
        )
    }
}

/// Data source: either a generated Gaussian-blob dataset or IDX files on disk.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        n_train: usize,
        n_test: usize,
        num_classes: usize,
        dim: usize,
        noise: f64,
        #[serde(default = "default_data_seed")]
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

fn default_data_seed() -> u64 {
    7
}

/// Learning-rate schedule selector for a role config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    CyclicCosine,
}

/// Training hyperparameters for one model role (teacher or student).
///
/// `seed` is a base value; each experiment repeat adds its own seed to it, so
/// repeats share the config but differ in initialization and batch order.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub cycle_length: Option<usize>,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub seed: Option<u64>,
}

fn default_batch_size() -> usize {
    64
}

fn default_eta0() -> f64 {
    0.1
}

fn default_momentum() -> f64 {
    0.9
}

fn default_weight_decay() -> f64 {
    5e-4
}

/// Ensemble weighting strategy selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Mean,
    LinearIncrease,
    LinearDecrease,
    #[default]
    Attention,
}

impl StrategyKind {
    pub fn to_strategy(self, embed_dim: usize) -> WeightStrategy {
        match self {
            StrategyKind::Mean => WeightStrategy::Mean,
            StrategyKind::LinearIncrease => WeightStrategy::LinearIncrease,
            StrategyKind::LinearDecrease => WeightStrategy::LinearDecrease,
            StrategyKind::Attention => WeightStrategy::Attention { embed_dim },
        }
    }
}

/// Distillation hyperparameters shared by every distilling experiment.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub strategy: StrategyKind,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub kl_tau_square: bool,
    #[serde(default)]
    pub attn_grad_through_v: bool,
    #[serde(default)]
    pub cache_targets: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            alpha: default_alpha(),
            tau: default_tau(),
            m: default_m(),
            strategy: StrategyKind::default(),
            embed_dim: default_embed_dim(),
            kl_tau_square: false,
            attn_grad_through_v: false,
            cache_targets: false,
        }
    }
}

fn default_alpha() -> f64 {
    0.5
}

fn default_tau() -> f64 {
    5.0
}

fn default_m() -> usize {
    5
}

fn default_embed_dim() -> usize {
    16
}

/// Top-level experiment config, deserialized from a JSON file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub teacher: RoleConfig,
    pub student: Option<RoleConfig>,
    #[serde(default)]
    pub distill: DistillSection,
    pub m_list: Option<Vec<usize>>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("eekd-out")
}

const TEACHER_SEED_BASE: u64 = 101;
const STUDENT_SEED_BASE: u64 = 202;

impl ExperimentConfig {
    /// Parses and validates a config file. Any failure here is a config error;
    /// no training has started and no output has been written.
    pub fn load(path: &Path) -> Result<ExperimentConfig, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every constraint that can be checked without running anything:
    /// seed list, role presence, schedule shape, ensemble sizes, dataset paths.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must be non-empty".into()));
        }
        self.validate_dataset()?;
        self.validate_role("teacher", &self.teacher)?;
        match &self.student {
            Some(student) => self.validate_role("student", student)?,
            None => {
                if self.experiment.needs_student() {
                    return Err(HarnessError::Config(format!(
                        "experiment {} requires a student section",
                        self.experiment.name()
                    )));
                }
            }
        }
        if self.distill.m == 0 {
            return Err(HarnessError::Config("distill.m must be at least 1".into()));
        }
        if self.distill.m > self.teacher.epochs {
            return Err(HarnessError::Config(format!(
                "distill.m = {} exceeds teacher.epochs = {}",
                self.distill.m, self.teacher.epochs
            )));
        }
        if self.experiment.takes_m_list() {
            let list = self.effective_m_list();
            if list.is_empty() {
                return Err(HarnessError::Config("m_list must be non-empty".into()));
            }
            for &m in &list {
                if m == 0 || m > self.teacher.epochs {
                    return Err(HarnessError::Config(format!(
                        "m_list entry {m} is outside 1..={}",
                        self.teacher.epochs
                    )));
                }
            }
        } else if self.m_list.is_some() {
            return Err(HarnessError::Config(format!(
                "m_list only applies to principle3 and sed-compare, not {}",
                self.experiment.name()
            )));
        }
        if self.experiment == ExperimentKind::Principle1 {
            if self.teacher.schedule != ScheduleKind::Cosine {
                return Err(HarnessError::Config(
                    "principle1 derives its own schedules; set teacher.schedule to cosine".into(),
                ));
            }
            if !self.teacher.epochs.is_multiple_of(self.distill.m) {
                return Err(HarnessError::Config(format!(
                    "principle1 needs distill.m ({}) to divide teacher.epochs ({})",
                    self.distill.m, self.teacher.epochs
                )));
            }
        }
        Ok(())
    }

    fn validate_dataset(&self) -> Result<(), HarnessError> {
        match &self.dataset {
            DatasetConfig::Blobs {
                n_train,
                n_test,
                num_classes,
                dim,
                noise,
                ..
            } => {
                if *num_classes < 2 {
                    return Err(HarnessError::Config(
                        "dataset.num_classes must be at least 2".into(),
                    ));
                }
                if *dim < 2 {
                    return Err(HarnessError::Config(
                        "dataset.dim must be at least 2".into(),
                    ));
                }
                for (name, n) in [("n_train", *n_train), ("n_test", *n_test)] {
                    if n == 0 || n % num_classes != 0 {
                        return Err(HarnessError::Config(format!(
                            "dataset.{name} = {n} must be a positive multiple of num_classes"
                        )));
                    }
                }
                if !(noise.is_finite() && *noise > 0.0) {
                    return Err(HarnessError::Config(
                        "dataset.noise must be finite and positive".into(),
                    ));
                }
            }
            DatasetConfig::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for path in [train_images, train_labels, test_images, test_labels] {
                    if !path.is_file() {
                        return Err(HarnessError::Config(format!(
                            "dataset file not found: {}",
                            path.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn validate_role(&self, name: &str, role: &RoleConfig) -> Result<(), HarnessError> {
        if role.epochs == 0 {
            return Err(HarnessError::Config(format!(
                "{name}.epochs must be positive"
            )));
        }
        if role.batch_size == 0 {
            return Err(HarnessError::Config(format!(
                "{name}.batch_size must be positive"
            )));
        }
        if !(role.eta0.is_finite() && role.eta0 > 0.0) {
            return Err(HarnessError::Config(format!(
                "{name}.eta0 must be finite and positive"
            )));
        }
        if !(0.0..1.0).contains(&role.momentum) {
            return Err(HarnessError::Config(format!(
                "{name}.momentum must lie in [0, 1)"
            )));
        }
        if !(role.weight_decay.is_finite() && role.weight_decay >= 0.0) {
            return Err(HarnessError::Config(format!(
                "{name}.weight_decay must be finite and non-negative"
            )));
        }
        for (i, &w) in role.hidden_dims.iter().enumerate() {
            if w == 0 {
                return Err(HarnessError::Config(format!(
                    "{name}.hidden_dims[{i}] must be positive"
                )));
            }
        }
        match role.schedule {
            ScheduleKind::Cosine => {
                if role.cycle_length.is_some() {
                    return Err(HarnessError::Config(format!(
                        "{name}.cycle_length only applies to the cyclic_cosine schedule"
                    )));
                }
            }
            ScheduleKind::CyclicCosine => {
                let cycle = role.cycle_length.ok_or_else(|| {
                    HarnessError::Config(format!(
                        "{name}.cycle_length is required for the cyclic_cosine schedule"
                    ))
                })?;
                if cycle == 0 || !role.epochs.is_multiple_of(cycle) {
                    return Err(HarnessError::Config(format!(
                        "{name}.cycle_length = {cycle} must divide epochs = {}",
                        role.epochs
                    )));
                }
            }
        }
        Ok(())
    }

    /// Ensemble sizes for the sweep experiments, with their documented defaults.
    pub fn effective_m_list(&self) -> Vec<usize> {
        match &self.m_list {
            Some(list) => list.clone(),
            None => match self.experiment {
                ExperimentKind::Principle3 => vec![1, 3, 5, 7, 10],
                ExperimentKind::SedCompare => vec![1, 3, 5],
                _ => Vec::new(),
            },
        }
    }

    /// Base seed for the teacher role (config value or the documented default).
    pub fn teacher_base_seed(&self) -> u64 {
        self.teacher.seed.unwrap_or(TEACHER_SEED_BASE)
    }

    /// Base seed for the student role (config value or the documented default).
    pub fn student_base_seed(&self) -> u64 {
        self.student
            .as_ref()
            .and_then(|s| s.seed)
            .unwrap_or(STUDENT_SEED_BASE)
    }

    /// Materializes the teacher training config for one experiment repeat.
    pub fn teacher_train(
        &self,
        input_dim: usize,
        num_classes: usize,
        repeat_seed: u64,
    ) -> Result<TrainConfig, HarnessError> {
        role_to_train(
            &self.teacher,
            input_dim,
            num_classes,
            self.teacher_base_seed().wrapping_add(repeat_seed),
        )
    }

    /// Materializes the student training config for one experiment repeat.
    pub fn student_train(
        &self,
        input_dim: usize,
        num_classes: usize,
        repeat_seed: u64,
    ) -> Result<TrainConfig, HarnessError> {
        let role = self.student.as_ref().ok_or_else(|| {
            HarnessError::Config("student section is required for this experiment".into())
        })?;
        role_to_train(
            role,
            input_dim,
            num_classes,
            self.student_base_seed().wrapping_add(repeat_seed),
        )
    }

    /// Materializes the distillation config around a student training config.
    pub fn distill_config(
        &self,
        student: TrainConfig,
        m: usize,
        strategy: StrategyKind,
    ) -> Result<DistillConfig, HarnessError> {
        let cfg = DistillConfig {
            alpha: self.distill.alpha,
            tau: self.distill.tau,
            m,
            strategy: strategy.to_strategy(self.distill.embed_dim),
            student,
            kl_tau_square: self.distill.kl_tau_square,
            attn_grad_through_v: self.distill.attn_grad_through_v,
            cache_targets: self.distill.cache_targets,
        };
        cfg.validate().map_err(HarnessError::config_from_core)?;
        Ok(cfg)
    }
}

fn role_to_train(
    role: &RoleConfig,
    input_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<TrainConfig, HarnessError> {
    let spec = MlpSpec::new(input_dim, role.hidden_dims.clone(), num_classes)
        .map_err(HarnessError::config_from_core)?;
    let schedule = match role.schedule {
        ScheduleKind::Cosine => Schedule::cosine(role.eta0, role.epochs),
        ScheduleKind::CyclicCosine => Schedule::cyclic_cosine(
            role.eta0,
            role.epochs,
            role.cycle_length.expect("validated cycle length"),
        ),
    }
    .map_err(HarnessError::config_from_core)?;
    let cfg = TrainConfig {
        spec,
        epochs: role.epochs,
        batch_size: role.batch_size,
        schedule,
        momentum: role.momentum,
        weight_decay: role.weight_decay,
        seed,
    };
    cfg.validate().map_err(HarnessError::config_from_core)?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_json() -> serde_json::Value {
        serde_json::json!({
            "experiment": "distill",
            "seeds": [1, 2],
            "dataset": {
                "kind": "blobs",
                "n_train": 60, "n_test": 30, "num_classes": 3, "dim": 4, "noise": 1.0
            },
            "teacher": { "hidden_dims": [8], "epochs": 8 },
            "student": { "hidden_dims": [6], "epochs": 2 }
        })
    }

    fn parse(v: serde_json::Value) -> Result<ExperimentConfig, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_value(v).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse(base_json()).unwrap();
        assert_eq!(cfg.teacher.batch_size, 64);
        assert_eq!(cfg.teacher.momentum, 0.9);
        assert_eq!(cfg.teacher.weight_decay, 5e-4);
        assert_eq!(cfg.distill.alpha, 0.5);
        assert_eq!(cfg.distill.tau, 5.0);
        assert_eq!(cfg.distill.m, 5);
        assert_eq!(cfg.distill.embed_dim, 16);
        assert_eq!(cfg.distill.strategy, StrategyKind::Attention);
        assert_eq!(cfg.output_dir, PathBuf::from("eekd-out"));
        assert_eq!(cfg.teacher_base_seed(), 101);
        assert_eq!(cfg.student_base_seed(), 202);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut v = base_json();
        v["typo_field"] = serde_json::json!(3);
        assert!(parse(v).is_err());
    }

    #[test]
    fn unknown_nested_field_rejected() {
        let mut v = base_json();
        v["teacher"]["learning_rate"] = serde_json::json!(0.1);
        assert!(parse(v).is_err());
    }

    #[test]
    fn empty_seeds_rejected() {
        let mut v = base_json();
        v["seeds"] = serde_json::json!([]);
        assert!(parse(v).is_err());
    }

    #[test]
    fn missing_student_rejected_when_needed() {
        let mut v = base_json();
        v.as_object_mut().unwrap().remove("student");
        assert!(parse(v).is_err());
        let mut v2 = base_json();
        v2["experiment"] = serde_json::json!("train-teacher");
        v2.as_object_mut().unwrap().remove("student");
        assert!(parse(v2).is_ok());
    }

    #[test]
    fn m_larger_than_epochs_rejected() {
        let mut v = base_json();
        v["distill"] = serde_json::json!({ "m": 10 });
        assert!(parse(v).is_err());
    }

    #[test]
    fn m_list_gated_by_experiment() {
        let mut v = base_json();
        v["m_list"] = serde_json::json!([1, 2]);
        assert!(parse(v).is_err());
        let mut v2 = base_json();
        v2["experiment"] = serde_json::json!("principle3");
        v2["distill"] = serde_json::json!({ "m": 2 });
        v2["m_list"] = serde_json::json!([1, 2, 4]);
        assert!(parse(v2).is_ok());
    }

    #[test]
    fn principle1_needs_divisible_epochs() {
        let mut v = base_json();
        v["experiment"] = serde_json::json!("principle1");
        v["distill"] = serde_json::json!({ "m": 3 });
        assert!(parse(v.clone()).is_err());
        v["distill"] = serde_json::json!({ "m": 2 });
        assert!(parse(v).is_ok());
    }

    #[test]
    fn cyclic_schedule_needs_cycle_length() {
        let mut v = base_json();
        v["teacher"]["schedule"] = serde_json::json!("cyclic_cosine");
        assert!(parse(v.clone()).is_err());
        v["teacher"]["cycle_length"] = serde_json::json!(2);
        assert!(parse(v.clone()).is_ok());
        v["teacher"]["cycle_length"] = serde_json::json!(3);
        assert!(parse(v).is_err());
    }

    #[test]
    fn cosine_rejects_cycle_length() {
        let mut v = base_json();
        v["teacher"]["cycle_length"] = serde_json::json!(2);
        assert!(parse(v).is_err());
    }

    #[test]
    fn blob_shape_constraints_enforced() {
        let mut v = base_json();
        v["dataset"]["n_train"] = serde_json::json!(61);
        assert!(parse(v).is_err());
        let mut v2 = base_json();
        v2["dataset"]["dim"] = serde_json::json!(1);
        assert!(parse(v2).is_err());
    }

    #[test]
    fn missing_idx_paths_rejected() {
        let mut v = base_json();
        v["dataset"] = serde_json::json!({
            "kind": "idx",
            "train_images": "/nonexistent/a",
            "train_labels": "/nonexistent/b",
            "test_images": "/nonexistent/c",
            "test_labels": "/nonexistent/d"
        });
        assert!(parse(v).is_err());
    }

    #[test]
    fn repeat_seed_offsets_roles() {
        let cfg = parse(base_json()).unwrap();
        let t = cfg.teacher_train(4, 3, 9).unwrap();
        let s = cfg.student_train(4, 3, 9).unwrap();
        assert_eq!(t.seed, 101 + 9);
        assert_eq!(s.seed, 202 + 9);
    }
}
