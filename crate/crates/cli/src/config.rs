//! Experiment configuration: JSON schema, validation with field-level
//! error paths, and resolution of partial optimizer settings into fully
//! concrete [`OptimizerConfig`]s for the echo file.
//!
//! The paired-run guarantee — every optimizer block shares the task, step
//! count, and seed list — holds by construction: those fields live once at
//! the top level and optimizer blocks carry only optimizer settings.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use mona::landscape::{DoubleWellLandscape, QuadraticLandscape};
use mona::optim::{default_alpha, GammaRule, OptimizerConfig, OptimizerKind, Precision};
use mona::toynet::{Mlp, MlpSpec, TeacherStudentTask};
use mona::Mat;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides the config's `output_dir` root.
pub const OUTPUT_ROOT_ENV: &str = "MONA_OUTPUT_ROOT";

/// CLI-level error carrying the process exit code: 1 validation,
/// 2 check failure, 3 I/O.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Validation(String),
    #[error("check failure: {0}")]
    Check(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Check(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn io(context: impl Display, err: impl Display) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

fn default_clip() -> f64 {
    1e3
}

fn default_eval_every() -> u64 {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

/// Which well the double-well task starts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartWell {
    #[default]
    Sharp,
    Flat,
}

/// The task an experiment optimizes, shared by every optimizer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Quadratic bowl with a diagonal Hessian; parameters are an n×1 column.
    Quadratic {
        eigs: Vec<f64>,
        init: Vec<f64>,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_clip")]
        clip_bound: f64,
    },
    /// Two-well Gaussian landscape; parameters are an n×1 column starting
    /// at one well's center.
    DoubleWell {
        sharp_center: Vec<f64>,
        flat_center: Vec<f64>,
        depth_sharp: f64,
        depth_flat: f64,
        width_sharp: f64,
        width_flat: f64,
        #[serde(default)]
        noise_sigma: f64,
        #[serde(default = "default_clip")]
        clip_bound: f64,
        #[serde(default)]
        start: StartWell,
    },
    /// Teacher-student regression on a small MLP. The student's
    /// `init_seed` is mixed with each run seed so seeds vary both the
    /// initialization and the batch stream (paired across optimizers).
    TeacherStudent {
        teacher: MlpSpec,
        student: MlpSpec,
        batch_size: usize,
        #[serde(default)]
        data_seed: u64,
    },
}

/// A built, validated task ready to hand to the runner.
#[derive(Debug, Clone)]
pub enum TaskInstance {
    Quadratic { landscape: QuadraticLandscape<f64>, init: Mat, noise_sigma: f64, clip_bound: f64 },
    DoubleWell { landscape: DoubleWellLandscape<f64>, init: Mat, noise_sigma: f64, clip_bound: f64 },
    TeacherStudent { task: TeacherStudentTask<f64>, student: MlpSpec },
}

fn column(field: &str, values: &[f64]) -> Result<Mat, CliError> {
    if values.is_empty() {
        return Err(CliError::Validation(format!("task.{field}: must not be empty")));
    }
    Mat::from_vec(values.len(), 1, values.to_vec())
        .map_err(|e| CliError::Validation(format!("task.{field}: {e}")))
}

fn check_noise(noise_sigma: f64, clip_bound: f64) -> Result<(), CliError> {
    if !(noise_sigma >= 0.0) || !noise_sigma.is_finite() {
        return Err(CliError::Validation(
            "task.noise_sigma: must be finite and >= 0".into(),
        ));
    }
    if !(clip_bound > 0.0) || !clip_bound.is_finite() {
        return Err(CliError::Validation("task.clip_bound: must be finite and > 0".into()));
    }
    Ok(())
}

impl TaskConfig {
    /// Validate and build the task. Every constraint failure names the
    /// offending field.
    pub fn build(&self) -> Result<TaskInstance, CliError> {
        match self {
            TaskConfig::Quadratic { eigs, init, noise_sigma, clip_bound } => {
                check_noise(*noise_sigma, *clip_bound)?;
                if init.len() != eigs.len() {
                    return Err(CliError::Validation(format!(
                        "task.init: has {} entries but task.eigs has {}",
                        init.len(),
                        eigs.len()
                    )));
                }
                let init = column("init", init)?;
                let landscape =
                    QuadraticLandscape::diagonal(Mat::zeros(eigs.len(), 1), eigs.clone())
                        .map_err(|e| CliError::Validation(format!("task.eigs: {e}")))?;
                Ok(TaskInstance::Quadratic {
                    landscape,
                    init,
                    noise_sigma: *noise_sigma,
                    clip_bound: *clip_bound,
                })
            }
            TaskConfig::DoubleWell {
                sharp_center,
                flat_center,
                depth_sharp,
                depth_flat,
                width_sharp,
                width_flat,
                noise_sigma,
                clip_bound,
                start,
            } => {
                check_noise(*noise_sigma, *clip_bound)?;
                let sharp = column("sharp_center", sharp_center)?;
                let flat = column("flat_center", flat_center)?;
                let landscape = DoubleWellLandscape::new(
                    sharp,
                    flat,
                    *depth_sharp,
                    *depth_flat,
                    *width_sharp,
                    *width_flat,
                )
                .map_err(|e| CliError::Validation(format!("task: {e}")))?;
                let init = match start {
                    StartWell::Sharp => landscape.sharp_center().clone(),
                    StartWell::Flat => landscape.flat_center().clone(),
                };
                Ok(TaskInstance::DoubleWell {
                    landscape,
                    init,
                    noise_sigma: *noise_sigma,
                    clip_bound: *clip_bound,
                })
            }
            TaskConfig::TeacherStudent { teacher, student, batch_size, data_seed } => {
                let teacher_net = Mlp::<f64>::new(teacher)
                    .map_err(|e| CliError::Validation(format!("task.teacher: {e}")))?;
                student
                    .validate()
                    .map_err(|e| CliError::Validation(format!("task.student: {e}")))?;
                let t_dims = &teacher.layer_dims;
                let s_dims = &student.layer_dims;
                if s_dims.first() != t_dims.first() || s_dims.last() != t_dims.last() {
                    return Err(CliError::Validation(format!(
                        "task.student.layer_dims: input/output widths {:?} do not match \
                         the teacher's {:?}",
                        s_dims, t_dims
                    )));
                }
                let task = TeacherStudentTask::new(teacher_net, *batch_size, *data_seed)
                    .map_err(|e| CliError::Validation(format!("task.batch_size: {e}")))?;
                Ok(TaskInstance::TeacherStudent { task, student: student.clone() })
            }
        }
    }
}

/// Partial optimizer settings; anything left `None` takes the library
/// default, with `accel_alpha` re-coupled to an overridden `accel_beta`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerOverrides {
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
    pub accel_beta: Option<f64>,
    pub accel_alpha: Option<f64>,
    pub weight_decay: Option<f64>,
    /// Explicit orthogonalized-update scale γ; default is the
    /// 0.2·√max(m, n) RMS-matching rule.
    pub gamma: Option<f64>,
    pub precision: Option<Precision>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub adam_weight_decay: Option<f64>,
}

/// One named optimizer entry in an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerBlock {
    pub name: String,
    pub kind: OptimizerKind,
    #[serde(default)]
    pub settings: OptimizerOverrides,
}

/// A fully resolved (name, kind, concrete config) triple.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedRun {
    pub name: String,
    pub kind: OptimizerKind,
    pub config: OptimizerConfig,
}

impl OptimizerBlock {
    pub fn resolve(&self) -> Result<ResolvedRun, CliError> {
        let field = |name: &str| format!("optimizers[{}].settings.{name}", self.name);
        let s = &self.settings;
        let mut cfg = OptimizerConfig::default();
        if let Some(b) = s.accel_beta {
            cfg.accel_beta = b;
            cfg.accel_alpha = default_alpha(b)
                .map_err(|e| CliError::Validation(format!("{}: {e}", field("accel_beta"))))?;
        }
        if let Some(a) = s.accel_alpha {
            cfg.accel_alpha = a;
        }
        if let Some(v) = s.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = s.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = s.weight_decay {
            cfg.weight_decay = v;
        }
        if let Some(v) = s.gamma {
            cfg.gamma_rule = GammaRule::Explicit { value: v };
        }
        if let Some(v) = s.adam_beta1 {
            cfg.adam.beta1 = v;
        }
        if let Some(v) = s.adam_beta2 {
            cfg.adam.beta2 = v;
        }
        if let Some(v) = s.adam_eps {
            cfg.adam.eps = v;
        }
        if let Some(v) = s.adam_weight_decay {
            cfg.adam.weight_decay = v;
        }
        cfg.precision = match (self.kind, s.precision) {
            // The buffered stepper is the reference implementation.
            (OptimizerKind::Mona, None) => Precision::Fp32Buffered,
            (OptimizerKind::Mona, Some(Precision::Fp32Buffered)) => Precision::Fp32Buffered,
            (OptimizerKind::Mona, Some(p)) => {
                return Err(CliError::Validation(format!(
                    "{}: mona runs the buffered reference pipeline; use kind \
                     `mona_lite` for {}",
                    field("precision"),
                    precision_name(p)
                )));
            }
            // The memory-reduced variant is streaming by definition.
            (OptimizerKind::MonaLite, None) => Precision::Fp32Streaming,
            (OptimizerKind::MonaLite, Some(Precision::Fp32Buffered)) => {
                return Err(CliError::Validation(format!(
                    "{}: mona_lite is the streaming pipeline; use kind `mona` \
                     for fp32_buffered",
                    field("precision")
                )));
            }
            (OptimizerKind::MonaLite, Some(p)) => p,
            // Muon and the AdamW family keep no acceleration state.
            (_, None) => Precision::Fp32Buffered,
            (_, Some(_)) => {
                return Err(CliError::Validation(format!(
                    "{}: {} does not use acceleration storage; remove the \
                     precision override",
                    field("precision"),
                    self.kind.name()
                )));
            }
        };
        cfg.validate().map_err(|e| {
            CliError::Validation(format!(
                "optimizers[{}].settings.{}: {}",
                self.name, e.field, e.message
            ))
        })?;
        Ok(ResolvedRun { name: self.name.clone(), kind: self.kind, config: cfg })
    }
}

fn precision_name(p: Precision) -> &'static str {
    match p {
        Precision::Fp32Buffered => "fp32_buffered",
        Precision::Fp32Streaming => "fp32_streaming",
        Precision::Bf16Streaming => "bf16_streaming",
    }
}

/// Top-level experiment description (JSON file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub task: TaskConfig,
    pub optimizers: Vec<OptimizerBlock>,
    pub steps: u64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// When false (default), the CSV timing columns are written as 0 so
    /// re-runs are byte-identical.
    #[serde(default)]
    pub include_timing: bool,
}

fn dir_safe(name: &str) -> bool {
    !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && !name.starts_with('.')
}

impl ExperimentConfig {
    /// Parse a config from JSON text; errors carry the JSON path of the
    /// offending field.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| CliError::Validation(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        Self::from_json(&text)
    }

    /// Full validation: structural fields, task construction, optimizer
    /// resolution.
    pub fn validate(&self) -> Result<(), CliError> {
        if !dir_safe(&self.experiment) {
            return Err(CliError::Validation(
                "experiment: must be a non-empty name of [A-Za-z0-9._-] characters".into(),
            ));
        }
        if self.steps == 0 {
            return Err(CliError::Validation("steps: must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Validation("seeds: must not be empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.seeds {
            if !seen.insert(s) {
                return Err(CliError::Validation(format!(
                    "seeds: duplicate seed {s} (seeds map 1:1 to output files)"
                )));
            }
        }
        if self.optimizers.is_empty() {
            return Err(CliError::Validation("optimizers: must not be empty".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for b in &self.optimizers {
            if !dir_safe(&b.name) {
                return Err(CliError::Validation(format!(
                    "optimizers[{}].name: must be a non-empty name of [A-Za-z0-9._-] \
                     characters",
                    b.name
                )));
            }
            if !names.insert(&b.name) {
                return Err(CliError::Validation(format!(
                    "optimizers: duplicate name `{}`",
                    b.name
                )));
            }
        }
        self.task.build()?;
        self.resolve()?;
        Ok(())
    }

    pub fn resolve(&self) -> Result<Vec<ResolvedRun>, CliError> {
        self.optimizers.iter().map(OptimizerBlock::resolve).collect()
    }

    /// The resolved config echo written to every output directory: the
    /// experiment with every optimizer block fully concrete, defaults
    /// included.
    pub fn echo(&self) -> Result<String, CliError> {
        #[derive(Serialize)]
        struct Echo<'a> {
            experiment: &'a str,
            task: &'a TaskConfig,
            steps: u64,
            seeds: &'a [u64],
            eval_every: u64,
            output_dir: &'a Path,
            include_timing: bool,
            optimizers: Vec<ResolvedRun>,
        }
        let echo = Echo {
            experiment: &self.experiment,
            task: &self.task,
            steps: self.steps,
            seeds: &self.seeds,
            eval_every: self.eval_every,
            output_dir: &self.output_dir,
            include_timing: self.include_timing,
            optimizers: self.resolve()?,
        };
        serde_json::to_string_pretty(&echo)
            .map_err(|e| CliError::Validation(format!("config echo: {e}")))
    }

    /// Output root: explicit override (tests), then the environment
    /// variable, then the config's own `output_dir`.
    pub fn output_root(&self, root_override: Option<&Path>) -> PathBuf {
        if let Some(r) = root_override {
            return r.to_path_buf();
        }
        if let Ok(v) = std::env::var(OUTPUT_ROOT_ENV) {
            if !v.is_empty() {
                return PathBuf::from(v);
            }
        }
        self.output_dir.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mona::toynet::Activation;

    fn toy_config_json() -> String {
        r#"{
            "experiment": "ord",
            "task": {
                "kind": "teacher_student",
                "teacher": {"layer_dims": [4, 8, 4], "activation": "tanh",
                            "init_seed": 7, "init_scale": 0.8},
                "student": {"layer_dims": [4, 8, 4], "activation": "tanh",
                            "init_seed": 11, "init_scale": 0.5},
                "batch_size": 8,
                "data_seed": 3
            },
            "optimizers": [
                {"name": "mona", "kind": "mona",
                 "settings": {"learning_rate": 0.02, "weight_decay": 0.0}},
                {"name": "adamw", "kind": "adamw", "settings": {"learning_rate": 0.01}}
            ],
            "steps": 50,
            "seeds": [0, 1]
        }"#
        .to_string()
    }

    #[test]
    fn parses_and_resolves_toy_config() {
        let cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        assert_eq!(cfg.eval_every, 100);
        assert!(!cfg.include_timing);
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved[0].config.learning_rate, 0.02);
        assert_eq!(resolved[0].config.weight_decay, 0.0);
        // Untouched defaults survive resolution.
        assert_eq!(resolved[0].config.momentum, 0.95);
        assert_eq!(resolved[1].config.learning_rate, 0.01);
        matches!(cfg.task.build().unwrap(), TaskInstance::TeacherStudent { .. });
    }

    #[test]
    fn unknown_optimizer_kind_names_the_field() {
        let text = toy_config_json().replace("\"kind\": \"adamw\"", "\"kind\": \"sgd\"");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("optimizers[1].kind"), "missing field path: {msg}");
        assert!(msg.contains("sgd"), "missing offending value: {msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_field_is_rejected_with_path() {
        let text = toy_config_json().replace("\"steps\": 50", "\"steps\": 50, \"stepz\": 1");
        let err = ExperimentConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("stepz"), "{err}");
    }

    #[test]
    fn alpha_recouples_to_overridden_beta() {
        let block = OptimizerBlock {
            name: "m".into(),
            kind: OptimizerKind::Mona,
            settings: OptimizerOverrides {
                accel_beta: Some(0.975),
                ..OptimizerOverrides::default()
            },
        };
        let r = block.resolve().unwrap();
        assert_eq!(r.config.accel_beta, 0.975);
        assert!((r.config.accel_alpha - (-20.0)).abs() < 1e-9);
        // An explicit alpha wins over the coupling.
        let block = OptimizerBlock {
            name: "m".into(),
            kind: OptimizerKind::Mona,
            settings: OptimizerOverrides {
                accel_beta: Some(0.975),
                accel_alpha: Some(-3.0),
                ..OptimizerOverrides::default()
            },
        };
        assert_eq!(block.resolve().unwrap().config.accel_alpha, -3.0);
    }

    #[test]
    fn mona_lite_defaults_to_streaming_and_rejects_buffered() {
        let mut block = OptimizerBlock {
            name: "lite".into(),
            kind: OptimizerKind::MonaLite,
            settings: OptimizerOverrides::default(),
        };
        assert_eq!(block.resolve().unwrap().config.precision, Precision::Fp32Streaming);
        block.settings.precision = Some(Precision::Bf16Streaming);
        assert_eq!(block.resolve().unwrap().config.precision, Precision::Bf16Streaming);
        block.settings.precision = Some(Precision::Fp32Buffered);
        let err = block.resolve().unwrap_err();
        assert!(err.to_string().contains("precision"), "{err}");
        // And the mirror restriction for the reference pipeline.
        block.kind = OptimizerKind::Mona;
        block.settings.precision = Some(Precision::Bf16Streaming);
        assert!(block.resolve().is_err());
    }

    #[test]
    fn structural_validation_errors_name_fields() {
        let mut cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        cfg.seeds = vec![1, 1];
        assert!(cfg.validate().unwrap_err().to_string().contains("seeds"));
        let mut cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        cfg.steps = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("steps"));
        let mut cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        cfg.experiment = "bad/name".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("experiment"));
        let mut cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        cfg.optimizers[1].name = "mona".into();
        assert!(cfg.validate().unwrap_err().to_string().contains("duplicate name"));
    }

    #[test]
    fn student_width_mismatch_rejected() {
        let cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        let TaskConfig::TeacherStudent { teacher, batch_size, data_seed, .. } = cfg.task
        else {
            panic!("expected teacher_student task");
        };
        let bad = TaskConfig::TeacherStudent {
            teacher,
            student: MlpSpec {
                layer_dims: vec![4, 8, 3],
                activation: Activation::Tanh,
                init_seed: 1,
                init_scale: 0.5,
            },
            batch_size,
            data_seed,
        };
        let err = bad.build().unwrap_err();
        assert!(err.to_string().contains("student.layer_dims"), "{err}");
    }

    #[test]
    fn quadratic_task_builds_and_validates() {
        let t = TaskConfig::Quadratic {
            eigs: vec![4.0, 1.0],
            init: vec![1.0, 1.0],
            noise_sigma: 0.1,
            clip_bound: 10.0,
        };
        assert!(matches!(t.build().unwrap(), TaskInstance::Quadratic { .. }));
        let bad = TaskConfig::Quadratic {
            eigs: vec![4.0, -1.0],
            init: vec![1.0, 1.0],
            noise_sigma: 0.1,
            clip_bound: 10.0,
        };
        assert!(bad.build().unwrap_err().to_string().contains("eigs"));
        let short = TaskConfig::Quadratic {
            eigs: vec![4.0, 1.0],
            init: vec![1.0],
            noise_sigma: 0.0,
            clip_bound: 10.0,
        };
        assert!(short.build().unwrap_err().to_string().contains("init"));
    }

    #[test]
    fn double_well_start_selects_center() {
        let t = TaskConfig::DoubleWell {
            sharp_center: vec![0.0, 0.0],
            flat_center: vec![5.0, 0.0],
            depth_sharp: 1.0,
            depth_flat: 0.8,
            width_sharp: 0.1,
            width_flat: 0.5,
            noise_sigma: 0.2,
            clip_bound: 50.0,
            start: StartWell::Flat,
        };
        let TaskInstance::DoubleWell { init, landscape, .. } = t.build().unwrap() else {
            panic!("expected double well");
        };
        assert_eq!(init, *landscape.flat_center());
    }

    #[test]
    fn echo_contains_defaulted_fields() {
        let cfg = ExperimentConfig::from_json(&toy_config_json()).unwrap();
        let echo = cfg.echo().unwrap();
        // Fields the file never mentioned are spelled out in the echo.
        assert!(echo.contains("\"momentum\": 0.95"), "{echo}");
        assert!(echo.contains("\"eval_every\": 100"));
        assert!(echo.contains("\"accel_beta\": 0.99"));
        // And it parses back as JSON.
        let v: serde_json::Value = serde_json::from_str(&echo).unwrap();
        assert_eq!(v["optimizers"][0]["config"]["learning_rate"], 0.02);
    }
}
