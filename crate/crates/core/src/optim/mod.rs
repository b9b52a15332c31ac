//! Optimizers: MONA, Muon, MONA-Lite, AdamW, and AdamW-Acc, plus the
//! parameter-group state they operate on.

pub mod config;
pub mod group;
pub mod steps;

pub use config::{
    default_alpha, AdamConfig, ConfigError, GammaRule, OptimizerConfig, Precision,
};
pub use group::{
    classify_param, classify_param_with, AccelState, GradSlot, PackedBf16, ParamGroup,
    ParamKind, ParamState, DEFAULT_VECTOR_NAME_PATTERNS,
};
pub use steps::{
    adamw_acc_step, adamw_step, mona_lite_step, mona_step, muon_step, optimizer_step,
    OptimizerKind, StepError, StepTrace,
};
