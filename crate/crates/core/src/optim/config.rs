//! Optimizer hyperparameter containers and validation.

use serde::{Deserialize, Serialize};

use crate::orthogonalize::NsConfig;

/// How the orthogonalized update is scaled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaRule {
    /// γ(m, n) = 0.2·√max(m, n): matches the update RMS Muon would produce
    /// to AdamW's typical per-coordinate scale.
    MuonRmsMatch,
    Explicit { value: f64 },
}

impl GammaRule {
    pub fn gamma(&self, rows: usize, cols: usize) -> f64 {
        match self {
            GammaRule::MuonRmsMatch => 0.2 * (rows.max(cols) as f64).sqrt(),
            GammaRule::Explicit { value } => *value,
        }
    }
}

/// Storage strategy for the acceleration state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// Dedicated previous-gradient buffer, full-precision acceleration EMA.
    Fp32Buffered,
    /// Gradient slot read-then-overwritten in one fused pass; arithmetic
    /// identical to buffered.
    Fp32Streaming,
    /// Streaming with the acceleration EMA and gradient slot stored as
    /// bfloat16 bit patterns, decoded on read.
    Bf16Streaming,
}

impl Precision {
    /// Nominal auxiliary state bytes per parameter element, beyond what
    /// Muon already keeps (weights and momentum are common to every mode).
    ///
    /// Buffered mode owns a full-precision acceleration EMA plus a
    /// dedicated previous-gradient buffer (4 + 4 bytes). The streaming
    /// modes fuse the difference computation into the slot that receives
    /// each incoming gradient, so the accounting attributes that slot to
    /// the gradient storage a training system provides anyway; the modes'
    /// own cost is the acceleration EMA alone — 4 bytes in fp32, 2 in
    /// bf16, a 75% reduction from buffered.
    pub fn aux_state_bytes_per_element(self) -> usize {
        match self {
            Precision::Fp32Buffered => 8,
            Precision::Fp32Streaming => 4,
            Precision::Bf16Streaming => 2,
        }
    }
}

/// AdamW hyperparameters (used standalone and as the vector-parameter
/// fallback inside the Muon family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.95, eps: 1e-8, weight_decay: 0.0 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(ConfigError::field("adam.beta1", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(ConfigError::field("adam.beta2", "must be in [0, 1)"));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(ConfigError::field("adam.eps", "must be finite and > 0"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(ConfigError::field("adam.weight_decay", "must be finite and ≥ 0"));
        }
        Ok(())
    }
}

/// Full optimizer configuration. Constants are carried as `f64` and
/// converted to the working scalar type inside the step functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    /// Momentum μ; the momentum update is M ← μM + G̃ with no (1−μ) factor.
    pub momentum: f64,
    /// Acceleration EMA decay β_a.
    pub accel_beta: f64,
    /// Acceleration mixing weight α (negative in the analyzed regime).
    pub accel_alpha: f64,
    /// Decoupled weight decay λ, applied inside W ← W − η(γO + λW).
    pub weight_decay: f64,
    pub ns: NsConfig,
    pub gamma_rule: GammaRule,
    pub precision: Precision,
    pub adam: AdamConfig,
    /// Capture the orthogonalized direction matrix in each StepTrace
    /// (diagnostics only; costs one matrix copy per step).
    pub capture_directions: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let accel_beta = 0.99;
        Self {
            learning_rate: 0.02,
            momentum: 0.95,
            accel_beta,
            accel_alpha: default_alpha(accel_beta).expect("0.99 < 1"),
            weight_decay: 0.1,
            ns: NsConfig::default(),
            gamma_rule: GammaRule::MuonRmsMatch,
            precision: Precision::Fp32Buffered,
            adam: AdamConfig::default(),
            capture_directions: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(ConfigError::field("learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ConfigError::field("momentum", "must be in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.accel_beta) {
            return Err(ConfigError::field("accel_beta", "must be in [0, 1)"));
        }
        if !self.accel_alpha.is_finite() {
            return Err(ConfigError::field("accel_alpha", "must be finite"));
        }
        // Stability condition |α| < 1/(1−β_a).
        if self.accel_alpha.abs() >= 1.0 / (1.0 - self.accel_beta) {
            return Err(ConfigError::field(
                "accel_alpha",
                "stability requires |alpha| < 1/(1 - accel_beta)",
            ));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(ConfigError::field("weight_decay", "must be finite and ≥ 0"));
        }
        self.ns.validate().map_err(|msg| ConfigError::field("ns", msg))?;
        if let GammaRule::Explicit { value } = self.gamma_rule {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ConfigError::field("gamma_rule.value", "must be finite and > 0"));
            }
        }
        self.adam.validate()
    }

    /// γ for a parameter of the given shape.
    pub fn gamma(&self, rows: usize, cols: usize) -> f64 {
        self.gamma_rule.gamma(rows, cols)
    }
}

/// The default coupling α = −1/(2(1−β_a)); always inside the stability
/// region |α| < 1/(1−β_a).
pub fn default_alpha(beta_a: f64) -> Result<f64, ConfigError> {
    if !(0.0..1.0).contains(&beta_a) {
        return Err(ConfigError::field("accel_beta", "must be in [0, 1)"));
    }
    Ok(-1.0 / (2.0 * (1.0 - beta_a)))
}

/// A named-field validation failure.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: field.into(), message: message.into() }
    }
}
