//! MONA: a matrix-aware optimizer combining Muon-style Newton-Schulz
//! orthogonalization with a curvature-aware gradient-difference
//! acceleration term, together with its baselines (Muon, AdamW, AdamW-Acc),
//! the memory-reduced MONA-Lite variant, synthetic landscapes, a toy MLP,
//! and the analysis routines that verify the method's stated bounds.
//!
//! Everything numeric is generic over the scalar type through [`Scalar`]
//! (implemented for `f64` and `f32`); the [`Mat`] alias fixes `f64`, which
//! is what the experiment harness uses throughout.

pub mod analysis;
pub mod bf16;
pub mod checkpoint;
pub mod landscape;
pub mod matrix;
pub mod optim;
pub mod orthogonalize;
pub mod record;
pub mod rng;
pub mod scalar;
mod simd;
pub mod svd;
pub mod toynet;

pub use bf16::{bf16_round, Bf16Value};
pub use matrix::{Matrix, MatrixError};
pub use optim::{
    classify_param, default_alpha, optimizer_step, AdamConfig, GammaRule, OptimizerConfig,
    OptimizerKind, ParamGroup, ParamKind, Precision, StepError, StepTrace,
};
pub use orthogonalize::{newton_schulz, ns_diagnostics, NsConfig, NsReport};
pub use rng::stream_rng;
pub use scalar::{Dtype, Scalar};
pub use svd::{max_principal_angle, svd_oracle, SvdError, SvdResult};

/// The default matrix type used by the experiment harness.
pub type Mat = Matrix<f64>;
/// Single-precision matrix alias.
pub type Mat32 = Matrix<f32>;
