//! Parameter groups and their per-optimizer state buffers.

use serde::{Deserialize, Serialize};

use crate::bf16::{bf16_round, Bf16Value};
use crate::matrix::Matrix;
use crate::optim::config::Precision;
use crate::scalar::Scalar;

/// Routing class of a parameter: matrices take the orthogonalized update,
/// vectors fall back to AdamW inside the Muon family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Matrix,
    Vector,
}

/// Name substrings that force vector routing regardless of shape.
pub const DEFAULT_VECTOR_NAME_PATTERNS: [&str; 2] = ["embed", "head"];

/// Classify a parameter by shape and name with the default pattern list.
pub fn classify_param(name: &str, shape: (usize, usize)) -> ParamKind {
    classify_param_with(name, shape, &DEFAULT_VECTOR_NAME_PATTERNS)
}

/// Classify: 2-D with both dims > 1 → matrix; 1-D/degenerate → vector;
/// a name containing any pattern (case-insensitive) forces vector routing.
pub fn classify_param_with(
    name: &str,
    (rows, cols): (usize, usize),
    vector_patterns: &[&str],
) -> ParamKind {
    let lower = name.to_ascii_lowercase();
    if vector_patterns.iter().any(|p| lower.contains(&p.to_ascii_lowercase())) {
        return ParamKind::Vector;
    }
    if rows > 1 && cols > 1 {
        ParamKind::Matrix
    } else {
        ParamKind::Vector
    }
}

/// Matrix-shaped buffer stored as bfloat16 bit patterns. Element (i, j)
/// lives at `bits[i*cols + j]`, row-major like [`Matrix`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedBf16 {
    pub rows: usize,
    pub cols: usize,
    pub bits: Vec<u16>,
}

impl PackedBf16 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, bits: vec![0; rows * cols] }
    }

    #[inline]
    pub fn decode_at<T: Scalar>(&self, idx: usize) -> T {
        T::from_f32_exact(Bf16Value::from_bits(self.bits[idx]).to_f32())
    }

    #[inline]
    pub fn encode_at<T: Scalar>(&mut self, idx: usize, value: T) {
        self.bits[idx] = bf16_round(value.to_f32_lossy()).to_bits();
    }

    pub fn decode_matrix<T: Scalar>(&self) -> Matrix<T> {
        Matrix::from_fn(self.rows, self.cols, |i, j| self.decode_at(i * self.cols + j))
    }
}

/// Acceleration EMA storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AccelState<T: Scalar> {
    Full(Matrix<T>),
    Packed(PackedBf16),
}

impl<T: Scalar> AccelState<T> {
    /// Frobenius norm of the decoded contents (reporting only).
    pub fn frobenius_norm(&self) -> T {
        match self {
            AccelState::Full(m) => m.frobenius_norm(),
            AccelState::Packed(p) => p.decode_matrix::<T>().frobenius_norm(),
        }
    }
}

/// Previous-gradient storage. `Buffered` is a dedicated copy of G_{k−1};
/// the streaming variants are the read-then-overwrite slot of the Lite
/// optimizer (same bytes, different lifecycle).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GradSlot<T: Scalar> {
    Buffered(Matrix<T>),
    Streaming(Matrix<T>),
    PackedStreaming(PackedBf16),
}

/// All optimizer state for one parameter. Buffers are allocated lazily on
/// first use, which realizes the M₀ = A₀ = G₀ = 0 initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ParamState<T: Scalar> {
    pub step: u64,
    pub momentum: Option<Matrix<T>>,
    pub accel: Option<AccelState<T>>,
    pub prev_grad: Option<GradSlot<T>>,
    pub adam_m: Option<Matrix<T>>,
    pub adam_v: Option<Matrix<T>>,
}

/// A named parameter with weights and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub weights: Matrix<T>,
    pub state: ParamState<T>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(name: impl Into<String>, kind: ParamKind, weights: Matrix<T>) -> Self {
        Self { name: name.into(), kind, weights, state: ParamState::default() }
    }

    pub fn numel(&self) -> usize {
        self.weights.numel()
    }

    /// Nominal auxiliary-state bytes of the MONA family per precision mode,
    /// following the paper's accounting: the extra state beyond Muon's is
    /// the acceleration EMA plus the previous-gradient storage. Buffered
    /// fp32 dedicates both (2 × 4 bytes/element). Streaming modes count only
    /// the acceleration EMA — the gradient slot overwrites storage the
    /// training pipeline already owns — so fp32 streaming is 4·numel and
    /// bf16 streaming is 2·numel: exactly a 75% reduction vs buffered.
    pub fn aux_state_bytes(&self, precision: Precision) -> usize {
        let n = self.numel();
        match precision {
            Precision::Fp32Buffered => 2 * 4 * n,
            Precision::Fp32Streaming => 4 * n,
            Precision::Bf16Streaming => 2 * n,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_rules() {
        assert_eq!(classify_param("ffn.w1", (1024, 256)), ParamKind::Matrix);
        assert_eq!(classify_param("bias", (256, 1)), ParamKind::Vector);
        assert_eq!(classify_param("x", (1, 256)), ParamKind::Vector);
        assert_eq!(classify_param("embedding", (50000, 512)), ParamKind::Vector);
        assert_eq!(classify_param("lm_head", (512, 50000)), ParamKind::Vector);
        assert_eq!(classify_param("Embedding.table", (8, 8)), ParamKind::Vector);
        assert_eq!(classify_param_with("embedding", (8, 8), &[]), ParamKind::Matrix);
    }

    #[test]
    fn aux_byte_accounting_is_exactly_75_percent_reduction() {
        let g = ParamGroup::new("w", ParamKind::Matrix, Matrix::<f64>::zeros(100, 20));
        let buffered = g.aux_state_bytes(Precision::Fp32Buffered);
        let bf16 = g.aux_state_bytes(Precision::Bf16Streaming);
        assert_eq!(buffered, 2 * 4 * 2000);
        assert_eq!(bf16, 2 * 2000);
        assert_eq!(bf16 * 4, buffered, "exactly 75% reduction");
        assert_eq!(g.aux_state_bytes(Precision::Fp32Streaming), 4 * 2000);
    }

    #[test]
    fn packed_bf16_round_trips_at_16_bits() {
        let mut p = PackedBf16::zeros(2, 3);
        p.encode_at(4, 1.2345678f64);
        let back: f64 = p.decode_at(4);
        let twice = {
            let mut q = p.clone();
            q.encode_at(4, back);
            q.decode_at::<f64>(4)
        };
        assert_eq!(back.to_bits(), twice.to_bits(), "idempotent storage");
        assert!((back - 1.2345678).abs() < 0.005);
    }
}
