//! Scalar abstraction for the numeric core.
//!
//! All matrix and optimizer arithmetic is generic over [`Scalar`], a thin
//! extension of `num_traits::Float`. The harness instantiates `f64`
//! throughout (64-bit working precision gives the headroom the bound checks
//! need); `f32` exists for cheap smoke coverage of the generic code paths.
//! BF16 is deliberately *not* a `Scalar` — it is a storage codec only (see
//! [`crate::bf16`]).

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element dtype tag used by the checkpoint format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
    Bf16,
}

impl Dtype {
    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
            Dtype::Bf16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F64 => "f64",
            Dtype::F32 => "f32",
            Dtype::Bf16 => "bf16",
        }
    }
}

/// Floating-point element type of the numeric core.
///
/// Everything the optimizers need beyond `num_traits::Float`: exact
/// byte-level serialization (checkpoints must round-trip bit-exact),
/// seeded Gaussian draws, and lossless-enough conversion from the `f64`
/// constants that configs carry.
pub trait Scalar:
    Float
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    /// Convert a config-level `f64` constant into this scalar type.
    fn from_f64(x: f64) -> Self;

    /// Widen to `f64` for metrics and reporting.
    fn to_f64(self) -> f64;

    /// Draw one standard normal deviate from the given generator.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Append the exact little-endian byte pattern of this value.
    fn write_le(self, out: &mut Vec<u8>);

    /// Reconstruct the exact value from little-endian bytes.
    ///
    /// `bytes` must hold at least `DTYPE.size_bytes()` bytes.
    fn read_le(bytes: &[u8]) -> Self;

    /// Nearest `f32`, the input format of the bf16 codec.
    fn to_f32_lossy(self) -> f32;

    /// Widen back from the bf16 codec's `f32` output.
    fn from_f32_exact(x: f32) -> Self;

    /// Low-level GEMM hook: C (m×n) = A (m×kdim) · B, row-major, C
    /// overwritten. See [`crate::matrix::portable_gemm`] for the meaning of
    /// `b_transposed` and `symmetric_out`. Implementations must accumulate
    /// each output element in ascending-k order so results are
    /// bit-reproducible per build per machine; `f64` overrides this with a
    /// runtime-detected AVX-512 kernel for large problems.
    #[doc(hidden)]
    fn gemm(
        m: usize,
        kdim: usize,
        n: usize,
        a: &[Self],
        b: &[Self],
        b_transposed: bool,
        symmetric_out: bool,
        c: &mut [Self],
    ) {
        crate::matrix::portable_gemm(m, kdim, n, a, b, b_transposed, symmetric_out, c);
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("f64 needs 8 bytes"))
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }

    #[inline]
    fn from_f32_exact(x: f32) -> Self {
        x as f64
    }

    fn gemm(
        m: usize,
        kdim: usize,
        n: usize,
        a: &[Self],
        b: &[Self],
        b_transposed: bool,
        symmetric_out: bool,
        c: &mut [Self],
    ) {
        #[cfg(target_arch = "x86_64")]
        {
            // Packing and padding overhead only pays off once the problem is
            // roughly 64³ flops; the cutoff depends only on the shape, so the
            // chosen path is stable for any given problem size.
            if m * kdim * n >= 262_144 && crate::simd::avx512_available() {
                unsafe {
                    crate::simd::gemm_f64(m, kdim, n, a, b, b_transposed, symmetric_out, c);
                }
                return;
            }
        }
        crate::matrix::portable_gemm(m, kdim, n, a, b, b_transposed, symmetric_out, c);
    }
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    #[inline]
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("f32 needs 4 bytes"))
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self
    }

    #[inline]
    fn from_f32_exact(x: f32) -> Self {
        x
    }
}
