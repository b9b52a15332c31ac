//! bfloat16 storage codec.
//!
//! BF16 is not an arithmetic type here: the Lite optimizer stores two of its
//! state buffers as 16-bit patterns and decodes them back to full precision
//! on every read. Encoding is round-to-nearest-even truncation of the f32
//! significand from 23 to 7 bits; decoding is exact (append 16 zero bits).

use crate::scalar::Scalar;

/// A bfloat16 bit pattern (1 sign, 8 exponent, 7 significand bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Bf16Value(u16);

impl Bf16Value {
    pub fn from_bits(bits: u16) -> Self {
        Self(bits)
    }

    pub fn to_bits(self) -> u16 {
        self.0
    }

    /// Exact decode: every bf16 value is representable in f32.
    #[inline]
    pub fn to_f32(self) -> f32 {
        f32::from_bits((self.0 as u32) << 16)
    }
}

/// Round an f32 to the nearest bf16, ties to even.
///
/// Overflow saturates to the infinity pattern through the natural exponent
/// carry of the rounding increment; signed zeros keep their sign; NaN maps
/// to a quiet NaN with the sign preserved (the payload is not meaningful —
/// callers reject non-finite state upstream).
#[inline]
pub fn bf16_round(x: f32) -> Bf16Value {
    let bits = x.to_bits();
    if x.is_nan() {
        return Bf16Value(((bits >> 16) as u16) | 0x0040);
    }
    let lower = bits & 0xFFFF;
    let mut upper = (bits >> 16) as u16;
    if lower > 0x8000 || (lower == 0x8000 && (upper & 1) == 1) {
        upper = upper.wrapping_add(1);
    }
    Bf16Value(upper)
}

/// Round-trip a scalar through the bf16 codec (the value the Lite optimizer
/// actually works with after storing `x` in 16 bits).
#[inline]
pub fn bf16_round_scalar<T: Scalar>(x: T) -> T {
    T::from_f32_exact(bf16_round(x.to_f32_lossy()).to_f32())
}
