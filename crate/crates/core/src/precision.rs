//! Emulated 16-bit float arithmetic.
//!
//! The epipolar residual `p_v^T F p_u` is the one place where inference-time
//! half precision matters: unnormalized fundamental matrices carry entries up
//! to ~1e6, far beyond the binary16 maximum of 65504, and the residual chain
//! then collapses to infinities. [`round_f16`] pushes a value through
//! binary16 (round to nearest even, overflow clamps to infinity) so that the
//! failure mechanism is reproducible on any hardware.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionMode {
    /// Native f64 arithmetic.
    Full,
    /// Every intermediate of the residual is rounded through binary16.
    Reduced,
}

/// Convert f32 to binary16 bits, round to nearest even.
pub fn f32_to_f16_bits(value: f32) -> u16 {
    let bits = value.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xff) as i32;
    let man = bits & 0x007f_ffff;

    if exp == 0xff {
        // Inf / NaN propagate.
        return sign | 0x7c00 | if man != 0 { 0x0200 } else { 0 };
    }

    let e = exp - 127;
    if e >= 16 {
        return sign | 0x7c00; // overflow to infinity
    }
    if e >= -14 {
        let half_exp = (e + 15) as u32;
        let mut out = (half_exp << 10) | (man >> 13);
        let rem = man & 0x1fff;
        if rem > 0x1000 || (rem == 0x1000 && (out & 1) != 0) {
            out += 1; // carry may roll into the exponent, up to infinity
        }
        return sign | out as u16;
    }
    if e >= -25 {
        // Subnormal half.
        let full_man = man | 0x0080_0000;
        let shift = ((-14 - e) + 13) as u32;
        let mut out = full_man >> shift;
        let rem = full_man & ((1u32 << shift) - 1);
        let halfway = 1u32 << (shift - 1);
        if rem > halfway || (rem == halfway && (out & 1) != 0) {
            out += 1;
        }
        return sign | out as u16;
    }
    sign // underflow to signed zero
}

/// Expand binary16 bits to f32 exactly.
pub fn f16_bits_to_f32(h: u16) -> f32 {
    let sign = ((h & 0x8000) as u32) << 16;
    let exp = ((h >> 10) & 0x1f) as u32;
    let man = (h & 0x03ff) as u32;
    if exp == 0 {
        if man == 0 {
            return f32::from_bits(sign);
        }
        // Subnormal: renormalize.
        let mut e = 127 - 15 + 1;
        let mut m = man;
        while m & 0x0400 == 0 {
            m <<= 1;
            e -= 1;
        }
        m &= 0x03ff;
        return f32::from_bits(sign | ((e as u32) << 23) | (m << 13));
    }
    if exp == 0x1f {
        return f32::from_bits(sign | 0x7f80_0000 | (man << 13));
    }
    f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13))
}

/// Round a value through binary16. Overflow becomes a signed infinity.
#[inline]
pub fn round_f16(x: f64) -> f64 {
    f16_bits_to_f32(f32_to_f16_bits(x as f32)) as f64
}

/// Binary16 maximum finite value.
pub const F16_MAX: f64 = 65504.0;
