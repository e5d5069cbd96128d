//! 19-bit storage format for means and weights: 1 sign bit, 8 exponent bits
//! with the binary32 bias, 10 mantissa bits, round-to-nearest-even.
//! Covariances are never quantized.

use crate::types::Gaussian3;

pub const SIGN_BITS: u32 = 1;
pub const EXPONENT_BITS: u32 = 8;
pub const MANTISSA_BITS: u32 = 10;
pub const TOTAL_BITS: u32 = SIGN_BITS + EXPONENT_BITS + MANTISSA_BITS;
const BIAS: i32 = 127;
const MIN_NORMAL_EXP: i32 = 1 - BIAS;
const MAX_EXP: i32 = BIAS;

/// Largest finite magnitude: (2 - 2^-10) * 2^127.
pub const MAX_FINITE: f64 = 2047.0 * f64::from_bits((117 + 1023) << 52);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QuantConfig {
    pub enabled: bool,
}

impl QuantConfig {
    pub const OFF: QuantConfig = QuantConfig { enabled: false };
    pub const ON: QuantConfig = QuantConfig { enabled: true };
}

/// Result of rounding one value into the 19-bit format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    pub saturated: bool,
}

fn floor_log2(a: f64) -> i32 {
    let biased = ((a.to_bits() >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // f64 subnormal: far below the format's subnormal range anyway.
        -1023
    } else {
        biased - 1023
    }
}

/// Rounds `v` to the nearest representable 19-bit value (ties to even),
/// saturating at `±MAX_FINITE`.
pub fn quantize_value(v: f64) -> Quantized {
    if v.is_nan() {
        return Quantized { value: v, saturated: false };
    }
    let a = v.abs();
    if a == 0.0 {
        return Quantized { value: v, saturated: false };
    }
    if a.is_infinite() {
        return Quantized { value: MAX_FINITE.copysign(v), saturated: true };
    }
    let exp = floor_log2(a).max(MIN_NORMAL_EXP);
    let ulp = 2f64.powi(exp - MANTISSA_BITS as i32);
    let q = (a / ulp).round_ties_even() * ulp;
    if q > MAX_FINITE {
        Quantized { value: MAX_FINITE.copysign(v), saturated: true }
    } else {
        Quantized { value: q.copysign(v), saturated: false }
    }
}

/// Packs an already-quantized value into its 19-bit pattern (low bits of the result).
pub fn encode_bits(v: f64) -> u32 {
    let q = quantize_value(v).value;
    let sign = u32::from(q.is_sign_negative());
    let a = q.abs();
    let (exp_field, mant) = if a == 0.0 {
        (0u32, 0u32)
    } else {
        let e = floor_log2(a);
        if e < MIN_NORMAL_EXP {
            let m = a / 2f64.powi(MIN_NORMAL_EXP - MANTISSA_BITS as i32);
            (0, m as u32)
        } else {
            let m = a / 2f64.powi(e - MANTISSA_BITS as i32) - (1u32 << MANTISSA_BITS) as f64;
            ((e + BIAS) as u32, m as u32)
        }
    };
    (sign << (EXPONENT_BITS + MANTISSA_BITS)) | (exp_field << MANTISSA_BITS) | mant
}

pub fn decode_bits(bits: u32) -> f64 {
    let mant_mask = (1u32 << MANTISSA_BITS) - 1;
    let exp_mask = (1u32 << EXPONENT_BITS) - 1;
    let mant = bits & mant_mask;
    let exp_field = (bits >> MANTISSA_BITS) & exp_mask;
    let negative = (bits >> (EXPONENT_BITS + MANTISSA_BITS)) & 1 == 1;
    let mag = if exp_field == 0 {
        mant as f64 * 2f64.powi(MIN_NORMAL_EXP - MANTISSA_BITS as i32)
    } else {
        let e = exp_field as i32 - BIAS;
        debug_assert!(e <= MAX_EXP);
        (mant + (1 << MANTISSA_BITS)) as f64 * 2f64.powi(e - MANTISSA_BITS as i32)
    };
    if negative {
        -mag
    } else {
        mag
    }
}

/// Rounds mean components and weight; covariance, kind and id pass through.
/// Returns the quantized Gaussian and the number of saturated fields.
pub fn quantize_gaussian(g: &Gaussian3, q: QuantConfig) -> (Gaussian3, u32) {
    if !q.enabled {
        return (*g, 0);
    }
    let mut out = *g;
    let mut saturations = 0;
    let mut round = |v: f64| {
        let r = quantize_value(v);
        saturations += u32::from(r.saturated);
        r.value
    };
    out.weight = round(g.weight);
    out.mean = g.mean.map(&mut round);
    (out, saturations)
}

pub fn is_quantized(g: &Gaussian3) -> bool {
    quantize_value(g.weight).value == g.weight && g.mean.iter().all(|&v| quantize_value(v).value == v)
}
