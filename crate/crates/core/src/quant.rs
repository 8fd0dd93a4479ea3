//! Power-of-two weight quantization and shift arithmetic.
//!
//! Every weight becomes `sign · 2^exponent`, so a product with an activation
//! is either an exponent adjustment (floats) or a bit shift (integers).

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Smallest representable exponent.
pub const EXP_MIN: i8 = -16;
/// Largest representable exponent.
pub const EXP_MAX: i8 = 15;

/// Gradient rule used when backpropagating through the quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuantGradMode {
    /// The whole quantizer is treated as identity: `∂W_q/∂W = 1`.
    #[default]
    WholeSte,
    /// Only `round` is passed through, leaving `2^round(log2|w|) / |w|`.
    /// Discontinuous; kept to reproduce the collapse it causes.
    RoundSte,
}

impl QuantGradMode {
    pub fn name(self) -> &'static str {
        match self {
            QuantGradMode::WholeSte => "whole-ste",
            QuantGradMode::RoundSte => "round-ste",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "whole-ste" | "whole" => Some(QuantGradMode::WholeSte),
            "round-ste" | "round" => Some(QuantGradMode::RoundSte),
            _ => None,
        }
    }
}

/// Quantized `C × k` weights stored as sign and exponent planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShiftWeights {
    rows: usize,
    cols: usize,
    sign: Vec<i8>,
    exponent: Vec<i8>,
}

impl ShiftWeights {
    pub fn from_parts(rows: usize, cols: usize, sign: Vec<i8>, exponent: Vec<i8>) -> Result<Self> {
        if sign.len() != rows * cols || exponent.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{rows}x{cols} shift weights need {} signs and exponents, got {} and {}",
                rows * cols,
                sign.len(),
                exponent.len()
            )));
        }
        if let Some(s) = sign.iter().find(|s| !(-1..=1).contains(*s)) {
            return Err(Error::Format(format!("sign {s} outside {{-1, 0, 1}}")));
        }
        if let Some(e) = exponent.iter().find(|e| !(EXP_MIN..=EXP_MAX).contains(*e)) {
            return Err(Error::Format(format!("exponent {e} outside [{EXP_MIN}, {EXP_MAX}]")));
        }
        Ok(ShiftWeights { rows, cols, sign, exponent })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn signs(&self) -> &[i8] {
        &self.sign
    }

    pub fn exponents(&self) -> &[i8] {
        &self.exponent
    }

    #[inline]
    pub fn sign(&self, r: usize, c: usize) -> i8 {
        self.sign[r * self.cols + c]
    }

    #[inline]
    pub fn exponent(&self, r: usize, c: usize) -> i8 {
        self.exponent[r * self.cols + c]
    }

    pub fn value(&self, r: usize, c: usize) -> f64 {
        let s = self.sign(r, c);
        if s == 0 {
            0.0
        } else {
            f64::from(s) * pow2_f64(self.exponent(r, c))
        }
    }
}

#[inline]
fn pow2_f64(e: i8) -> f64 {
    f64::from_bits(((i64::from(e) + 1023) as u64) << 52)
}

#[inline]
fn pow2_f32(e: i8) -> f32 {
    f32::from_bits(((i32::from(e) + 127) as u32) << 23)
}

/// `round(log2 a)` for a positive finite `a`, computed from the bit pattern.
///
/// With `a = m · 2^p`, `m ∈ [1, 2)`, the result is `p + 1` iff `m > √2`. The
/// f64 constant `SQRT_2` lies above the true root, so `m >= SQRT_2` is exactly
/// that test and no value sits on a rounding tie.
fn round_log2(a: f64) -> i32 {
    let bits = a.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        // subnormal, far below EXP_MIN
        return i32::from(EXP_MIN) - 64;
    }
    let p = biased - 1023;
    let mantissa = f64::from_bits((bits & ((1u64 << 52) - 1)) | (1023u64 << 52));
    if mantissa >= SQRT_2 {
        p + 1
    } else {
        p
    }
}

/// Quantizes one weight to `(sign, exponent)`. Zero (and NaN) map to sign 0.
pub fn quantize_scalar(w: f64) -> (i8, i8) {
    if w == 0.0 || w.is_nan() {
        return (0, 0);
    }
    let sign = if w > 0.0 { 1 } else { -1 };
    let e = if w.is_infinite() { i32::from(EXP_MAX) } else { round_log2(w.abs()) };
    (sign, e.clamp(i32::from(EXP_MIN), i32::from(EXP_MAX)) as i8)
}

/// `sign(w) · 2^round(log2|w|)` elementwise, exponents clamped to `[EXP_MIN, EXP_MAX]`.
pub fn quantize_pow2(w: &Matrix) -> ShiftWeights {
    let (sign, exponent) = w.data().iter().map(|&v| quantize_scalar(v)).unzip();
    ShiftWeights { rows: w.rows(), cols: w.cols(), sign, exponent }
}

pub fn dequantize(q: &ShiftWeights) -> Matrix {
    Matrix::from_fn(q.rows, q.cols, |r, c| q.value(r, c))
}

/// Float types whose product with a power of two can be formed by editing
/// the exponent field.
pub trait ShiftFloat: Copy + PartialEq + std::fmt::Debug {
    /// `sign · self · 2^e`.
    fn shift_mul(self, sign: i8, e: i8) -> Self;
}

macro_rules! impl_shift_float {
    ($t:ty, $bits:ty, $mant:expr, $expmask:expr, $pow2:ident) => {
        impl ShiftFloat for $t {
            #[inline]
            fn shift_mul(self, sign: i8, e: i8) -> Self {
                if self.is_nan() {
                    return self;
                }
                if sign == 0 {
                    // same signed zero as 0.0 * self
                    return (0.0 as $t).copysign(self);
                }
                let y = if sign < 0 { -self } else { self };
                let bits = y.to_bits();
                let biased = ((bits >> $mant) & $expmask) as i32;
                let shifted = biased + i32::from(e);
                if biased == 0 || biased == $expmask as i32 || shifted <= 0 || shifted >= $expmask as i32 {
                    // zero, subnormal, infinite or out-of-range results keep IEEE product semantics
                    return y * $pow2(e);
                }
                let cleared = bits & !(($expmask as $bits) << $mant);
                <$t>::from_bits(cleared | ((shifted as $bits) << $mant))
            }
        }
    };
}

impl_shift_float!(f64, u64, 52, 0x7ff, pow2_f64);
impl_shift_float!(f32, u32, 23, 0xff, pow2_f32);

/// `sign · x · 2^e` by adding `e` to the exponent bits of `x`.
pub fn shift_mul_float<F: ShiftFloat>(x: F, sign: i8, e: i8) -> F {
    x.shift_mul(sign, e)
}

/// `sign · (x << e)` for `e ≥ 0`, `sign · (x >> |e|)` (arithmetic) for `e < 0`.
///
/// Returns the value saturated to the `i32` range and whether saturation
/// happened.
pub fn shift_mul_int(x: i32, sign: i8, e: i8) -> (i32, bool) {
    if sign == 0 {
        return (0, false);
    }
    let wide = i64::from(x);
    let shifted = if e >= 0 { wide << e } else { wide >> (-i32::from(e)) };
    let signed = if sign < 0 { -shifted } else { shifted };
    saturate_i32(signed)
}

pub(crate) fn saturate_i32(v: i64) -> (i32, bool) {
    if v > i64::from(i32::MAX) {
        (i32::MAX, true)
    } else if v < i64::from(i32::MIN) {
        (i32::MIN, true)
    } else {
        (v as i32, false)
    }
}

/// Gradient of the loss with respect to the float shadow weights, given the
/// gradient with respect to the quantized weights.
///
/// In `RoundSte` mode a zero weight gets gradient 0 and bumps `instability`.
pub fn quantize_backward(
    upstream: &Matrix,
    w: &Matrix,
    mode: QuantGradMode,
    instability: &mut u64,
) -> Result<Matrix> {
    if upstream.rows() != w.rows() || upstream.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "gradient is {}x{}, weights are {}x{}",
            upstream.rows(),
            upstream.cols(),
            w.rows(),
            w.cols()
        )));
    }
    match mode {
        QuantGradMode::WholeSte => Ok(upstream.clone()),
        QuantGradMode::RoundSte => {
            let data = upstream
                .data()
                .iter()
                .zip(w.data())
                .map(|(&g, &v)| {
                    if v == 0.0 {
                        *instability += 1;
                        0.0
                    } else {
                        g * round_ste_factor(v)
                    }
                })
                .collect();
            Matrix::from_vec(w.rows(), w.cols(), data)
        }
    }
}

/// `2^round(log2|w|) / |w|` for nonzero `w`.
pub fn round_ste_factor(w: f64) -> f64 {
    let (_, e) = quantize_scalar(w);
    pow2_f64(e) / w.abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(w: f64) -> f64 {
        let (s, e) = quantize_scalar(w);
        if s == 0 {
            0.0
        } else {
            f64::from(s) * pow2_f64(e)
        }
    }

    #[test]
    fn quantizes_reference_values() {
        assert_eq!(quantize_scalar(0.5), (1, -1));
        assert_eq!(quantize_scalar(-0.3), (-1, -2));
        assert_eq!(q(-0.3), -0.25);
        assert_eq!(quantize_scalar(0.75), (1, 0));
        assert_eq!(q(0.75), 1.0);
        assert_eq!(quantize_scalar(0.0), (0, 0));
        assert_eq!(quantize_scalar(-0.0), (0, 0));
    }

    #[test]
    fn clamps_exponent_range() {
        assert_eq!(quantize_scalar(1e-30), (1, EXP_MIN));
        assert_eq!(quantize_scalar(-1e30), (-1, EXP_MAX));
        assert_eq!(quantize_scalar(f64::MIN_POSITIVE / 4.0), (1, EXP_MIN));
        assert_eq!(quantize_scalar(f64::INFINITY), (1, EXP_MAX));
    }

    #[test]
    fn matches_log2_rounding_away_from_midpoints() {
        for i in 1..2000 {
            let w = i as f64 * 0.00731;
            let l = w.log2();
            if (l - l.floor() - 0.5).abs() < 1e-9 {
                continue;
            }
            assert_eq!(i32::from(quantize_scalar(w).1), l.round().clamp(-16.0, 15.0) as i32, "w={w}");
        }
    }

    #[test]
    fn dequantize_values() {
        let qw = ShiftWeights::from_parts(1, 3, vec![1, 0, -1], vec![-1, 7, 2]).unwrap();
        assert_eq!(dequantize(&qw).data(), &[0.5, 0.0, -4.0]);
    }

    #[test]
    fn from_parts_validates() {
        assert!(ShiftWeights::from_parts(1, 1, vec![2], vec![0]).is_err());
        assert!(ShiftWeights::from_parts(1, 1, vec![1], vec![16]).is_err());
        assert!(ShiftWeights::from_parts(1, 2, vec![1], vec![0]).is_err());
    }

    #[test]
    fn float_shift_examples() {
        assert_eq!(shift_mul_float(3.5f64, 1, 1), 7.0);
        assert_eq!(shift_mul_float(3.5f64, -1, -1), -1.75);
        assert_eq!(shift_mul_float(0.0f64, 1, 5), 0.0);
        assert_eq!(shift_mul_float(3.5f32, 1, 1), 7.0);
        assert_eq!(shift_mul_float(-3.0f32, 0, 3).to_bits(), (0.0f32 * -3.0).to_bits());
        assert_eq!(shift_mul_float(f64::MIN_POSITIVE, 1, -3), f64::MIN_POSITIVE / 8.0);
        assert_eq!(shift_mul_float(f32::MAX, 1, 1), f32::INFINITY);
    }

    #[test]
    fn int_shift_examples() {
        assert_eq!(shift_mul_int(8, 1, -2), (2, false));
        assert_eq!(shift_mul_int(-8, 1, -2), (-2, false));
        assert_eq!(shift_mul_int(3, -1, 2), (-12, false));
        assert_eq!(shift_mul_int(-7, 1, -1), (-4, false));
        assert_eq!(shift_mul_int(i32::MAX, 1, 1), (i32::MAX, true));
        assert_eq!(shift_mul_int(i32::MIN, -1, 0), (i32::MAX, true));
        assert_eq!(shift_mul_int(5, 0, 3), (0, false));
    }

    #[test]
    fn backward_modes() {
        let g = Matrix::from_vec(1, 3, vec![1.0, 2.0, -3.0]).unwrap();
        let w = Matrix::from_vec(1, 3, vec![0.75, 0.5, 0.0]).unwrap();
        let mut unstable = 0;
        let whole = quantize_backward(&g, &w, QuantGradMode::WholeSte, &mut unstable).unwrap();
        assert_eq!(whole, g);
        assert_eq!(unstable, 0);
        let round = quantize_backward(&g, &w, QuantGradMode::RoundSte, &mut unstable).unwrap();
        assert!((round.get(0, 0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(round.get(0, 1), 2.0);
        assert_eq!(round.get(0, 2), 0.0);
        assert_eq!(unstable, 1);
    }
}
