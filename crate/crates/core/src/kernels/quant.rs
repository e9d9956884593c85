//! Affine int8 helpers and the QUANTIZE / DEQUANTIZE kernels.

use super::{check_call, quant_of, KernelError};
use crate::model::{Activation, OpParams, QuantParams};
use crate::tensor::{TensorMut, TensorRef};

/// Round to nearest, ties away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

pub fn quantize_value(x: f32, q: QuantParams) -> i8 {
    let v = round_half_away(x as f64 / q.scale as f64) + q.zero_point as f64;
    v.clamp(-128.0, 127.0) as i8
}

pub fn dequantize_value(v: i8, q: QuantParams) -> f32 {
    q.scale * (v as i32 - q.zero_point) as f32
}

/// `s_in * s_w / s_out` in double precision.
pub fn effective_scale(input: QuantParams, weights: QuantParams, output: QuantParams) -> f64 {
    (input.scale as f64 * weights.scale as f64) / output.scale as f64
}

/// Lowest representable code after a fused activation.
#[inline]
pub fn activation_floor(activation: Activation, zero_point: i32) -> i32 {
    match activation {
        Activation::None => -128,
        Activation::Relu => zero_point.clamp(-128, 127),
    }
}

/// Scales an integer accumulator into the output encoding.
#[inline]
pub fn requantize(acc: i32, multiplier: f64, zero_point: i32, activation: Activation) -> i8 {
    let scaled = round_half_away(acc as f64 * multiplier) + zero_point as f64;
    scaled.clamp(activation_floor(activation, zero_point) as f64, 127.0) as i8
}

/// Encodes a real value into an output with a fused activation applied.
#[inline]
pub(crate) fn requantize_real(real: f64, q: QuantParams, activation: Activation) -> i8 {
    let scaled = round_half_away(real / q.scale as f64) + q.zero_point as f64;
    scaled.clamp(activation_floor(activation, q.zero_point) as f64, 127.0) as i8
}

#[inline]
pub(crate) fn apply_f32(activation: Activation, v: f32) -> f32 {
    match activation {
        Activation::None => v,
        Activation::Relu => v.max(0.0),
    }
}

pub fn quantize(input: &TensorRef<'_>, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::Quantize, &[input], output)?;
    let q = output.quant.ok_or(KernelError::MissingQuant)?;
    for i in 0..input.num_elements() {
        output.set_i8(i, quantize_value(input.f32_at(i), q));
    }
    Ok(())
}

pub fn dequantize(input: &TensorRef<'_>, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::Dequantize, &[input], output)?;
    let q = quant_of(input)?;
    for i in 0..input.num_elements() {
        output.set_f32(i, dequantize_value(input.i8_at(i), q));
    }
    Ok(())
}
