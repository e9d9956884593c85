//! Reference operator implementations for F32 and per-tensor quantized I8.
//!
//! Kernels are written for clarity: plain nested loops over NHWC data, no
//! blocking or SIMD. I8 kernels accumulate in `i32` and requantize with a
//! double-precision effective scale, rounding half away from zero:
//!
//! ```text
//! q_out = clamp(round(acc * (s_in * s_w / s_out)) + zp_out, lo, 127)
//! ```
//!
//! where `lo` is `-128`, or `zp_out` under a fused RELU.

use arrayvec::ArrayVec;
use thiserror::Error;

use crate::model::{DType, OpParams, QuantParams, TensorSpec, MAX_RANK};
use crate::tensor::{TensorMut, TensorRef};

mod conv;
mod elementwise;
mod fully_connected;
mod pool;
pub mod quant;
mod softmax;

pub use crate::model::{Activation, ConvParams, Opcode, Padding, PoolParams};
pub use conv::{conv_2d, depthwise_conv_2d};
pub use elementwise::{add, relu, reshape};
pub use fully_connected::fully_connected;
pub use pool::{avg_pool_2d, max_pool_2d};
pub use quant::{dequantize, quantize};
pub use softmax::{softmax, softmax_scratch_bytes};

/// An inline tensor shape of rank at most four.
pub type Shape = ArrayVec<usize, MAX_RANK>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dtype mismatch: {0}")]
    DTypeMismatch(String),
    #[error("quantization mismatch: {0}")]
    QuantMismatch(String),
    #[error("tensor is missing quantization parameters")]
    MissingQuant,
    #[error("expected {expected} {what}, got {got}")]
    Arity { what: &'static str, expected: &'static str, got: usize },
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("scratch buffer too small: need {needed} bytes, have {have}")]
    ScratchTooSmall { needed: usize, have: usize },
}

pub(crate) fn shape_err(msg: impl Into<String>) -> KernelError {
    KernelError::ShapeMismatch(msg.into())
}

fn shape_of(dims: &[usize]) -> Result<Shape, KernelError> {
    Shape::try_from(dims).map_err(|_| shape_err(format!("{dims:?} exceeds rank {MAX_RANK}")))
}

fn dtype_err(msg: impl Into<String>) -> KernelError {
    KernelError::DTypeMismatch(msg.into())
}

pub(crate) fn quant_of(t: &TensorRef<'_>) -> Result<QuantParams, KernelError> {
    t.quant.ok_or(KernelError::MissingQuant)
}

/// Infers the output dtype and shape of an op from its inputs.
///
/// Also checks operand counts, input dtypes and parameter values; this is the
/// single source of shape rules shared by validation, prepare and the
/// converter.
pub fn infer_output(params: &OpParams, inputs: &[(DType, &[usize])]) -> Result<(DType, Shape), KernelError> {
    let arity = |lo: usize, hi: usize, expected: &'static str| {
        if inputs.len() < lo || inputs.len() > hi {
            Err(KernelError::Arity { what: "inputs", expected, got: inputs.len() })
        } else {
            Ok(())
        }
    };
    let float_or_int8 = |dt: DType| {
        if matches!(dt, DType::F32 | DType::I8) {
            Ok(dt)
        } else {
            Err(dtype_err(format!("{dt:?} is not a valid activation type")))
        }
    };
    match params {
        OpParams::Conv2d(p) | OpParams::DepthwiseConv2d(p) => {
            arity(2, 3, "2 or 3")?;
            let depthwise = matches!(params, OpParams::DepthwiseConv2d(_));
            let (in_dt, in_shape) = inputs[0];
            let (w_dt, w_shape) = inputs[1];
            let dt = float_or_int8(in_dt)?;
            check_weight_dtypes(dt, w_dt, inputs.get(2).map(|b| b.0))?;
            if p.stride_h == 0 || p.stride_w == 0 {
                return Err(KernelError::BadParams("stride must be positive".into()));
            }
            let [n, h, w, c] = rank4(in_shape, "input")?;
            let [wo, kh, kw, wi] = rank4(w_shape, "weights")?;
            let out_c = if depthwise {
                if p.depth_multiplier == 0 {
                    return Err(KernelError::BadParams("depth multiplier must be positive".into()));
                }
                if wo != 1 || wi != c * p.depth_multiplier {
                    return Err(shape_err(format!(
                        "depthwise weights {w_shape:?} do not match {c} channels x multiplier {}",
                        p.depth_multiplier
                    )));
                }
                wi
            } else {
                if p.depth_multiplier != 1 {
                    return Err(KernelError::BadParams("CONV_2D requires depth_multiplier 1".into()));
                }
                if wi != c {
                    return Err(shape_err(format!("weights {w_shape:?} expect {wi} input channels, input has {c}")));
                }
                wo
            };
            if let Some((_, b_shape)) = inputs.get(2) {
                if *b_shape != [out_c] {
                    return Err(shape_err(format!("bias {b_shape:?} should be [{out_c}]")));
                }
            }
            let (oh, _) = p.padding.output_extent(h, kh, p.stride_h).ok_or_else(|| shape_err("filter taller than input"))?;
            let (ow, _) = p.padding.output_extent(w, kw, p.stride_w).ok_or_else(|| shape_err("filter wider than input"))?;
            Ok((dt, Shape::from([n, oh, ow, out_c])))
        }
        OpParams::FullyConnected(_) => {
            arity(2, 3, "2 or 3")?;
            let (in_dt, in_shape) = inputs[0];
            let (w_dt, w_shape) = inputs[1];
            let dt = float_or_int8(in_dt)?;
            check_weight_dtypes(dt, w_dt, inputs.get(2).map(|b| b.0))?;
            let &[units, depth] = w_shape else {
                return Err(shape_err(format!("weights {w_shape:?} must be [out, in]")));
            };
            if in_shape.last() != Some(&depth) {
                return Err(shape_err(format!("input {in_shape:?} inner dim does not match weights {w_shape:?}")));
            }
            if let Some((_, b_shape)) = inputs.get(2) {
                if *b_shape != [units] {
                    return Err(shape_err(format!("bias {b_shape:?} should be [{units}]")));
                }
            }
            let batch = in_shape.iter().product::<usize>() / depth;
            Ok((dt, shape_of(&[batch, units])?))
        }
        OpParams::MaxPool2d(p) | OpParams::AvgPool2d(p) => {
            arity(1, 1, "1")?;
            let dt = float_or_int8(inputs[0].0)?;
            if p.filter_h == 0 || p.filter_w == 0 || p.stride_h == 0 || p.stride_w == 0 {
                return Err(KernelError::BadParams("pool window and stride must be positive".into()));
            }
            let [n, h, w, c] = rank4(inputs[0].1, "input")?;
            let (oh, _) = p.padding.output_extent(h, p.filter_h, p.stride_h).ok_or_else(|| shape_err("window taller than input"))?;
            let (ow, _) = p.padding.output_extent(w, p.filter_w, p.stride_w).ok_or_else(|| shape_err("window wider than input"))?;
            Ok((dt, Shape::from([n, oh, ow, c])))
        }
        OpParams::Softmax(p) => {
            arity(1, 1, "1")?;
            let (dt, shape) = inputs[0];
            let dt = float_or_int8(dt)?;
            let rank = shape.len() as i32;
            if rank == 0 {
                return Err(shape_err("softmax needs rank >= 1"));
            }
            if p.axis != -1 && p.axis != rank - 1 {
                return Err(KernelError::BadParams(format!("softmax axis {} is not the last axis", p.axis)));
            }
            Ok((dt, shape_of(shape)?))
        }
        OpParams::Relu => {
            arity(1, 1, "1")?;
            Ok((float_or_int8(inputs[0].0)?, shape_of(inputs[0].1)?))
        }
        OpParams::Add(_) => {
            arity(2, 2, "2")?;
            let dt = float_or_int8(inputs[0].0)?;
            if inputs[1].0 != dt {
                return Err(dtype_err("ADD operands differ in dtype"));
            }
            if inputs[0].1 != inputs[1].1 {
                return Err(shape_err(format!("ADD operands {:?} and {:?} differ (no broadcasting)", inputs[0].1, inputs[1].1)));
            }
            Ok((dt, shape_of(inputs[0].1)?))
        }
        OpParams::Reshape(p) => {
            arity(1, 1, "1")?;
            let dt = float_or_int8(inputs[0].0)?;
            if p.new_shape.len() > MAX_RANK || p.new_shape.contains(&0) {
                return Err(KernelError::BadParams(format!("bad new_shape {:?}", p.new_shape)));
            }
            let count = |s: &[usize]| s.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let (have, want) = (count(inputs[0].1), count(&p.new_shape));
            if have.is_none() || have != want {
                return Err(shape_err(format!("cannot reshape {:?} to {:?}", inputs[0].1, p.new_shape)));
            }
            Ok((dt, shape_of(&p.new_shape)?))
        }
        OpParams::Quantize => {
            arity(1, 1, "1")?;
            if inputs[0].0 != DType::F32 {
                return Err(dtype_err("QUANTIZE expects an F32 input"));
            }
            Ok((DType::I8, shape_of(inputs[0].1)?))
        }
        OpParams::Dequantize => {
            arity(1, 1, "1")?;
            if inputs[0].0 != DType::I8 {
                return Err(dtype_err("DEQUANTIZE expects an I8 input"));
            }
            Ok((DType::F32, shape_of(inputs[0].1)?))
        }
    }
}

fn check_weight_dtypes(input: DType, weights: DType, bias: Option<DType>) -> Result<(), KernelError> {
    let (want_w, want_b) = match input {
        DType::F32 => (DType::F32, DType::F32),
        _ => (DType::I8, DType::I32),
    };
    if weights != want_w {
        return Err(dtype_err(format!("{input:?} input needs {want_w:?} weights, got {weights:?}")));
    }
    match bias {
        Some(b) if b != want_b => Err(dtype_err(format!("{input:?} input needs {want_b:?} bias, got {b:?}"))),
        _ => Ok(()),
    }
}

fn rank4(shape: &[usize], what: &str) -> Result<[usize; 4], KernelError> {
    shape.try_into().map_err(|_| shape_err(format!("{what} {shape:?} must be rank 4 (NHWC)")))
}

/// Full semantic check of one op against its tensor specs.
pub fn check_op(params: &OpParams, inputs: &[&TensorSpec], outputs: &[&TensorSpec]) -> Result<(), KernelError> {
    if outputs.len() != 1 {
        return Err(KernelError::Arity { what: "outputs", expected: "1", got: outputs.len() });
    }
    let operands: ArrayVec<(DType, &[usize]), 3> = inputs.iter().take(3).map(|t| (t.dtype, t.shape.as_slice())).collect();
    if inputs.len() > 3 {
        return Err(KernelError::Arity { what: "inputs", expected: "at most 3", got: inputs.len() });
    }
    let (dt, shape) = infer_output(params, &operands)?;
    let out = outputs[0];
    if out.dtype != dt {
        return Err(dtype_err(format!("output is {:?}, op produces {dt:?}", out.dtype)));
    }
    if out.shape.as_slice() != shape.as_slice() {
        return Err(shape_err(format!("output is {:?}, op produces {shape:?}", out.shape)));
    }
    if dt == DType::I8 {
        check_quant_constraints(params, inputs, out)?;
    }
    Ok(())
}

fn check_quant_constraints(params: &OpParams, inputs: &[&TensorSpec], out: &TensorSpec) -> Result<(), KernelError> {
    match params {
        OpParams::MaxPool2d(_) | OpParams::AvgPool2d(_) | OpParams::Relu | OpParams::Reshape(_) => {
            if inputs[0].quant != out.quant {
                return Err(KernelError::QuantMismatch(format!(
                    "{} requires equal input/output quantization",
                    params.opcode()
                )));
            }
        }
        OpParams::Conv2d(_) | OpParams::DepthwiseConv2d(_) | OpParams::FullyConnected(_) => {
            if let (Some(bias), Some(qi), Some(qw)) = (inputs.get(2), inputs[0].quant, inputs[1].quant) {
                if let Some(qb) = bias.quant {
                    let expected = qi.scale as f64 * qw.scale as f64;
                    if ((qb.scale as f64 - expected) / expected).abs() > 1e-5 {
                        return Err(KernelError::QuantMismatch(format!(
                            "bias scale {} should be input x weight scale {expected}",
                            qb.scale
                        )));
                    }
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Validates a kernel call against the shared shape rules and checks that
/// every buffer holds exactly the bytes its shape implies.
pub(crate) fn check_call(params: &OpParams, inputs: &[&TensorRef<'_>], output: &TensorMut<'_>) -> Result<(), KernelError> {
    for (i, t) in inputs.iter().enumerate() {
        if !t.is_consistent() {
            return Err(shape_err(format!("input {i} holds {} bytes for shape {:?}", t.data.len(), t.shape)));
        }
        if t.dtype == DType::I8 && t.quant.is_none() {
            return Err(KernelError::MissingQuant);
        }
    }
    if !output.as_ref().is_consistent() {
        return Err(shape_err(format!("output holds {} bytes for shape {:?}", output.data.len(), output.shape)));
    }
    if inputs.len() > 3 {
        return Err(KernelError::Arity { what: "inputs", expected: "at most 3", got: inputs.len() });
    }
    let operands: ArrayVec<(DType, &[usize]), 3> = inputs.iter().map(|t| (t.dtype, t.shape)).collect();
    let (dt, shape) = infer_output(params, &operands)?;
    if output.dtype != dt || output.shape != shape.as_slice() {
        return Err(shape_err(format!(
            "output is {:?}{:?}, op produces {dt:?}{shape:?}",
            output.dtype, output.shape
        )));
    }
    if dt == DType::I8 && output.quant.is_none() {
        return Err(KernelError::MissingQuant);
    }
    Ok(())
}
