use super::quant::{dequantize_value, quantize_value};
use super::{check_call, quant_of, KernelError};
use crate::model::{DType, OpParams, SoftmaxParams};
use crate::tensor::{TensorMut, TensorRef};

/// Scratch bytes needed for a softmax over `shape`: one f32 per row element.
pub fn softmax_scratch_bytes(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1) * 4
}

/// Softmax over the last axis, `exp(x - max) / sum(exp(x - max))`.
///
/// The I8 path dequantizes each row into `scratch`, runs the float softmax
/// and quantizes into the output encoding.
pub fn softmax(input: &TensorRef<'_>, output: &mut TensorMut<'_>, scratch: &mut [u8]) -> Result<(), KernelError> {
    check_call(&OpParams::Softmax(SoftmaxParams::default()), &[input], output)?;
    let depth = input.shape.last().copied().unwrap_or(1);
    let needed = depth * 4;
    if scratch.len() < needed {
        return Err(KernelError::ScratchTooSmall { needed, have: scratch.len() });
    }
    let rows = input.num_elements() / depth;
    let quant = match input.dtype {
        DType::F32 => None,
        _ => Some((quant_of(input)?, output.quant.ok_or(KernelError::MissingQuant)?)),
    };
    let load = |i: usize, s: &[u8]| f32::from_le_bytes([s[i * 4], s[i * 4 + 1], s[i * 4 + 2], s[i * 4 + 3]]);
    let store = |i: usize, v: f32, s: &mut [u8]| s[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());

    for r in 0..rows {
        let base = r * depth;
        for i in 0..depth {
            let x = match quant {
                None => input.f32_at(base + i),
                Some((qi, _)) => dequantize_value(input.i8_at(base + i), qi),
            };
            store(i, x, scratch);
        }
        let max = (0..depth).map(|i| load(i, scratch)).fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for i in 0..depth {
            let e = (load(i, scratch) - max).exp();
            store(i, e, scratch);
            sum += e;
        }
        for i in 0..depth {
            let p = load(i, scratch) / sum;
            match quant {
                None => output.set_f32(base + i, p),
                Some((_, qo)) => output.set_i8(base + i, quantize_value(p, qo)),
            }
        }
    }
    Ok(())
}
