use super::quant::{apply_f32, effective_scale, requantize};
use super::{check_call, quant_of, KernelError};
use crate::model::{DType, FullyConnectedParams, OpParams};
use crate::tensor::{TensorMut, TensorRef};

/// `out[b, o] = sum_i input[b, i] * weights[o, i] + bias[o]`, then the fused
/// activation. Leading input dims are flattened into the batch.
pub fn fully_connected(
    input: &TensorRef<'_>,
    weights: &TensorRef<'_>,
    bias: Option<&TensorRef<'_>>,
    params: &FullyConnectedParams,
    output: &mut TensorMut<'_>,
) -> Result<(), KernelError> {
    let op = OpParams::FullyConnected(*params);
    match bias {
        Some(b) => check_call(&op, &[input, weights, b], output)?,
        None => check_call(&op, &[input, weights], output)?,
    }
    let (units, depth) = (weights.shape[0], weights.shape[1]);
    let batches = output.shape[0];

    match input.dtype {
        DType::F32 => {
            for b in 0..batches {
                for o in 0..units {
                    let mut acc = 0.0f32;
                    for i in 0..depth {
                        acc += input.f32_at(b * depth + i) * weights.f32_at(o * depth + i);
                    }
                    if let Some(bias) = bias {
                        acc += bias.f32_at(o);
                    }
                    output.set_f32(b * units + o, apply_f32(params.fused_activation, acc));
                }
            }
        }
        _ => {
            let (qi, qw, qo) = (quant_of(input)?, quant_of(weights)?, output.quant.ok_or(KernelError::MissingQuant)?);
            let multiplier = effective_scale(qi, qw, qo);
            for b in 0..batches {
                for o in 0..units {
                    let mut acc = 0i32;
                    for i in 0..depth {
                        let xv = input.i8_at(b * depth + i) as i32 - qi.zero_point;
                        let wv = weights.i8_at(o * depth + i) as i32 - qw.zero_point;
                        acc += xv * wv;
                    }
                    if let Some(bias) = bias {
                        acc += bias.i32_at(o);
                    }
                    output.set_i8(b * units + o, requantize(acc, multiplier, qo.zero_point, params.fused_activation));
                }
            }
        }
    }
    Ok(())
}
