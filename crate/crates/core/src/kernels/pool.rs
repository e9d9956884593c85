use super::quant::{activation_floor, apply_f32};
use super::{check_call, quant_of, KernelError};
use crate::model::{DType, OpParams, PoolParams};
use crate::tensor::{TensorMut, TensorRef};

#[derive(Clone, Copy)]
enum Reduce {
    Max,
    Average,
}

/// Window maximum. I8 compares codes directly; output quantization must equal
/// the input's.
pub fn max_pool_2d(input: &TensorRef<'_>, params: &PoolParams, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::MaxPool2d(*params), &[input], output)?;
    pool(input, params, output, Reduce::Max)
}

/// Window mean over in-bounds positions only; SAME padding does not count
/// toward the denominator. I8 rounds half away from zero and requires equal
/// input and output quantization.
pub fn avg_pool_2d(input: &TensorRef<'_>, params: &PoolParams, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::AvgPool2d(*params), &[input], output)?;
    pool(input, params, output, Reduce::Average)
}

fn pool(input: &TensorRef<'_>, p: &PoolParams, output: &mut TensorMut<'_>, reduce: Reduce) -> Result<(), KernelError> {
    let quant = if input.dtype == DType::I8 {
        let qi = quant_of(input)?;
        if output.quant != Some(qi) {
            return Err(KernelError::QuantMismatch("pooling requires equal input/output quantization".into()));
        }
        Some(qi)
    } else {
        None
    };
    let [batches, in_h, in_w, channels] = [input.shape[0], input.shape[1], input.shape[2], input.shape[3]];
    let (out_h, out_w) = (output.shape[1], output.shape[2]);
    let (_, pad_top) = p.padding.output_extent(in_h, p.filter_h, p.stride_h).unwrap_or_default();
    let (_, pad_left) = p.padding.output_extent(in_w, p.filter_w, p.stride_w).unwrap_or_default();

    for b in 0..batches {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let y0 = (oy * p.stride_h) as isize - pad_top as isize;
                let x0 = (ox * p.stride_w) as isize - pad_left as isize;
                let ys = y0.max(0) as usize..((y0 + p.filter_h as isize).min(in_h as isize)) as usize;
                let xs = x0.max(0) as usize..((x0 + p.filter_w as isize).min(in_w as isize)) as usize;
                let count = ys.len() * xs.len();
                for c in 0..channels {
                    let at = |y: usize, x: usize| ((b * in_h + y) * in_w + x) * channels + c;
                    let out_index = ((b * out_h + oy) * out_w + ox) * channels + c;
                    match quant {
                        None => {
                            let mut acc = match reduce {
                                Reduce::Max => f32::NEG_INFINITY,
                                Reduce::Average => 0.0,
                            };
                            for y in ys.clone() {
                                for x in xs.clone() {
                                    let v = input.f32_at(at(y, x));
                                    acc = match reduce {
                                        Reduce::Max => acc.max(v),
                                        Reduce::Average => acc + v,
                                    };
                                }
                            }
                            if let Reduce::Average = reduce {
                                acc /= count as f32;
                            }
                            output.set_f32(out_index, apply_f32(p.fused_activation, acc));
                        }
                        Some(q) => {
                            let mut acc: i32 = match reduce {
                                Reduce::Max => i8::MIN as i32,
                                Reduce::Average => 0,
                            };
                            for y in ys.clone() {
                                for x in xs.clone() {
                                    let v = input.i8_at(at(y, x)) as i32;
                                    acc = match reduce {
                                        Reduce::Max => acc.max(v),
                                        Reduce::Average => acc + v,
                                    };
                                }
                            }
                            if let Reduce::Average = reduce {
                                acc = div_round_half_away(acc, count as i32);
                            }
                            let floor = activation_floor(p.fused_activation, q.zero_point);
                            output.set_i8(out_index, acc.clamp(floor, 127) as i8);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn div_round_half_away(num: i32, den: i32) -> i32 {
    if num >= 0 {
        (num + den / 2) / den
    } else {
        -((-num + den / 2) / den)
    }
}
