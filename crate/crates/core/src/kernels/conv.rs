use super::quant::{apply_f32, effective_scale, requantize};
use super::{check_call, quant_of, KernelError};
use crate::model::{ConvParams, DType, OpParams};
use crate::tensor::{TensorMut, TensorRef};

/// Spatial geometry shared by the convolution loops.
struct Geometry {
    batches: usize,
    in_h: usize,
    in_w: usize,
    in_c: usize,
    filter_h: usize,
    filter_w: usize,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    pad_top: usize,
    pad_left: usize,
    stride_h: usize,
    stride_w: usize,
}

impl Geometry {
    fn new(input: &TensorRef<'_>, weights: &TensorRef<'_>, output: &TensorMut<'_>, p: &ConvParams) -> Self {
        // shapes were checked by check_call
        let (in_h, in_w) = (input.shape[1], input.shape[2]);
        let (filter_h, filter_w) = (weights.shape[1], weights.shape[2]);
        let (_, pad_top) = p.padding.output_extent(in_h, filter_h, p.stride_h).unwrap_or_default();
        let (_, pad_left) = p.padding.output_extent(in_w, filter_w, p.stride_w).unwrap_or_default();
        Geometry {
            batches: input.shape[0],
            in_h,
            in_w,
            in_c: input.shape[3],
            filter_h,
            filter_w,
            out_h: output.shape[1],
            out_w: output.shape[2],
            out_c: output.shape[3],
            pad_top,
            pad_left,
            stride_h: p.stride_h,
            stride_w: p.stride_w,
        }
    }

    /// Input row/column for a filter tap, or `None` inside the padding.
    #[inline]
    fn input_pos(&self, out_y: usize, out_x: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (out_y * self.stride_h + ky).checked_sub(self.pad_top)?;
        let x = (out_x * self.stride_w + kx).checked_sub(self.pad_left)?;
        (y < self.in_h && x < self.in_w).then_some((y, x))
    }

    #[inline]
    fn input_index(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.in_h + y) * self.in_w + x) * self.in_c + c
    }

    #[inline]
    fn output_index(&self, b: usize, y: usize, x: usize, c: usize) -> usize {
        ((b * self.out_h + y) * self.out_w + x) * self.out_c + c
    }
}

/// 2-D cross-correlation over NHWC input with OHWI weights.
///
/// Padded taps are skipped, which is equivalent to padding with 0 for F32 and
/// with the input zero point for I8.
pub fn conv_2d(
    input: &TensorRef<'_>,
    weights: &TensorRef<'_>,
    bias: Option<&TensorRef<'_>>,
    params: &ConvParams,
    output: &mut TensorMut<'_>,
) -> Result<(), KernelError> {
    let op = OpParams::Conv2d(*params);
    match bias {
        Some(b) => check_call(&op, &[input, weights, b], output)?,
        None => check_call(&op, &[input, weights], output)?,
    }
    let g = Geometry::new(input, weights, output, params);
    let w_index = |o: usize, ky: usize, kx: usize, c: usize| ((o * g.filter_h + ky) * g.filter_w + kx) * g.in_c + c;

    match input.dtype {
        DType::F32 => {
            for b in 0..g.batches {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        for o in 0..g.out_c {
                            let mut acc = 0.0f32;
                            for ky in 0..g.filter_h {
                                for kx in 0..g.filter_w {
                                    let Some((y, x)) = g.input_pos(oy, ox, ky, kx) else { continue };
                                    for c in 0..g.in_c {
                                        acc += input.f32_at(g.input_index(b, y, x, c)) * weights.f32_at(w_index(o, ky, kx, c));
                                    }
                                }
                            }
                            if let Some(bias) = bias {
                                acc += bias.f32_at(o);
                            }
                            output.set_f32(g.output_index(b, oy, ox, o), apply_f32(params.fused_activation, acc));
                        }
                    }
                }
            }
        }
        _ => {
            let (qi, qw, qo) = (quant_of(input)?, quant_of(weights)?, output.quant.ok_or(KernelError::MissingQuant)?);
            let multiplier = effective_scale(qi, qw, qo);
            for b in 0..g.batches {
                for oy in 0..g.out_h {
                    for ox in 0..g.out_w {
                        for o in 0..g.out_c {
                            let mut acc = 0i32;
                            for ky in 0..g.filter_h {
                                for kx in 0..g.filter_w {
                                    let Some((y, x)) = g.input_pos(oy, ox, ky, kx) else { continue };
                                    for c in 0..g.in_c {
                                        let xv = input.i8_at(g.input_index(b, y, x, c)) as i32 - qi.zero_point;
                                        let wv = weights.i8_at(w_index(o, ky, kx, c)) as i32 - qw.zero_point;
                                        acc += xv * wv;
                                    }
                                }
                            }
                            if let Some(bias) = bias {
                                acc += bias.i32_at(o);
                            }
                            let q = requantize(acc, multiplier, qo.zero_point, params.fused_activation);
                            output.set_i8(g.output_index(b, oy, ox, o), q);
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Per-channel spatial convolution. Weights are `[1, kh, kw, in_c * multiplier]`
/// and output channel `c * multiplier + m` reads input channel `c` only.
pub fn depthwise_conv_2d(
    input: &TensorRef<'_>,
    weights: &TensorRef<'_>,
    bias: Option<&TensorRef<'_>>,
    params: &ConvParams,
    output: &mut TensorMut<'_>,
) -> Result<(), KernelError> {
    let op = OpParams::DepthwiseConv2d(*params);
    match bias {
        Some(b) => check_call(&op, &[input, weights, b], output)?,
        None => check_call(&op, &[input, weights], output)?,
    }
    let g = Geometry::new(input, weights, output, params);
    let multiplier = params.depth_multiplier;
    let w_index = |ky: usize, kx: usize, o: usize| (ky * g.filter_w + kx) * g.out_c + o;

    let quant = match input.dtype {
        DType::F32 => None,
        _ => {
            let (qi, qw, qo) = (quant_of(input)?, quant_of(weights)?, output.quant.ok_or(KernelError::MissingQuant)?);
            Some((qi, qw, qo, effective_scale(qi, qw, qo)))
        }
    };

    for b in 0..g.batches {
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for c in 0..g.in_c {
                    for m in 0..multiplier {
                        let o = c * multiplier + m;
                        let out_index = g.output_index(b, oy, ox, o);
                        match quant {
                            None => {
                                let mut acc = 0.0f32;
                                for ky in 0..g.filter_h {
                                    for kx in 0..g.filter_w {
                                        let Some((y, x)) = g.input_pos(oy, ox, ky, kx) else { continue };
                                        acc += input.f32_at(g.input_index(b, y, x, c)) * weights.f32_at(w_index(ky, kx, o));
                                    }
                                }
                                if let Some(bias) = bias {
                                    acc += bias.f32_at(o);
                                }
                                output.set_f32(out_index, apply_f32(params.fused_activation, acc));
                            }
                            Some((qi, qw, qo, mult)) => {
                                let mut acc = 0i32;
                                for ky in 0..g.filter_h {
                                    for kx in 0..g.filter_w {
                                        let Some((y, x)) = g.input_pos(oy, ox, ky, kx) else { continue };
                                        let xv = input.i8_at(g.input_index(b, y, x, c)) as i32 - qi.zero_point;
                                        let wv = weights.i8_at(w_index(ky, kx, o)) as i32 - qw.zero_point;
                                        acc += xv * wv;
                                    }
                                }
                                if let Some(bias) = bias {
                                    acc += bias.i32_at(o);
                                }
                                output.set_i8(out_index, requantize(acc, mult, qo.zero_point, params.fused_activation));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
