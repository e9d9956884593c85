//! Post-training per-tensor int8 quantization with min/max calibration.

use std::borrow::Cow;

use super::{evaluate, require_valid, ConverterError};
use crate::kernels::quant::{quantize_value, round_half_away};
use crate::model::{DType, Model, OpParams, QuantParams, TensorRole, OFFLINE_MEMORY_PLAN};
use crate::registry::Registry;
use crate::tensor::Tensor;

/// Affine parameters covering `[min, max]` widened to include zero.
///
/// A degenerate range (all zeros) falls back to scale 1, zero point 0.
pub fn calibrated_params(min: f32, max: f32) -> QuantParams {
    let (min, max) = (min.min(0.0) as f64, max.max(0.0) as f64);
    if max - min <= 0.0 {
        return QuantParams::new(1.0, 0);
    }
    let scale = (max - min) / 255.0;
    let zero_point = round_half_away(-128.0 - min / scale).clamp(-128.0, 127.0) as i32;
    QuantParams::new(scale as f32, zero_point)
}

fn range_of(values: &[f32]) -> (f32, f32) {
    values.iter().fold((0.0f32, 0.0f32), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ConstUse {
    Unused,
    Weight,
    /// Bias with the scale it must carry.
    Bias(f32),
}

/// Converts an all-F32 model to int8 using the given calibration samples,
/// one `Vec` of model inputs per sample.
///
/// Activations take min/max ranges observed on the samples; pool, RELU and
/// RESHAPE outputs inherit their input's encoding and softmax outputs use
/// scale 1/256, zero point -128. Weights use the same affine rule over their
/// own range, biases become I32 with scale `s_in * s_w`. Any offline memory
/// plan is dropped since buffer sizes change.
pub fn quantize_post_training(model: &Model<'_>, calibration: &[Vec<Tensor>]) -> Result<Model<'static>, ConverterError> {
    require_valid(model)?;
    for op in &model.ops {
        if matches!(op.params, OpParams::Quantize | OpParams::Dequantize) {
            return Err(ConverterError::UnsupportedOp(format!("{} has no int8-to-int8 form", op.opcode())));
        }
    }
    if let Some(t) = model.tensors.iter().find(|t| t.dtype != DType::F32) {
        return Err(ConverterError::UnsupportedOp(format!("tensor {} is already {:?}", t.name, t.dtype)));
    }
    if calibration.is_empty() {
        return Err(ConverterError::EmptyCalibration);
    }

    let registry = Registry::reference();
    let mut ranges = vec![(0.0f32, 0.0f32); model.tensors.len()];
    for sample in calibration {
        let values = evaluate(model, &registry, sample)?;
        for (range, value) in ranges.iter_mut().zip(&values) {
            if let Some(v) = value {
                let (lo, hi) = range_of(&v.to_f32_vec());
                *range = (range.0.min(lo), range.1.max(hi));
            }
        }
    }

    let mut quant: Vec<Option<QuantParams>> = vec![None; model.tensors.len()];
    for (t, spec) in model.tensors.iter().enumerate() {
        if !spec.role.is_const() {
            quant[t] = Some(calibrated_params(ranges[t].0, ranges[t].1));
        }
    }
    for op in &model.ops {
        let out = op.outputs[0];
        match op.params {
            OpParams::MaxPool2d(_) | OpParams::AvgPool2d(_) | OpParams::Relu | OpParams::Reshape(_) => {
                quant[out] = quant[op.inputs[0]];
            }
            OpParams::Softmax(_) => quant[out] = Some(QuantParams::new(1.0 / 256.0, -128)),
            _ => {}
        }
    }

    let mut uses = vec![ConstUse::Unused; model.tensors.len()];
    for t in 0..model.tensors.len() {
        if let Some(data) = model.const_data(t) {
            let (lo, hi) = range_of(&f32_values(data));
            quant[t] = Some(calibrated_params(lo, hi));
        }
    }
    for op in &model.ops {
        if !matches!(op.params, OpParams::Conv2d(_) | OpParams::DepthwiseConv2d(_) | OpParams::FullyConnected(_)) {
            continue;
        }
        for (slot, &t) in op.inputs.iter().enumerate() {
            if !model.tensors[t].role.is_const() {
                continue;
            }
            let wanted = match slot {
                2 => {
                    let s_in = quant[op.inputs[0]].expect("activations are calibrated").scale;
                    let s_w = quant[op.inputs[1]].expect("weights are calibrated").scale;
                    ConstUse::Bias(s_in * s_w)
                }
                _ => ConstUse::Weight,
            };
            uses[t] = match (uses[t], wanted) {
                (ConstUse::Unused, w) => w,
                (a, b) if a == b => a,
                _ => {
                    return Err(ConverterError::UnsupportedOp(format!(
                        "constant {} is used with conflicting encodings",
                        model.tensors[t].name
                    )))
                }
            };
        }
    }

    let mut out = Model {
        version: model.version,
        tensors: model.tensors.clone(),
        ops: model.ops.clone(),
        buffers: Vec::new(),
        inputs: model.inputs.clone(),
        outputs: model.outputs.clone(),
        metadata: model.metadata.clone(),
    };
    out.metadata.shift_remove(OFFLINE_MEMORY_PLAN);
    for (t, spec) in out.tensors.iter_mut().enumerate() {
        let q = quant[t].expect("every tensor has an encoding");
        let Some(data) = model.const_data(t) else {
            spec.dtype = DType::I8;
            spec.quant = Some(q);
            continue;
        };
        let values = f32_values(data);
        let bytes: Vec<u8> = match uses[t] {
            ConstUse::Bias(scale) => {
                spec.dtype = DType::I32;
                spec.quant = Some(QuantParams::new(scale, 0));
                values
                    .iter()
                    .flat_map(|&b| {
                        let q = round_half_away(b as f64 / scale as f64).clamp(i32::MIN as f64, i32::MAX as f64) as i32;
                        q.to_le_bytes()
                    })
                    .collect()
            }
            ConstUse::Weight | ConstUse::Unused => {
                spec.dtype = DType::I8;
                spec.quant = Some(q);
                values.iter().map(|&w| quantize_value(w, q) as u8).collect()
            }
        };
        out.buffers.push(Cow::Owned(bytes));
        spec.role = TensorRole::Const(out.buffers.len() - 1);
    }
    require_valid(&out)?;
    Ok(out)
}

fn f32_values(data: &[u8]) -> Vec<f32> {
    data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect()
}
