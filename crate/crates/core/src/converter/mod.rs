//! Host-side model construction: graph building, post-training
//! quantization and offline memory plans.

use arrayvec::ArrayVec;
use thiserror::Error;

use crate::interpreter::{model_requests, prepare_ops, InterpreterError};
use crate::model::{validate_model, Model, TensorRole, ValidationReport, OFFLINE_MEMORY_PLAN};
use crate::planner::{encode_offsets, plan_greedy, plan_offsets};
use crate::registry::{EvalContext, Registry, MAX_INPUTS, MAX_OUTPUTS, MAX_SCRATCH};
use crate::tensor::{Tensor, TensorRef};

mod graph;
mod ptq;

pub use graph::{build_graph_text, graph_build, parse_graph, GraphSpec, Init, OpDecl, TensorDecl};
pub use ptq::{calibrated_params, quantize_post_training};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConverterError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("op order error: {0}")]
    CycleOrOrder(String),
    #[error("unknown opcode {0}")]
    UnknownOpcode(String),
    #[error("shape inference failed: {0}")]
    ShapeInference(String),
    #[error("unsupported for quantization: {0}")]
    UnsupportedOp(String),
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("bad calibration input: {0}")]
    Calibration(String),
    #[error("invalid model: {}", .0.violations.first().map(|v| v.to_string()).unwrap_or_default())]
    InvalidModel(ValidationReport),
    #[error("host evaluation failed: {0}")]
    Eval(String),
    #[error(transparent)]
    Interpreter(#[from] InterpreterError),
}

fn require_valid(model: &Model<'_>) -> Result<(), ConverterError> {
    let report = validate_model(model);
    if report.is_valid() {
        Ok(())
    } else {
        Err(ConverterError::InvalidModel(report))
    }
}

/// Runs `model` on the host with owned buffers, returning the value of every
/// non-constant tensor (`None` for constants).
///
/// Unlike the interpreter, nothing is reused, so intermediates can be
/// inspected afterwards.
pub fn evaluate(model: &Model<'_>, registry: &Registry, inputs: &[Tensor]) -> Result<Vec<Option<Tensor>>, ConverterError> {
    require_valid(model)?;
    if inputs.len() != model.inputs.len() {
        return Err(ConverterError::Calibration(format!("{} inputs given, model has {}", inputs.len(), model.inputs.len())));
    }
    let scratch_sizes = prepare_ops(model, registry)?;
    let mut values: Vec<Option<Tensor>> = vec![None; model.tensors.len()];
    for (i, (&t, given)) in model.inputs.iter().zip(inputs).enumerate() {
        let spec = &model.tensors[t];
        if given.dtype != spec.dtype || given.shape != spec.shape || given.data.len() != spec.byte_size() {
            return Err(ConverterError::Calibration(format!(
                "input {i} is {:?}{:?}, model wants {:?}{:?}",
                given.dtype, given.shape, spec.dtype, spec.shape
            )));
        }
        values[t] = Some(Tensor { quant: spec.quant, ..given.clone() });
    }

    for (k, op) in model.ops.iter().enumerate() {
        let registration = registry.resolve(op.opcode()).map_err(|e| ConverterError::Eval(e.to_string()))?;
        let mut outputs: Vec<Tensor> = op.outputs.iter().map(|&t| Tensor::for_spec(&model.tensors[t])).collect();
        let mut scratch: Vec<Vec<u8>> = scratch_sizes[k].iter().map(|&n| vec![0; n]).collect();
        {
            let mut in_views = ArrayVec::<TensorRef<'_>, MAX_INPUTS>::new();
            for &t in &op.inputs {
                let view = match model.tensors[t].role {
                    TensorRole::Const(_) => TensorRef::from_spec(&model.tensors[t], model.const_data(t).expect("validated")),
                    _ => values[t].as_ref().expect("validated order defines every input").view(),
                };
                in_views.push(view);
            }
            let out_views: ArrayVec<_, MAX_OUTPUTS> = outputs.iter_mut().map(Tensor::view_mut).collect();
            let scratch_views: ArrayVec<_, MAX_SCRATCH> = scratch.iter_mut().map(Vec::as_mut_slice).collect();
            let mut ctx = EvalContext::new(&op.params, in_views, out_views, scratch_views);
            (registration.eval)(&mut ctx).map_err(|e| ConverterError::Eval(format!("op {k} ({}): {e}", op.opcode())))?;
        }
        for (&t, value) in op.outputs.iter().zip(outputs) {
            values[t] = Some(value);
        }
    }
    Ok(values)
}

/// Model outputs of a host evaluation, in model output order.
pub fn evaluate_outputs(model: &Model<'_>, registry: &Registry, inputs: &[Tensor]) -> Result<Vec<Tensor>, ConverterError> {
    let mut values = evaluate(model, registry, inputs)?;
    Ok(model.outputs.iter().map(|&t| values[t].take().expect("outputs are produced")).collect())
}

/// Plans the model's nonpersistent buffers with the same lifetime rules the
/// interpreter uses and stores the offsets under [`OFFLINE_MEMORY_PLAN`],
/// replacing any previous plan.
///
/// The interpreter aligns buffers to 16 bytes, so `alignment` should be a
/// multiple of 16 for the plan to be accepted at load time.
pub fn attach_offline_plan(model: &Model<'_>, alignment: usize) -> Result<Model<'static>, ConverterError> {
    require_valid(model)?;
    let set = model_requests(model, &Registry::reference())?;
    let plan = plan_greedy(&set.requests, alignment);
    let blob = encode_offsets(&plan_offsets(&set.requests, &plan));
    let mut out = model.clone().into_owned();
    out.set_metadata(OFFLINE_MEMORY_PLAN, blob);
    Ok(out)
}
