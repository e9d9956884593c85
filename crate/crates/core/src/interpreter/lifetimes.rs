//! Builds the planner's allocation requests from a model.
//!
//! Request ids are assigned in a fixed order: every non-constant tensor by
//! tensor index, then every scratch buffer in op order. Offline plan blobs
//! list offsets in the same order.

use arrayvec::ArrayVec;

use super::InterpreterError;
use crate::model::{Model, TensorRole};
use crate::planner::AllocationRequest;
use crate::registry::{OpRegistration, PrepareContext, Registry, MAX_INPUTS, MAX_OUTPUTS, MAX_SCRATCH};

/// What an allocation request stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RequestSource {
    Tensor(usize),
    Scratch { op: usize, slot: usize },
}

/// Nonpersistent buffers of a model with their lifetimes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RequestSet {
    pub requests: Vec<AllocationRequest>,
    pub sources: Vec<RequestSource>,
}

/// Scratch sizes granted to each op during prepare.
pub type ScratchSizes = ArrayVec<usize, MAX_SCRATCH>;

/// Resolves and prepares every op of `model` against `registry`, collecting
/// their scratch requests.
///
/// `model` must already pass validation.
pub fn prepare_ops(model: &Model<'_>, registry: &Registry) -> Result<Vec<ScratchSizes>, InterpreterError> {
    Ok(resolve_and_prepare(model, registry)?.1)
}

pub(crate) fn resolve_and_prepare(
    model: &Model<'_>,
    registry: &Registry,
) -> Result<(Vec<OpRegistration>, Vec<ScratchSizes>), InterpreterError> {
    let mut registrations = Vec::with_capacity(model.ops.len());
    for (op, entry) in model.ops.iter().enumerate() {
        let registration = registry
            .resolve(entry.opcode())
            .map_err(|_| InterpreterError::UnsupportedOperator { op, opcode: entry.opcode() })?;
        registrations.push(registration);
    }
    let mut scratch = Vec::with_capacity(model.ops.len());
    for (op, (entry, registration)) in model.ops.iter().zip(&registrations).enumerate() {
        let inputs: ArrayVec<_, MAX_INPUTS> = entry.inputs.iter().take(MAX_INPUTS).map(|&t| &model.tensors[t]).collect();
        let outputs: ArrayVec<_, MAX_OUTPUTS> = entry.outputs.iter().take(MAX_OUTPUTS).map(|&t| &model.tensors[t]).collect();
        let mut ctx = PrepareContext::new(&entry.params, &inputs, &outputs);
        (registration.prepare)(&mut ctx).map_err(|source| InterpreterError::PrepareFailed { op, source })?;
        scratch.push(ctx.scratch_requests().iter().copied().collect());
    }
    Ok((registrations, scratch))
}

/// Lifetimes follow these rules:
///
/// * model inputs are live from op 0 through their last consumer;
/// * model outputs are live from their producer through `ops.len()`, i.e.
///   until the end of invoke;
/// * intermediates are live from their producer through their last consumer;
/// * scratch buffers are live only during their own op.
pub fn build_requests(model: &Model<'_>, scratch: &[ScratchSizes]) -> RequestSet {
    let n_ops = model.ops.len();
    let mut producer = vec![None; model.tensors.len()];
    let mut last_consumer = vec![None; model.tensors.len()];
    for (k, op) in model.ops.iter().enumerate() {
        for &t in &op.inputs {
            last_consumer[t] = Some(k);
        }
        for &t in &op.outputs {
            producer[t].get_or_insert(k);
        }
    }

    let mut set = RequestSet::default();
    for (t, spec) in model.tensors.iter().enumerate() {
        let (first, last) = match spec.role {
            TensorRole::Const(_) => continue,
            TensorRole::ModelInput => (0, last_consumer[t].unwrap_or(0)),
            TensorRole::ModelOutput => (producer[t].unwrap_or(0), n_ops),
            TensorRole::Intermediate => {
                let first = producer[t].unwrap_or(0);
                (first, last_consumer[t].unwrap_or(first).max(first))
            }
        };
        set.requests.push(AllocationRequest::new(set.requests.len(), spec.byte_size(), first, last));
        set.sources.push(RequestSource::Tensor(t));
    }
    for (op, sizes) in scratch.iter().enumerate() {
        for (slot, &size) in sizes.iter().enumerate() {
            set.requests.push(AllocationRequest::new(set.requests.len(), size, op, op));
            set.sources.push(RequestSource::Scratch { op, slot });
        }
    }
    set
}

/// [`prepare_ops`] followed by [`build_requests`].
pub fn model_requests(model: &Model<'_>, registry: &Registry) -> Result<RequestSet, InterpreterError> {
    let scratch = prepare_ops(model, registry)?;
    Ok(build_requests(model, &scratch))
}
