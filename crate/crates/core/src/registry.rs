//! Opcode to kernel dispatch.
//!
//! Each [`OpRegistration`] is a prepare/eval pair of plain function pointers.
//! Prepare runs once per op during `allocate_tensors` and may request scratch
//! memory; eval runs on every invoke and sees only its operand views, params
//! and granted scratch.

use arrayvec::ArrayVec;
use thiserror::Error;

use crate::kernels::{self, KernelError};
use crate::model::{OpParams, Opcode, TensorSpec};
use crate::tensor::{TensorMut, TensorRef};

/// Most inputs any op takes (input, weights, bias).
pub const MAX_INPUTS: usize = 3;
pub const MAX_OUTPUTS: usize = 1;
/// Most scratch buffers one op may request.
pub const MAX_SCRATCH: usize = 2;

pub type PrepareFn = fn(&mut PrepareContext<'_>) -> Result<(), KernelError>;
pub type EvalFn = fn(&mut EvalContext<'_>) -> Result<(), KernelError>;

#[derive(Debug, Clone, Copy)]
pub struct OpRegistration {
    pub opcode: Opcode,
    pub prepare: PrepareFn,
    pub eval: EvalFn,
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("{0} is already registered")]
    DuplicateOpcode(Opcode),
    #[error("unsupported operator {0}")]
    UnsupportedOperator(Opcode),
}

/// Index of a scratch buffer granted during prepare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScratchHandle(usize);

/// What a kernel sees while preparing one op.
pub struct PrepareContext<'a> {
    params: &'a OpParams,
    inputs: &'a [&'a TensorSpec],
    outputs: &'a [&'a TensorSpec],
    scratch: ArrayVec<usize, MAX_SCRATCH>,
}

impl<'a> PrepareContext<'a> {
    pub fn new(params: &'a OpParams, inputs: &'a [&'a TensorSpec], outputs: &'a [&'a TensorSpec]) -> Self {
        PrepareContext { params, inputs, outputs, scratch: ArrayVec::new() }
    }

    pub fn params(&self) -> &OpParams {
        self.params
    }

    pub fn inputs(&self) -> &[&TensorSpec] {
        self.inputs
    }

    pub fn outputs(&self) -> &[&TensorSpec] {
        self.outputs
    }

    /// Asks for `bytes` of scratch memory, live only during this op's eval.
    pub fn request_scratch(&mut self, bytes: usize) -> Result<ScratchHandle, KernelError> {
        if bytes == 0 {
            return Err(KernelError::BadParams("scratch request must be positive".into()));
        }
        let handle = ScratchHandle(self.scratch.len());
        self.scratch
            .try_push(bytes)
            .map_err(|_| KernelError::BadParams(format!("at most {MAX_SCRATCH} scratch buffers per op")))?;
        Ok(handle)
    }

    /// Scratch sizes requested so far, in handle order.
    pub fn scratch_requests(&self) -> &[usize] {
        &self.scratch
    }
}

/// What a kernel sees while evaluating one op.
pub struct EvalContext<'a> {
    params: &'a OpParams,
    inputs: ArrayVec<TensorRef<'a>, MAX_INPUTS>,
    outputs: ArrayVec<TensorMut<'a>, MAX_OUTPUTS>,
    scratch: ArrayVec<&'a mut [u8], MAX_SCRATCH>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        params: &'a OpParams,
        inputs: ArrayVec<TensorRef<'a>, MAX_INPUTS>,
        outputs: ArrayVec<TensorMut<'a>, MAX_OUTPUTS>,
        scratch: ArrayVec<&'a mut [u8], MAX_SCRATCH>,
    ) -> Self {
        EvalContext { params, inputs, outputs, scratch }
    }

    pub fn params(&self) -> &OpParams {
        self.params
    }

    pub fn inputs(&self) -> &[TensorRef<'a>] {
        &self.inputs
    }

    pub fn input(&self, i: usize) -> Result<&TensorRef<'a>, KernelError> {
        self.inputs.get(i).ok_or(KernelError::Arity { what: "inputs", expected: "more", got: self.inputs.len() })
    }

    /// Inputs, outputs and scratch at once, for kernels that need all three.
    pub fn io(&mut self) -> (&[TensorRef<'a>], &mut [TensorMut<'a>], &mut [&'a mut [u8]]) {
        (&self.inputs, &mut self.outputs, &mut self.scratch)
    }

    pub fn scratch(&mut self, handle: ScratchHandle) -> Option<&mut [u8]> {
        self.scratch.get_mut(handle.0).map(|s| &mut **s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: [Option<OpRegistration>; Opcode::ALL.len()],
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// All reference kernels.
    pub fn reference() -> Self {
        let mut registry = Registry::new();
        for opcode in Opcode::ALL {
            registry.register(reference_registration(opcode)).expect("each opcode appears once");
        }
        registry
    }

    pub fn register(&mut self, registration: OpRegistration) -> Result<(), RegistryError> {
        let slot = &mut self.entries[registration.opcode.code() as usize];
        if slot.is_some() {
            return Err(RegistryError::DuplicateOpcode(registration.opcode));
        }
        *slot = Some(registration);
        Ok(())
    }

    pub fn resolve(&self, opcode: Opcode) -> Result<OpRegistration, RegistryError> {
        self.entries[opcode.code() as usize].ok_or(RegistryError::UnsupportedOperator(opcode))
    }

    pub fn len(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The reference prepare/eval pair for `opcode`.
pub fn reference_registration(opcode: Opcode) -> OpRegistration {
    let eval: EvalFn = match opcode {
        Opcode::Conv2d => eval_conv,
        Opcode::DepthwiseConv2d => eval_depthwise,
        Opcode::FullyConnected => eval_fully_connected,
        Opcode::MaxPool2d | Opcode::AvgPool2d => eval_pool,
        Opcode::Softmax => eval_softmax,
        Opcode::Relu => eval_relu,
        Opcode::Add => eval_add,
        Opcode::Reshape => eval_reshape,
        Opcode::Quantize => eval_quantize,
        Opcode::Dequantize => eval_dequantize,
    };
    let prepare: PrepareFn = match opcode {
        Opcode::Softmax => prepare_softmax,
        _ => prepare_checked,
    };
    OpRegistration { opcode, prepare, eval }
}

/// Checks operand shapes, dtypes and quantization against the op's rules.
pub fn prepare_checked(ctx: &mut PrepareContext<'_>) -> Result<(), KernelError> {
    kernels::check_op(ctx.params, ctx.inputs, ctx.outputs)
}

fn prepare_softmax(ctx: &mut PrepareContext<'_>) -> Result<(), KernelError> {
    prepare_checked(ctx)?;
    let bytes = kernels::softmax_scratch_bytes(&ctx.inputs[0].shape);
    ctx.request_scratch(bytes)?;
    Ok(())
}

fn wrong_params(ctx: &EvalContext<'_>) -> KernelError {
    KernelError::BadParams(format!("unexpected {} params", ctx.params.opcode()))
}

fn operands<'c, 'a>(
    ins: &'c [TensorRef<'a>],
    outs: &'c mut [TensorMut<'a>],
    n_inputs: usize,
) -> Result<(&'c [TensorRef<'a>], &'c mut TensorMut<'a>), KernelError> {
    if ins.len() < n_inputs {
        return Err(KernelError::Arity { what: "inputs", expected: "more", got: ins.len() });
    }
    let got = outs.len();
    let out = outs.first_mut().ok_or(KernelError::Arity { what: "outputs", expected: "1", got })?;
    Ok((ins, out))
}

fn eval_conv(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let OpParams::Conv2d(p) = *ctx.params else { return Err(wrong_params(ctx)) };
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 2)?;
    kernels::conv_2d(&ins[0], &ins[1], ins.get(2), &p, out)
}

fn eval_depthwise(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let OpParams::DepthwiseConv2d(p) = *ctx.params else { return Err(wrong_params(ctx)) };
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 2)?;
    kernels::depthwise_conv_2d(&ins[0], &ins[1], ins.get(2), &p, out)
}

fn eval_fully_connected(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let OpParams::FullyConnected(p) = *ctx.params else { return Err(wrong_params(ctx)) };
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 2)?;
    kernels::fully_connected(&ins[0], &ins[1], ins.get(2), &p, out)
}

fn eval_pool(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let params = ctx.params;
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    match *params {
        OpParams::MaxPool2d(p) => kernels::max_pool_2d(&ins[0], &p, out),
        OpParams::AvgPool2d(p) => kernels::avg_pool_2d(&ins[0], &p, out),
        ref other => Err(KernelError::BadParams(format!("unexpected {} params", other.opcode()))),
    }
}

fn eval_softmax(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let (ins, outs, scratch) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    let scratch = scratch.first_mut().ok_or(KernelError::ScratchTooSmall { needed: 1, have: 0 })?;
    kernels::softmax(&ins[0], out, scratch)
}

fn eval_relu(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    kernels::relu(&ins[0], out)
}

fn eval_add(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let OpParams::Add(p) = *ctx.params else { return Err(wrong_params(ctx)) };
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 2)?;
    kernels::add(&ins[0], &ins[1], &p, out)
}

fn eval_reshape(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    kernels::reshape(&ins[0], out)
}

fn eval_quantize(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    kernels::quantize(&ins[0], out)
}

fn eval_dequantize(ctx: &mut EvalContext<'_>) -> Result<(), KernelError> {
    let (ins, outs, _) = ctx.io();
    let (ins, out) = operands(ins, outs, 1)?;
    kernels::dequantize(&ins[0], out)
}
