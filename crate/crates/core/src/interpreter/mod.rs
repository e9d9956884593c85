//! Binds a model, a registry and an arena, and runs the model.
//!
//! Lifecycle: [`Interpreter::new`] validates the model; [`allocate_tensors`]
//! resolves and prepares every op, plans the nonpersistent buffers and
//! reserves arena space; [`invoke`] then evaluates the op list in order with
//! no further arena activity.
//!
//! [`allocate_tensors`]: Interpreter::allocate_tensors
//! [`invoke`]: Interpreter::invoke

use std::cell::{Ref, RefMut};
use std::mem::size_of;
use std::ops::Range;

use arrayvec::ArrayVec;
use thiserror::Error;

use crate::arena::{Arena, ArenaError, TensorArena, DEFAULT_ALIGN};
use crate::kernels::KernelError;
use crate::model::{validate_model, Model, Opcode, TensorRole, TensorSpec, ValidationReport, OFFLINE_MEMORY_PLAN};
use crate::planner::{self, AllocationRequest, MemoryPlan, PlannerError};
use crate::registry::{EvalContext, OpRegistration, Registry, MAX_SCRATCH};
use crate::tensor::{TensorMut, TensorRef};

mod lifetimes;
mod profiler;

pub use lifetimes::{build_requests, model_requests, prepare_ops, RequestSet, RequestSource, ScratchSizes};
pub use profiler::{Clock, FakeClock, MonotonicClock, ProfileEvent, ProfileLog, ProfileSink};
use profiler::Profiler;

/// Arena bytes of temp space used per allocation request while planning.
pub const PLAN_RECORD_BYTES: usize = size_of::<AllocationRequest>() + size_of::<usize>();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Created,
    Allocated,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InterpreterError {
    #[error("invalid model: {}", first_violation(.0))]
    InvalidModel(ValidationReport),
    #[error("interpreter is {actual:?}, operation needs {expected:?}")]
    PhaseError { expected: Phase, actual: Phase },
    #[error("op {op}: unsupported operator {opcode}")]
    UnsupportedOperator { op: usize, opcode: Opcode },
    #[error("arena exhausted: required >= {required} bytes, available {available}")]
    ArenaExhausted { required: usize, available: usize },
    #[error("arena: {0}")]
    Arena(ArenaError),
    #[error("op {op}: prepare failed: {source}")]
    PrepareFailed { op: usize, source: KernelError },
    #[error(transparent)]
    Plan(#[from] PlannerError),
    #[error("{what} index {index} out of range (count {count})")]
    IndexOutOfRange { what: &'static str, index: usize, count: usize },
    #[error("op {op} ({opcode}): eval failed: {source}")]
    EvalFailed { op: usize, opcode: Opcode, source: KernelError },
    #[error("arena memory is borrowed by an outstanding tensor view")]
    ArenaBusy,
}

fn first_violation(report: &ValidationReport) -> String {
    match report.violations.first() {
        Some(v) if report.violations.len() > 1 => format!("{v} (and {} more)", report.violations.len() - 1),
        Some(v) => v.to_string(),
        None => "no violations".into(),
    }
}

/// Table-3 style memory accounting for one interpreter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MemoryReport {
    pub persistent_bytes: usize,
    pub nonpersistent_bytes: usize,
    pub total_bytes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Const(usize),
    Arena(usize),
}

struct Node {
    registration: OpRegistration,
    scratch: ArrayVec<(usize, usize), MAX_SCRATCH>,
}

struct Allocation {
    nodes: Vec<Node>,
    locations: Vec<Location>,
    requests: RequestSet,
    plan: MemoryPlan,
    persistent_bytes: usize,
}

pub struct Interpreter<'a> {
    model: &'a Model<'a>,
    registry: &'a Registry,
    arena: &'a TensorArena,
    allocation: Option<Allocation>,
    profiler: Option<Profiler>,
    poison: Option<u8>,
}

fn align16(n: usize) -> usize {
    n.div_ceil(DEFAULT_ALIGN) * DEFAULT_ALIGN
}

impl<'a> Interpreter<'a> {
    pub fn new(model: &'a Model<'a>, registry: &'a Registry, arena: &'a TensorArena) -> Result<Self, InterpreterError> {
        let report = validate_model(model);
        if !report.is_valid() {
            return Err(InterpreterError::InvalidModel(report));
        }
        Ok(Interpreter { model, registry, arena, allocation: None, profiler: None, poison: None })
    }

    pub fn phase(&self) -> Phase {
        if self.allocation.is_some() {
            Phase::Allocated
        } else {
            Phase::Created
        }
    }

    pub fn model(&self) -> &'a Model<'a> {
        self.model
    }

    fn allocated(&self) -> Result<&Allocation, InterpreterError> {
        self.allocation.as_ref().ok_or(InterpreterError::PhaseError { expected: Phase::Allocated, actual: Phase::Created })
    }

    /// Prepares every op, plans the nonpersistent buffers and reserves arena
    /// space. Leaves the arena untouched on failure.
    pub fn allocate_tensors(&mut self) -> Result<(), InterpreterError> {
        if self.allocation.is_some() {
            return Err(InterpreterError::PhaseError { expected: Phase::Created, actual: Phase::Allocated });
        }
        let model = self.model;
        let (registrations, scratch) = lifetimes::resolve_and_prepare(model, self.registry)?;
        let requests = build_requests(model, &scratch);

        let persistent_bytes = align16(
            model.tensors.len() * size_of::<Location>()
                + model.ops.len() * size_of::<Node>()
                + requests.requests.len() * size_of::<usize>(),
        );
        let temp_bytes = (requests.requests.len() * PLAN_RECORD_BYTES).max(1);

        let mut state = self.arena.state_mut();
        let mut sim: Arena = state.clone();
        let prior_reservation = sim.usage().nonpersistent_bytes;
        let (capacity, others) = (sim.capacity(), sim.capacity() - sim.tail());
        sim.reset_head(0).map_err(InterpreterError::Arena)?;

        let exhausted = |plan_size: usize| InterpreterError::ArenaExhausted {
            required: others + persistent_bytes + align16(plan_size).max(temp_bytes).max(prior_reservation),
            available: capacity,
        };
        sim.alloc_temp(temp_bytes, DEFAULT_ALIGN).map_err(|_| exhausted(0))?;
        let plan = match model.get_metadata(OFFLINE_MEMORY_PLAN) {
            Some(blob) => planner::plan_offline(&requests.requests, blob, DEFAULT_ALIGN)?,
            None => planner::plan_greedy(&requests.requests, DEFAULT_ALIGN),
        };
        sim.reset_temps();
        let violations = planner::validate_plan(&requests.requests, &plan);
        if !violations.is_empty() {
            return Err(PlannerError::PlanInvalid(violations).into());
        }
        sim.alloc_tail(persistent_bytes, DEFAULT_ALIGN).map_err(|_| exhausted(plan.arena_size))?;
        let reservation = align16(plan.arena_size).max(prior_reservation);
        if reservation > 0 {
            let base = sim.alloc_head(reservation, DEFAULT_ALIGN).map_err(|_| exhausted(plan.arena_size))?;
            debug_assert_eq!(base, 0);
        }
        *state = sim;
        drop(state);

        let mut locations: Vec<Location> = model
            .tensors
            .iter()
            .map(|t| match t.role {
                TensorRole::Const(b) => Location::Const(b),
                _ => Location::Arena(0),
            })
            .collect();
        let mut nodes: Vec<Node> =
            registrations.into_iter().map(|registration| Node { registration, scratch: ArrayVec::new() }).collect();
        for (request, source) in requests.requests.iter().zip(&requests.sources) {
            let offset = plan.offset_of(request.id).expect("validated plan covers every request");
            match *source {
                RequestSource::Tensor(t) => locations[t] = Location::Arena(offset),
                RequestSource::Scratch { op, .. } => nodes[op].scratch.push((offset, request.size)),
            }
        }
        if let Some(p) = &mut self.profiler {
            p.op_ticks = vec![0; model.ops.len()];
        }
        self.allocation = Some(Allocation { nodes, locations, requests, plan, persistent_bytes });
        Ok(())
    }

    /// Runs every op in order.
    ///
    /// Model inputs must be rewritten before each call: planning may reuse
    /// their bytes once their last consumer has run.
    pub fn invoke(&mut self) -> Result<(), InterpreterError> {
        let allocation = self.allocation.as_ref().ok_or(InterpreterError::PhaseError {
            expected: Phase::Allocated,
            actual: Phase::Created,
        })?;
        let model = self.model;
        let mut memory = self.arena.memory_mut_checked().ok_or(InterpreterError::ArenaBusy)?;
        let mut profiler = self.profiler.as_mut();
        let invoke_start = profiler.as_mut().map(|p| p.clock.now());

        if let Some(byte) = self.poison {
            poison_dead_regions(&mut memory, allocation, None, byte);
        }
        for (k, (entry, node)) in model.ops.iter().zip(&allocation.nodes).enumerate() {
            if let Some(byte) = self.poison {
                poison_op_outputs(&mut memory, model, allocation, k, byte);
            }
            let op_start = profiler.as_mut().map(|p| p.clock.now());
            let result = {
                let base = memory.as_mut_ptr();
                let mut inputs = ArrayVec::new();
                for &t in &entry.inputs {
                    let spec = &model.tensors[t];
                    let data = match allocation.locations[t] {
                        Location::Const(b) => &model.buffers[b][..],
                        // SAFETY: offsets come from a validated plan inside
                        // the reserved head region; regions live at op k are
                        // pairwise disjoint, so no mutable slice below
                        // aliases this one.
                        Location::Arena(offset) => unsafe { std::slice::from_raw_parts(base.add(offset), spec.byte_size()) },
                    };
                    inputs.push(TensorRef::from_spec(spec, data));
                }
                let mut outputs = ArrayVec::new();
                for &t in &entry.outputs {
                    let spec = &model.tensors[t];
                    let Location::Arena(offset) = allocation.locations[t] else { unreachable!("outputs are never const") };
                    // SAFETY: as above; validation guarantees an op never
                    // reads its own output.
                    let data = unsafe { std::slice::from_raw_parts_mut(base.add(offset), spec.byte_size()) };
                    outputs.push(TensorMut::from_spec(spec, data));
                }
                let mut scratch = ArrayVec::new();
                for &(offset, size) in &node.scratch {
                    // SAFETY: scratch requests are live only at op k and are
                    // disjoint from every other buffer live at k.
                    scratch.push(unsafe { std::slice::from_raw_parts_mut(base.add(offset), size) });
                }
                let mut ctx = EvalContext::new(&entry.params, inputs, outputs, scratch);
                (node.registration.eval)(&mut ctx)
            };
            if let (Some(p), Some(start)) = (profiler.as_mut(), op_start) {
                p.op_ticks[k] = p.clock.now().saturating_sub(start);
            }
            result.map_err(|source| InterpreterError::EvalFailed { op: k, opcode: entry.opcode(), source })?;
            if let Some(byte) = self.poison {
                poison_dead_regions(&mut memory, allocation, Some(k), byte);
            }
        }
        if let (Some(p), Some(start)) = (profiler, invoke_start) {
            let total = p.clock.now().saturating_sub(start);
            for (k, entry) in model.ops.iter().enumerate() {
                p.sink.record(ProfileEvent { op_index: Some(k), opcode: Some(entry.opcode()), duration: p.op_ticks[k] });
            }
            p.sink.record(ProfileEvent { op_index: None, opcode: None, duration: total });
        }
        Ok(())
    }

    /// Emits one event per op plus one whole-invoke event on every
    /// subsequent invoke.
    pub fn attach_profiler(&mut self, clock: Box<dyn Clock>, sink: Box<dyn ProfileSink>) {
        let op_ticks = vec![0; self.model.ops.len()];
        self.profiler = Some(Profiler { clock, sink, op_ticks });
    }

    pub fn detach_profiler(&mut self) {
        self.profiler = None;
    }

    /// Debugging aid: fill every buffer with `byte` outside the span the plan
    /// assigned to it, so a kernel that reads stale or not-yet-written bytes
    /// produces different results.
    pub fn set_poison(&mut self, byte: Option<u8>) {
        self.poison = byte;
    }

    fn io_range(&self, what: &'static str, list: &[usize], i: usize) -> Result<(&'a TensorSpec, Range<usize>), InterpreterError> {
        let allocation = self.allocated()?;
        let &t = list.get(i).ok_or(InterpreterError::IndexOutOfRange { what, index: i, count: list.len() })?;
        let spec = &self.model.tensors[t];
        let Location::Arena(offset) = allocation.locations[t] else { unreachable!("model inputs and outputs live in the arena") };
        Ok((spec, offset..offset + spec.byte_size()))
    }

    /// Writable view of model input `i`.
    pub fn input_view(&self, i: usize) -> Result<InputView<'_>, InterpreterError> {
        let (spec, range) = self.io_range("input", &self.model.inputs, i)?;
        let memory = self.arena.memory_mut_checked().ok_or(InterpreterError::ArenaBusy)?;
        Ok(InputView { spec, memory, range })
    }

    /// Readable view of model output `i`; contents are unspecified before
    /// the first successful invoke.
    pub fn output_view(&self, i: usize) -> Result<OutputView<'_>, InterpreterError> {
        let (spec, range) = self.io_range("output", &self.model.outputs, i)?;
        let memory = self.arena.memory_checked().ok_or(InterpreterError::ArenaBusy)?;
        Ok(OutputView { spec, memory, range })
    }

    /// Copies raw little-endian bytes into model input `i`.
    pub fn set_input(&self, i: usize, bytes: &[u8]) -> Result<(), InterpreterError> {
        let mut view = self.input_view(i)?;
        let have = view.bytes_mut().len();
        if bytes.len() != have {
            return Err(InterpreterError::IndexOutOfRange { what: "input byte", index: bytes.len(), count: have });
        }
        view.bytes_mut().copy_from_slice(bytes);
        Ok(())
    }

    pub fn output_bytes(&self, i: usize) -> Result<Vec<u8>, InterpreterError> {
        Ok(self.output_view(i)?.bytes().to_vec())
    }

    pub fn memory_report(&self) -> Result<MemoryReport, InterpreterError> {
        let a = self.allocated()?;
        Ok(MemoryReport {
            persistent_bytes: a.persistent_bytes,
            nonpersistent_bytes: a.plan.arena_size,
            total_bytes: a.persistent_bytes + a.plan.arena_size,
        })
    }

    pub fn plan(&self) -> Option<&MemoryPlan> {
        self.allocation.as_ref().map(|a| &a.plan)
    }

    pub fn requests(&self) -> Option<&RequestSet> {
        self.allocation.as_ref().map(|a| &a.requests)
    }

    /// Arena offset of a non-constant tensor once allocated.
    pub fn tensor_offset(&self, tensor: usize) -> Option<usize> {
        match self.allocation.as_ref()?.locations.get(tensor)? {
            Location::Arena(offset) => Some(*offset),
            Location::Const(_) => None,
        }
    }
}

/// Before op `k`: poison its output and scratch regions.
fn poison_op_outputs(memory: &mut [u8], model: &Model<'_>, allocation: &Allocation, k: usize, byte: u8) {
    for &t in &model.ops[k].outputs {
        if let Location::Arena(offset) = allocation.locations[t] {
            memory[offset..offset + model.tensors[t].byte_size()].fill(byte);
        }
    }
    for &(offset, size) in &allocation.nodes[k].scratch {
        memory[offset..offset + size].fill(byte);
    }
}

/// After op `k`: poison every buffer whose last use was op `k`.
///
/// Before the first op (`k` is `None`): poison scratch and every buffer not
/// yet produced, sparing bytes shared with model inputs, which are live on
/// entry and may alias buffers produced later.
fn poison_dead_regions(memory: &mut [u8], allocation: &Allocation, k: Option<usize>, byte: u8) {
    let region = |r: &AllocationRequest| {
        let offset = allocation.plan.offset_of(r.id).expect("plan covers every request");
        offset..offset + r.size
    };
    let pairs = || allocation.requests.requests.iter().zip(&allocation.requests.sources);
    let live_on_entry: Vec<Range<usize>> = match k {
        Some(_) => Vec::new(),
        None => pairs()
            .filter(|(r, s)| matches!(s, RequestSource::Tensor(_)) && r.first_use == 0)
            .map(|(r, _)| region(r))
            .collect(),
    };
    for (r, source) in pairs() {
        let dead = match k {
            Some(k) => r.last_use == k,
            None => !matches!(source, RequestSource::Tensor(_)) || r.first_use > 0,
        };
        if !dead {
            continue;
        }
        let span = region(r);
        for i in span {
            if !live_on_entry.iter().any(|l| l.contains(&i)) {
                memory[i] = byte;
            }
        }
    }
}

pub struct InputView<'i> {
    spec: &'i TensorSpec,
    memory: RefMut<'i, Box<[u8]>>,
    range: Range<usize>,
}

impl InputView<'_> {
    pub fn spec(&self) -> &TensorSpec {
        self.spec
    }

    pub fn bytes_mut(&mut self) -> &mut [u8] {
        &mut self.memory[self.range.clone()]
    }

    pub fn tensor(&mut self) -> TensorMut<'_> {
        TensorMut::from_spec(self.spec, &mut self.memory[self.range.clone()])
    }
}

pub struct OutputView<'i> {
    spec: &'i TensorSpec,
    memory: Ref<'i, Box<[u8]>>,
    range: Range<usize>,
}

impl OutputView<'_> {
    pub fn spec(&self) -> &TensorSpec {
        self.spec
    }

    pub fn bytes(&self) -> &[u8] {
        &self.memory[self.range.clone()]
    }

    pub fn tensor(&self) -> TensorRef<'_> {
        TensorRef::from_spec(self.spec, &self.memory[self.range.clone()])
    }
}
