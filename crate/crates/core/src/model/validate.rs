//! Structural and semantic model checks. Violations are collected as data.

use std::fmt;

use super::{DType, Model, Opcode, TensorRole, TensorSpec, MAX_RANK, MODEL_VERSION, OFFLINE_MEMORY_PLAN};
use crate::kernels;
use crate::planner;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    Version,
    IndexOutOfRange,
    UseBeforeDef,
    MultipleProducers,
    Tensor,
    ConstBuffer,
    Quantization,
    Operator,
    ModelIo,
    Metadata,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::Version => "version",
            ViolationKind::IndexOutOfRange => "index out of range",
            ViolationKind::UseBeforeDef => "use-before-def",
            ViolationKind::MultipleProducers => "multiple producers",
            ViolationKind::Tensor => "bad tensor",
            ViolationKind::ConstBuffer => "bad const buffer",
            ViolationKind::Quantization => "bad quantization",
            ViolationKind::Operator => "bad operator",
            ViolationKind::ModelIo => "bad model io",
            ViolationKind::Metadata => "bad metadata",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, message: impl Into<String>) {
        self.violations.push(Violation { kind, message: message.into() });
    }
}

/// Byte size representable in the format's u32 offsets and lengths.
fn fits(t: &TensorSpec) -> bool {
    t.shape.iter().try_fold(t.dtype.width(), |acc, &d| acc.checked_mul(d)).is_some_and(|n| n <= u32::MAX as usize)
}

/// Checks every model and op-entry invariant, including topological order.
pub fn validate_model(model: &Model<'_>) -> ValidationReport {
    let mut report = ValidationReport::default();
    use ViolationKind::*;

    if model.version != MODEL_VERSION {
        report.push(Version, format!("version {} (expected {MODEL_VERSION})", model.version));
    }

    let n_tensors = model.tensors.len();
    for (i, t) in model.tensors.iter().enumerate() {
        if t.shape.len() > MAX_RANK {
            report.push(Tensor, format!("tensor {i} ({}) has rank {}", t.name, t.shape.len()));
        }
        if t.shape.contains(&0) {
            report.push(Tensor, format!("tensor {i} ({}) has a zero extent", t.name));
        }
        if !fits(t) {
            report.push(Tensor, format!("tensor {i} ({}) {:?} exceeds {} bytes", t.name, t.shape, u32::MAX));
            continue;
        }
        if let TensorRole::Const(b) = t.role {
            match model.buffers.get(b) {
                None => report.push(IndexOutOfRange, format!("tensor {i} references buffer {b}")),
                Some(buf) if buf.len() != t.byte_size() => report.push(
                    ConstBuffer,
                    format!("tensor {i} ({}) needs {} bytes, buffer {b} has {}", t.name, t.byte_size(), buf.len()),
                ),
                Some(_) => {}
            }
        } else if t.dtype == DType::I32 {
            report.push(Tensor, format!("tensor {i} ({}): I32 tensors must be constant", t.name));
        }
        match (t.dtype, t.quant) {
            (DType::F32, Some(_)) => report.push(Quantization, format!("F32 tensor {i} carries quant params")),
            (DType::I8, None) => report.push(Quantization, format!("I8 tensor {i} has no quant params")),
            (DType::I8, Some(q)) => {
                if !(q.scale.is_finite() && q.scale > 0.0) {
                    report.push(Quantization, format!("tensor {i} scale {} is not positive", q.scale));
                }
                if !(-128..=127).contains(&q.zero_point) {
                    report.push(Quantization, format!("tensor {i} zero point {} outside int8", q.zero_point));
                }
            }
            (DType::I32, Some(q)) => {
                if !(q.scale.is_finite() && q.scale > 0.0) || q.zero_point != 0 {
                    report.push(Quantization, format!("I32 tensor {i} needs positive scale and zero point 0"));
                }
            }
            _ => {}
        }
    }

    check_io(model, &mut report);

    let mut producer: Vec<Option<usize>> = vec![None; n_tensors];
    for (k, op) in model.ops.iter().enumerate() {
        let out_of_range: Vec<usize> =
            op.inputs.iter().chain(&op.outputs).copied().filter(|&t| t >= n_tensors).collect();
        if !out_of_range.is_empty() {
            report.push(IndexOutOfRange, format!("op {k} references tensors {out_of_range:?} (count {n_tensors})"));
            continue;
        }
        for &t in &op.inputs {
            match model.tensors[t].role {
                TensorRole::Const(_) | TensorRole::ModelInput => {}
                _ if producer[t].is_none() => {
                    report.push(UseBeforeDef, format!("op {k} reads tensor {t} before any op produces it"))
                }
                _ => {}
            }
        }
        for &t in &op.outputs {
            match model.tensors[t].role {
                TensorRole::Intermediate | TensorRole::ModelOutput => {}
                role => report.push(Operator, format!("op {k} writes tensor {t} with role {role:?}")),
            }
            if let Some(first) = producer[t] {
                report.push(MultipleProducers, format!("tensor {t} written by op {first} and op {k}"));
            } else {
                producer[t] = Some(k);
            }
        }
        // oversized tensors were reported above; their shapes are not safe to do arithmetic on
        if op.inputs.iter().chain(&op.outputs).all(|&t| fits(&model.tensors[t])) {
            check_operator(model, k, &mut report);
        }
    }

    for (i, t) in model.tensors.iter().enumerate() {
        if t.role == TensorRole::ModelOutput && producer[i].is_none() {
            report.push(ModelIo, format!("model output {i} ({}) is never produced", t.name));
        }
    }
    check_i32_usage(model, &mut report);

    if let Some(blob) = model.get_metadata(OFFLINE_MEMORY_PLAN) {
        if let Err(e) = planner::decode_offsets(blob) {
            report.push(Metadata, format!("{OFFLINE_MEMORY_PLAN}: {e}"));
        }
    }
    report
}

fn check_io(model: &Model<'_>, report: &mut ValidationReport) {
    let n = model.tensors.len();
    for (list, role, label) in [
        (&model.inputs, TensorRole::ModelInput, "input"),
        (&model.outputs, TensorRole::ModelOutput, "output"),
    ] {
        for (pos, &t) in list.iter().enumerate() {
            if t >= n {
                report.push(ViolationKind::IndexOutOfRange, format!("model {label} {pos} is tensor {t} (count {n})"));
            } else if model.tensors[t].role != role {
                report.push(ViolationKind::ModelIo, format!("model {label} {pos} (tensor {t}) has role {:?}", model.tensors[t].role));
            }
            if list[..pos].contains(&t) {
                report.push(ViolationKind::ModelIo, format!("tensor {t} listed twice as model {label}"));
            }
        }
        for (i, spec) in model.tensors.iter().enumerate() {
            if spec.role == role && !list.contains(&i) {
                report.push(ViolationKind::ModelIo, format!("tensor {i} has role {role:?} but is not a model {label}"));
            }
        }
    }
}

fn check_operator(model: &Model<'_>, k: usize, report: &mut ValidationReport) {
    let op = &model.ops[k];
    let inputs: Vec<_> = op.inputs.iter().map(|&t| &model.tensors[t]).collect();
    let outputs: Vec<_> = op.outputs.iter().map(|&t| &model.tensors[t]).collect();
    if let Err(e) = kernels::check_op(&op.params, &inputs, &outputs) {
        report.push(ViolationKind::Operator, format!("op {k} ({}): {e}", op.opcode()));
    }
}

fn check_i32_usage(model: &Model<'_>, report: &mut ValidationReport) {
    for (k, op) in model.ops.iter().enumerate() {
        for (slot, &t) in op.inputs.iter().enumerate() {
            let Some(spec) = model.tensors.get(t) else { continue };
            if spec.dtype != DType::I32 {
                continue;
            }
            let is_bias = slot == 2
                && matches!(op.opcode(), Opcode::Conv2d | Opcode::DepthwiseConv2d | Opcode::FullyConnected);
            if !is_bias {
                report.push(ViolationKind::Tensor, format!("op {k} uses I32 tensor {t} outside a bias slot"));
            }
        }
    }
}
