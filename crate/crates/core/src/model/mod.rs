//! In-memory model representation.
//!
//! A [`Model`] is an immutable graph: a tensor table, an operator list that is
//! already in execution order, constant buffers and a metadata map. Models
//! parsed from `.mico` bytes borrow their constant buffers from the input
//! slice, so loading never copies weights.

use std::borrow::Cow;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub mod format;
pub mod json;
pub mod op;
pub mod validate;

pub use format::{parse_model, serialize_model, FormatError};
pub use op::{
    Activation, AddParams, ConvParams, FullyConnectedParams, OpParams, Opcode, Padding,
    PoolParams, ReshapeParams, SoftmaxParams,
};
pub use validate::{validate_model, ValidationReport, Violation, ViolationKind};

/// Current `.mico` format version.
pub const MODEL_VERSION: u16 = 1;

/// Maximum tensor rank. Rank-4 tensors are NHWC.
pub const MAX_RANK: usize = 4;

/// Metadata key holding a host-computed memory plan.
pub const OFFLINE_MEMORY_PLAN: &str = "OFFLINE_MEMORY_PLAN";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    I8,
    I32,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::F32 | DType::I32 => 4,
            DType::I8 => 1,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I8 => 1,
            DType::I32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I8),
            2 => Some(DType::I32),
            _ => None,
        }
    }
}

/// Affine per-tensor quantization: `real = scale * (q - zero_point)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Self {
        QuantParams { scale, zero_point }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    /// Constant data stored in the given model buffer.
    Const(usize),
    ModelInput,
    ModelOutput,
    Intermediate,
}

impl TensorRole {
    pub fn is_const(self) -> bool {
        matches!(self, TensorRole::Const(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantParams>,
}

impl TensorSpec {
    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn byte_size(&self) -> usize {
        self.num_elements() * self.dtype.width()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpEntry {
    #[serde(flatten)]
    pub params: OpParams,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
}

impl OpEntry {
    pub fn new(params: OpParams, inputs: Vec<usize>, outputs: Vec<usize>) -> Self {
        OpEntry { params, inputs, outputs }
    }

    pub fn opcode(&self) -> Opcode {
        self.params.opcode()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model<'a> {
    pub version: u16,
    pub tensors: Vec<TensorSpec>,
    pub ops: Vec<OpEntry>,
    #[serde(with = "json::blob_list")]
    pub buffers: Vec<Cow<'a, [u8]>>,
    pub inputs: Vec<usize>,
    pub outputs: Vec<usize>,
    #[serde(with = "json::blob_map", default)]
    pub metadata: IndexMap<String, Vec<u8>>,
}

impl Default for Model<'_> {
    fn default() -> Self {
        Model {
            version: MODEL_VERSION,
            tensors: Vec::new(),
            ops: Vec::new(),
            buffers: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            metadata: IndexMap::new(),
        }
    }
}

impl<'a> Model<'a> {
    /// Exact-match metadata lookup.
    pub fn get_metadata(&self, key: &str) -> Option<&[u8]> {
        self.metadata.get(key).map(Vec::as_slice)
    }

    /// Replaces any existing value under `key`, keeping its position.
    pub fn set_metadata(&mut self, key: impl Into<String>, value: Vec<u8>) {
        self.metadata.insert(key.into(), value);
    }

    pub fn into_owned(self) -> Model<'static> {
        Model {
            version: self.version,
            tensors: self.tensors,
            ops: self.ops,
            buffers: self.buffers.into_iter().map(|b| Cow::Owned(b.into_owned())).collect(),
            inputs: self.inputs,
            outputs: self.outputs,
            metadata: self.metadata,
        }
    }

    /// Bytes of a constant tensor, if `tensor` is one and its buffer exists.
    pub fn const_data(&self, tensor: usize) -> Option<&[u8]> {
        match self.tensors.get(tensor)?.role {
            TensorRole::Const(b) => self.buffers.get(b).map(|c| c.as_ref()),
            _ => None,
        }
    }

    /// Index of the op producing `tensor`, if any.
    pub fn producer_of(&self, tensor: usize) -> Option<usize> {
        self.ops.iter().position(|op| op.outputs.contains(&tensor))
    }
}

/// Free-function form of [`Model::get_metadata`].
pub fn get_metadata<'m>(model: &'m Model<'_>, key: &str) -> Option<&'m [u8]> {
    model.get_metadata(key)
}
