//! The `.mico` binary model format.
//!
//! Everything is little-endian. The file is a fixed header, a run of record
//! sections, and a blob section holding constant buffers:
//!
//! ```text
//! header      "MICO" u16 version=1 u16 flags=0
//!             u32 n_tensors u32 n_ops u32 n_buffers
//!             u32 n_inputs  u32 n_outputs u32 n_metadata        (32 bytes)
//! tensors     str name, u8 dtype, u8 rank, rank x u32 extent,
//!             u8 role [u32 buffer_index if role == Const],
//!             u8 has_quant [f32 scale, i32 zero_point if has_quant == 1]
//! ops         u8 opcode, u8 n_in, n_in x u32, u8 n_out, n_out x u32,
//!             opcode-specific params (see below)
//! buffers     u32 file_offset, u32 length
//! inputs      u32 tensor index
//! outputs     u32 tensor index
//! metadata    str key, u32 length, length bytes
//! (zero pad to a 16-byte boundary)
//! blobs       each buffer at its recorded offset, 16-byte aligned
//! ```
//!
//! Strings are `u16 length` followed by UTF-8 bytes. Codes: dtype F32=0 I8=1
//! I32=2; role Const=0 ModelInput=1 ModelOutput=2 Intermediate=3; padding
//! VALID=0 SAME=1; activation NONE=0 RELU=1.
//!
//! Op params:
//!
//! ```text
//! CONV_2D, DEPTHWISE_CONV_2D   u32 stride_h, u32 stride_w, u8 padding,
//!                              u8 activation, u32 depth_multiplier
//! FULLY_CONNECTED, ADD         u8 activation
//! MAX_POOL_2D, AVG_POOL_2D     u32 filter_h, u32 filter_w, u32 stride_h,
//!                              u32 stride_w, u8 padding, u8 activation
//! SOFTMAX                      i32 axis
//! RESHAPE                      u8 rank, rank x u32 extent
//! RELU, QUANTIZE, DEQUANTIZE   (none)
//! ```

use std::borrow::Cow;

use indexmap::IndexMap;
use thiserror::Error;

use super::op::*;
use super::validate::{validate_model, Violation};
use super::{DType, Model, OpEntry, QuantParams, TensorRole, TensorSpec, MAX_RANK, MODEL_VERSION};

pub const MAGIC: [u8; 4] = *b"MICO";
pub const HEADER_LEN: usize = 32;
pub const BLOB_ALIGN: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated file: need {needed} bytes at offset {offset}, file has {len}")]
    TruncatedFile { offset: usize, needed: usize, len: usize },
    #[error("{what} index {index} out of range (count {count})")]
    IndexOutOfRange { what: &'static str, index: usize, count: usize },
    #[error("malformed record: {0}")]
    MalformedRecord(String),
    #[error("invalid model: {}", summarize(.0))]
    InvalidModel(Vec<Violation>),
}

fn summarize(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::MalformedRecord(msg.into())
}

/// Serializes a model. Output is a pure function of the model's content.
pub fn serialize_model(model: &Model<'_>) -> Result<Vec<u8>, FormatError> {
    let report = validate_model(model);
    if !report.is_valid() {
        return Err(FormatError::InvalidModel(report.violations));
    }
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u16(MODEL_VERSION);
    w.u16(0);
    for count in [
        model.tensors.len(),
        model.ops.len(),
        model.buffers.len(),
        model.inputs.len(),
        model.outputs.len(),
        model.metadata.len(),
    ] {
        w.u32(count as u32);
    }

    for t in &model.tensors {
        w.str(&t.name);
        w.u8(t.dtype.code());
        w.u8(t.shape.len() as u8);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        match t.role {
            TensorRole::Const(b) => {
                w.u8(0);
                w.u32(b as u32);
            }
            TensorRole::ModelInput => w.u8(1),
            TensorRole::ModelOutput => w.u8(2),
            TensorRole::Intermediate => w.u8(3),
        }
        match t.quant {
            Some(q) => {
                w.u8(1);
                w.f32(q.scale);
                w.i32(q.zero_point);
            }
            None => w.u8(0),
        }
    }

    for op in &model.ops {
        w.u8(op.opcode().code());
        w.u8(op.inputs.len() as u8);
        op.inputs.iter().for_each(|&i| w.u32(i as u32));
        w.u8(op.outputs.len() as u8);
        op.outputs.iter().for_each(|&i| w.u32(i as u32));
        write_params(&mut w, &op.params);
    }

    // Buffer offsets depend on where the record sections end; patch them after.
    let mut offset_slots = Vec::with_capacity(model.buffers.len());
    for b in &model.buffers {
        offset_slots.push(w.buf.len());
        w.u32(0);
        w.u32(b.len() as u32);
    }
    model.inputs.iter().for_each(|&i| w.u32(i as u32));
    model.outputs.iter().for_each(|&i| w.u32(i as u32));
    for (k, v) in &model.metadata {
        w.str(k);
        w.u32(v.len() as u32);
        w.bytes(v);
    }

    w.pad_to(BLOB_ALIGN);
    for (slot, b) in offset_slots.into_iter().zip(&model.buffers) {
        w.pad_to(BLOB_ALIGN);
        let offset = w.buf.len() as u32;
        w.buf[slot..slot + 4].copy_from_slice(&offset.to_le_bytes());
        w.bytes(b);
    }
    Ok(w.buf)
}

fn write_params(w: &mut Writer, params: &OpParams) {
    match params {
        OpParams::Conv2d(p) | OpParams::DepthwiseConv2d(p) => {
            w.u32(p.stride_h as u32);
            w.u32(p.stride_w as u32);
            w.u8(p.padding.code());
            w.u8(p.fused_activation.code());
            w.u32(p.depth_multiplier as u32);
        }
        OpParams::FullyConnected(p) => w.u8(p.fused_activation.code()),
        OpParams::Add(p) => w.u8(p.fused_activation.code()),
        OpParams::MaxPool2d(p) | OpParams::AvgPool2d(p) => {
            w.u32(p.filter_h as u32);
            w.u32(p.filter_w as u32);
            w.u32(p.stride_h as u32);
            w.u32(p.stride_w as u32);
            w.u8(p.padding.code());
            w.u8(p.fused_activation.code());
        }
        OpParams::Softmax(p) => w.i32(p.axis),
        OpParams::Reshape(p) => {
            w.u8(p.new_shape.len() as u8);
            p.new_shape.iter().for_each(|&d| w.u32(d as u32));
        }
        OpParams::Relu | OpParams::Quantize | OpParams::Dequantize => {}
    }
}

/// Parses a `.mico` file. Constant buffers borrow from `bytes`.
///
/// Structure and index bounds are checked here; graph semantics (topological
/// order, shapes, quantization) are left to [`validate_model`].
pub fn parse_model(bytes: &[u8]) -> Result<Model<'_>, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("took 4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let flags = r.u16()?;
    if flags != 0 {
        return Err(malformed(format!("nonzero flags {flags:#06x}")));
    }
    let n_tensors = r.u32()? as usize;
    let n_ops = r.u32()? as usize;
    let n_buffers = r.u32()? as usize;
    let n_inputs = r.u32()? as usize;
    let n_outputs = r.u32()? as usize;
    let n_metadata = r.u32()? as usize;

    // Counts come from untrusted input; never preallocate more than the
    // remaining bytes could possibly describe.
    let cap = |n: usize, min_record: usize| n.min(r_remaining(bytes, HEADER_LEN) / min_record);

    let mut tensors = Vec::with_capacity(cap(n_tensors, 5));
    for _ in 0..n_tensors {
        let name = r.str()?;
        let dtype_code = r.u8()?;
        let dtype = DType::from_code(dtype_code).ok_or_else(|| malformed(format!("unknown dtype code {dtype_code}")))?;
        let shape = r.shape()?;
        let role = match r.u8()? {
            0 => {
                let b = r.u32()? as usize;
                if b >= n_buffers {
                    return Err(FormatError::IndexOutOfRange { what: "buffer", index: b, count: n_buffers });
                }
                TensorRole::Const(b)
            }
            1 => TensorRole::ModelInput,
            2 => TensorRole::ModelOutput,
            3 => TensorRole::Intermediate,
            other => return Err(malformed(format!("unknown tensor role {other}"))),
        };
        let quant = match r.u8()? {
            0 => None,
            1 => Some(QuantParams { scale: r.f32()?, zero_point: r.i32()? }),
            other => return Err(malformed(format!("bad quant flag {other}"))),
        };
        tensors.push(TensorSpec { name, dtype, shape, role, quant });
    }

    let tensor_index = |i: u32| -> Result<usize, FormatError> {
        let i = i as usize;
        if i < n_tensors {
            Ok(i)
        } else {
            Err(FormatError::IndexOutOfRange { what: "tensor", index: i, count: n_tensors })
        }
    };

    let mut ops = Vec::with_capacity(cap(n_ops, 3));
    for _ in 0..n_ops {
        let code = r.u8()?;
        let opcode = Opcode::from_code(code).ok_or_else(|| malformed(format!("unknown opcode {code}")))?;
        let n_in = r.u8()? as usize;
        let inputs = (0..n_in).map(|_| r.u32().and_then(tensor_index)).collect::<Result<Vec<_>, _>>()?;
        let n_out = r.u8()? as usize;
        let outputs = (0..n_out).map(|_| r.u32().and_then(tensor_index)).collect::<Result<Vec<_>, _>>()?;
        let params = read_params(&mut r, opcode)?;
        ops.push(OpEntry { params, inputs, outputs });
    }

    let mut buffer_records = Vec::with_capacity(cap(n_buffers, 8));
    for _ in 0..n_buffers {
        let offset = r.u32()? as usize;
        let len = r.u32()? as usize;
        buffer_records.push((offset, len));
    }
    let inputs = (0..n_inputs).map(|_| r.u32().and_then(tensor_index)).collect::<Result<Vec<_>, _>>()?;
    let outputs = (0..n_outputs).map(|_| r.u32().and_then(tensor_index)).collect::<Result<Vec<_>, _>>()?;

    let mut metadata = IndexMap::with_capacity(cap(n_metadata, 6));
    for _ in 0..n_metadata {
        let key = r.str()?;
        let len = r.u32()? as usize;
        let value = r.take(len)?.to_vec();
        if metadata.insert(key.clone(), value).is_some() {
            return Err(malformed(format!("duplicate metadata key {key:?}")));
        }
    }

    let blob_start = r.pos.next_multiple_of(BLOB_ALIGN);
    let mut buffers = Vec::with_capacity(buffer_records.len());
    for (i, (offset, len)) in buffer_records.into_iter().enumerate() {
        if offset % BLOB_ALIGN != 0 || offset < blob_start {
            return Err(malformed(format!("buffer {i} at bad offset {offset}")));
        }
        let end = offset.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(FormatError::TruncatedFile {
            offset,
            needed: len,
            len: bytes.len(),
        })?;
        buffers.push(Cow::Borrowed(&bytes[offset..end]));
    }

    Ok(Model { version, tensors, ops, buffers, inputs, outputs, metadata })
}

fn r_remaining(bytes: &[u8], from: usize) -> usize {
    bytes.len().saturating_sub(from)
}

fn read_params(r: &mut Reader<'_>, opcode: Opcode) -> Result<OpParams, FormatError> {
    let padding = |code: u8| Padding::from_code(code).ok_or_else(|| malformed(format!("bad padding code {code}")));
    let activation =
        |code: u8| Activation::from_code(code).ok_or_else(|| malformed(format!("bad activation code {code}")));
    Ok(match opcode {
        Opcode::Conv2d | Opcode::DepthwiseConv2d => {
            let p = ConvParams {
                stride_h: r.u32()? as usize,
                stride_w: r.u32()? as usize,
                padding: padding(r.u8()?)?,
                fused_activation: activation(r.u8()?)?,
                depth_multiplier: r.u32()? as usize,
            };
            if opcode == Opcode::Conv2d {
                OpParams::Conv2d(p)
            } else {
                OpParams::DepthwiseConv2d(p)
            }
        }
        Opcode::FullyConnected => {
            OpParams::FullyConnected(FullyConnectedParams { fused_activation: activation(r.u8()?)? })
        }
        Opcode::Add => OpParams::Add(AddParams { fused_activation: activation(r.u8()?)? }),
        Opcode::MaxPool2d | Opcode::AvgPool2d => {
            let p = PoolParams {
                filter_h: r.u32()? as usize,
                filter_w: r.u32()? as usize,
                stride_h: r.u32()? as usize,
                stride_w: r.u32()? as usize,
                padding: padding(r.u8()?)?,
                fused_activation: activation(r.u8()?)?,
            };
            if opcode == Opcode::MaxPool2d {
                OpParams::MaxPool2d(p)
            } else {
                OpParams::AvgPool2d(p)
            }
        }
        Opcode::Softmax => OpParams::Softmax(SoftmaxParams { axis: r.i32()? }),
        Opcode::Reshape => OpParams::Reshape(ReshapeParams { new_shape: r.shape()? }),
        Opcode::Relu => OpParams::Relu,
        Opcode::Quantize => OpParams::Quantize,
        Opcode::Dequantize => OpParams::Dequantize,
    })
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u16(s.len() as u16);
        self.bytes(s.as_bytes());
    }
    fn pad_to(&mut self, align: usize) {
        let len = self.buf.len().next_multiple_of(align);
        self.buf.resize(len, 0);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(FormatError::TruncatedFile {
            offset: self.pos,
            needed: n,
            len: self.bytes.len(),
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        Ok(self.take(N)?.try_into().expect("took N bytes"))
    }
    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, FormatError> {
        self.array().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> Result<u32, FormatError> {
        self.array().map(u32::from_le_bytes)
    }
    fn i32(&mut self) -> Result<i32, FormatError> {
        self.array().map(i32::from_le_bytes)
    }
    fn f32(&mut self) -> Result<f32, FormatError> {
        self.array().map(f32::from_le_bytes)
    }
    fn str(&mut self) -> Result<String, FormatError> {
        let len = self.u16()? as usize;
        let raw = self.take(len)?;
        std::str::from_utf8(raw).map(str::to_owned).map_err(|_| malformed("string is not UTF-8"))
    }
    fn shape(&mut self) -> Result<Vec<usize>, FormatError> {
        let rank = self.u8()? as usize;
        if rank > MAX_RANK {
            return Err(malformed(format!("rank {rank} exceeds {MAX_RANK}")));
        }
        (0..rank).map(|_| self.u32().map(|d| d as usize)).collect()
    }
}
