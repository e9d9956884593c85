//! `MTEN` tensor files: a 24-byte header followed by the raw little-endian
//! payload.
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `MTEN`                       |
//! | 4      | 1    | dtype code (0 F32, 1 I8, 2 I32)    |
//! | 5      | 1    | rank, at most 4                    |
//! | 6      | 2    | zero padding                       |
//! | 8      | 16   | four u32 dims, unused ones zero    |
//!
//! Quantization parameters are not stored; the model supplies them.

use std::path::Path;

use thiserror::Error;

use crate::model::{DType, MAX_RANK};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"MTEN";
pub const TENSOR_HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a tensor file (bad magic)")]
    BadMagic,
    #[error("tensor file truncated: {0} bytes")]
    Truncated(usize),
    #[error("unknown dtype code {0}")]
    BadDType(u8),
    #[error("bad rank or dims: {0}")]
    BadShape(String),
    #[error("payload is {got} bytes, shape needs {expected}")]
    PayloadSize { expected: usize, got: usize },
}

pub fn encode_tensor(dtype: DType, shape: &[usize], payload: &[u8]) -> Result<Vec<u8>, TensorFileError> {
    if shape.len() > MAX_RANK || shape.iter().any(|&d| d == 0 || d > u32::MAX as usize) {
        return Err(TensorFileError::BadShape(format!("{shape:?}")));
    }
    let expected = shape.iter().product::<usize>() * dtype.width();
    if payload.len() != expected {
        return Err(TensorFileError::PayloadSize { expected, got: payload.len() });
    }
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + payload.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(dtype.code());
    out.push(shape.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for i in 0..MAX_RANK {
        out.extend_from_slice(&(shape.get(i).copied().unwrap_or(0) as u32).to_le_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, TensorFileError> {
    if bytes.len() < TENSOR_HEADER_LEN {
        return Err(TensorFileError::Truncated(bytes.len()));
    }
    if bytes[..4] != TENSOR_MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let dtype = DType::from_code(bytes[4]).ok_or(TensorFileError::BadDType(bytes[4]))?;
    let rank = bytes[5] as usize;
    if rank > MAX_RANK {
        return Err(TensorFileError::BadShape(format!("rank {rank}")));
    }
    let dims: Vec<usize> = bytes[8..24]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")) as usize)
        .collect();
    let shape = dims[..rank].to_vec();
    if shape.contains(&0) || dims[rank..].iter().any(|&d| d != 0) {
        return Err(TensorFileError::BadShape(format!("{dims:?} with rank {rank}")));
    }
    let expected = shape
        .iter()
        .try_fold(dtype.width(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorFileError::BadShape(format!("{shape:?} overflows")))?;
    let payload = &bytes[TENSOR_HEADER_LEN..];
    if payload.len() != expected {
        return Err(TensorFileError::PayloadSize { expected, got: payload.len() });
    }
    Ok(Tensor { dtype, shape, quant: None, data: payload.to_vec() })
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Tensor, TensorFileError> {
    decode_tensor(&std::fs::read(path)?)
}

pub fn write_tensor_file(path: impl AsRef<Path>, tensor: &Tensor) -> Result<(), TensorFileError> {
    std::fs::write(path, encode_tensor(tensor.dtype, &tensor.shape, &tensor.data)?)?;
    Ok(())
}
