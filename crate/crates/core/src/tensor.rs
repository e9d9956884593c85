//! Byte-backed tensor views and an owned tensor for host-side work.
//!
//! Tensor data lives in arena memory or in a model's constant blobs, neither
//! of which guarantees element alignment, so elements are decoded from
//! little-endian bytes on access.

use crate::model::{DType, QuantParams, TensorSpec};

#[derive(Debug, Clone, Copy)]
pub struct TensorRef<'a> {
    pub dtype: DType,
    pub shape: &'a [usize],
    pub quant: Option<QuantParams>,
    pub data: &'a [u8],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub dtype: DType,
    pub shape: &'a [usize],
    pub quant: Option<QuantParams>,
    pub data: &'a mut [u8],
}

#[inline]
fn word(data: &[u8], i: usize) -> [u8; 4] {
    let b = &data[i * 4..i * 4 + 4];
    [b[0], b[1], b[2], b[3]]
}

impl<'a> TensorRef<'a> {
    pub fn from_spec(spec: &'a TensorSpec, data: &'a [u8]) -> Self {
        TensorRef { dtype: spec.dtype, shape: &spec.shape, quant: spec.quant, data }
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    /// True when the byte length agrees with shape and dtype.
    pub fn is_consistent(&self) -> bool {
        self.data.len() == self.num_elements() * self.dtype.width()
    }

    #[inline]
    pub fn f32_at(&self, i: usize) -> f32 {
        f32::from_le_bytes(word(self.data, i))
    }

    #[inline]
    pub fn i8_at(&self, i: usize) -> i8 {
        self.data[i] as i8
    }

    #[inline]
    pub fn i32_at(&self, i: usize) -> i32 {
        i32::from_le_bytes(word(self.data, i))
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        (0..self.num_elements()).map(|i| self.f32_at(i)).collect()
    }

    pub fn to_i8_vec(&self) -> Vec<i8> {
        self.data.iter().map(|&b| b as i8).collect()
    }

    pub fn to_i32_vec(&self) -> Vec<i32> {
        (0..self.num_elements()).map(|i| self.i32_at(i)).collect()
    }
}

impl<'a> TensorMut<'a> {
    pub fn from_spec(spec: &'a TensorSpec, data: &'a mut [u8]) -> Self {
        TensorMut { dtype: spec.dtype, shape: &spec.shape, quant: spec.quant, data }
    }

    pub fn as_ref(&self) -> TensorRef<'_> {
        TensorRef { dtype: self.dtype, shape: self.shape, quant: self.quant, data: self.data }
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    #[inline]
    pub fn set_f32(&mut self, i: usize, v: f32) {
        self.data[i * 4..i * 4 + 4].copy_from_slice(&v.to_le_bytes());
    }

    #[inline]
    pub fn set_i8(&mut self, i: usize, v: i8) {
        self.data[i] = v as u8;
    }

    pub fn fill_f32(&mut self, values: &[f32]) {
        for (i, &v) in values.iter().enumerate() {
            self.set_f32(i, v);
        }
    }

    pub fn fill_i8(&mut self, values: &[i8]) {
        for (i, &v) in values.iter().enumerate() {
            self.set_i8(i, v);
        }
    }
}

/// Owned tensor, used by tests, the converter and the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub quant: Option<QuantParams>,
    pub data: Vec<u8>,
}

impl Tensor {
    pub fn zeros(dtype: DType, shape: &[usize], quant: Option<QuantParams>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { dtype, shape: shape.to_vec(), quant, data: vec![0; n * dtype.width()] }
    }

    pub fn from_f32(shape: &[usize], values: &[f32]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
        Tensor {
            dtype: DType::F32,
            shape: shape.to_vec(),
            quant: None,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_i8(shape: &[usize], values: &[i8], quant: QuantParams) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
        Tensor {
            dtype: DType::I8,
            shape: shape.to_vec(),
            quant: Some(quant),
            data: values.iter().map(|&v| v as u8).collect(),
        }
    }

    pub fn from_i32(shape: &[usize], values: &[i32], quant: Option<QuantParams>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len(), "shape does not match data");
        Tensor {
            dtype: DType::I32,
            shape: shape.to_vec(),
            quant,
            data: values.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    /// An empty output tensor shaped like `spec`.
    pub fn for_spec(spec: &TensorSpec) -> Self {
        Tensor::zeros(spec.dtype, &spec.shape, spec.quant)
    }

    pub fn view(&self) -> TensorRef<'_> {
        TensorRef { dtype: self.dtype, shape: &self.shape, quant: self.quant, data: &self.data }
    }

    pub fn view_mut(&mut self) -> TensorMut<'_> {
        TensorMut { dtype: self.dtype, shape: &self.shape, quant: self.quant, data: &mut self.data }
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.view().to_f32_vec()
    }

    pub fn to_i8_vec(&self) -> Vec<i8> {
        self.view().to_i8_vec()
    }

    /// Real values, dequantizing I8 and I32 when quant params are present.
    pub fn to_real_vec(&self) -> Vec<f32> {
        let v = self.view();
        match (self.dtype, self.quant) {
            (DType::F32, _) => v.to_f32_vec(),
            (DType::I8, Some(q)) => v.to_i8_vec().iter().map(|&x| q.scale * (x as i32 - q.zero_point) as f32).collect(),
            (DType::I8, None) => v.to_i8_vec().iter().map(|&x| x as f32).collect(),
            (DType::I32, q) => {
                let (s, z) = q.map_or((1.0, 0), |q| (q.scale, q.zero_point));
                v.to_i32_vec().iter().map(|&x| s * (x - z) as f32).collect()
            }
        }
    }
}
