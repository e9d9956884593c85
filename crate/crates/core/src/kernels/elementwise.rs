use super::quant::{apply_f32, requantize_real};
use super::{check_call, quant_of, KernelError};
use crate::model::{AddParams, DType, OpParams, ReshapeParams};
use crate::tensor::{TensorMut, TensorRef};

/// `max(x, 0)`. For I8 that is `max(q, zero_point)`, with the input's
/// quantization carried to the output.
pub fn relu(input: &TensorRef<'_>, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::Relu, &[input], output)?;
    match input.dtype {
        DType::F32 => {
            for i in 0..input.num_elements() {
                output.set_f32(i, input.f32_at(i).max(0.0));
            }
        }
        _ => {
            let q = quant_of(input)?;
            if output.quant != Some(q) {
                return Err(KernelError::QuantMismatch("RELU requires equal input/output quantization".into()));
            }
            let zp = q.zero_point.clamp(-128, 127) as i8;
            for i in 0..input.num_elements() {
                output.set_i8(i, input.i8_at(i).max(zp));
            }
        }
    }
    Ok(())
}

/// Elementwise sum of equal-shaped tensors. I8 operands are dequantized in
/// double precision, added and requantized to the output encoding.
pub fn add(a: &TensorRef<'_>, b: &TensorRef<'_>, params: &AddParams, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    check_call(&OpParams::Add(*params), &[a, b], output)?;
    match a.dtype {
        DType::F32 => {
            for i in 0..a.num_elements() {
                output.set_f32(i, apply_f32(params.fused_activation, a.f32_at(i) + b.f32_at(i)));
            }
        }
        _ => {
            let (qa, qb) = (quant_of(a)?, quant_of(b)?);
            let qo = output.quant.ok_or(KernelError::MissingQuant)?;
            for i in 0..a.num_elements() {
                let ra = qa.scale as f64 * (a.i8_at(i) as i32 - qa.zero_point) as f64;
                let rb = qb.scale as f64 * (b.i8_at(i) as i32 - qb.zero_point) as f64;
                output.set_i8(i, requantize_real(ra + rb, qo, params.fused_activation));
            }
        }
    }
    Ok(())
}

/// Copies the input bytes under a new shape.
pub fn reshape(input: &TensorRef<'_>, output: &mut TensorMut<'_>) -> Result<(), KernelError> {
    let params = OpParams::Reshape(ReshapeParams { new_shape: output.shape.to_vec() });
    check_call(&params, &[input], output)?;
    if input.dtype == DType::I8 && input.quant != output.quant {
        return Err(KernelError::QuantMismatch("RESHAPE requires equal input/output quantization".into()));
    }
    output.data.copy_from_slice(input.data);
    Ok(())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::QuantParams;
    use crate::tensor::Tensor;

    #[test]
    fn relu_f32_and_int8() {
        let x = Tensor::from_f32(&[2], &[-1.0, 2.0]);
        let mut out = Tensor::zeros(DType::F32, &[2], None);
        relu(&x.view(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_f32_vec(), vec![0.0, 2.0]);

        let q = QuantParams::new(0.5, -10);
        let x = Tensor::from_i8(&[2], &[-20, 5], q);
        let mut out = Tensor::zeros(DType::I8, &[2], Some(q));
        relu(&x.view(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_i8_vec(), vec![-10, 5]);
    }

    #[test]
    fn add_examples() {
        let a = Tensor::from_f32(&[2], &[1.0, 2.0]);
        let b = Tensor::from_f32(&[2], &[3.0, 4.0]);
        let mut out = Tensor::zeros(DType::F32, &[2], None);
        add(&a.view(), &b.view(), &Default::default(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_f32_vec(), vec![4.0, 6.0]);

        let zeros = Tensor::from_f32(&[2], &[0.0, 0.0]);
        add(&a.view(), &zeros.view(), &Default::default(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_f32_vec(), a.to_f32_vec());

        let unit = QuantParams::new(1.0, 0);
        let a = Tensor::from_i8(&[1], &[3], unit);
        let b = Tensor::from_i8(&[1], &[4], unit);
        let mut out = Tensor::zeros(DType::I8, &[1], Some(unit));
        add(&a.view(), &b.view(), &Default::default(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_i8_vec(), vec![7]);
    }

    #[test]
    fn add_rejects_broadcast() {
        let a = Tensor::from_f32(&[2], &[1.0, 2.0]);
        let b = Tensor::from_f32(&[1], &[3.0]);
        let mut out = Tensor::zeros(DType::F32, &[2], None);
        let err = add(&a.view(), &b.view(), &Default::default(), &mut out.view_mut()).unwrap_err();
        assert!(matches!(err, KernelError::ShapeMismatch(_)));
    }

    #[test]
    fn reshape_examples() {
        let x = Tensor::from_f32(&[1, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let mut out = Tensor::zeros(DType::F32, &[1, 4], None);
        reshape(&x.view(), &mut out.view_mut()).unwrap();
        assert_eq!(out.to_f32_vec(), vec![1.0, 2.0, 3.0, 4.0]);

        let mut same = Tensor::zeros(DType::F32, &[1, 2, 2, 1], None);
        reshape(&x.view(), &mut same.view_mut()).unwrap();
        assert_eq!(same, x);

        let mut bad = Tensor::zeros(DType::F32, &[1, 5], None);
        assert!(matches!(reshape(&x.view(), &mut bad.view_mut()), Err(KernelError::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(values in proptest::collection::vec(-100.0f32..100.0, 1..32)) {
            let x = Tensor::from_f32(&[values.len()], &values);
            let mut once = Tensor::zeros(DType::F32, &[values.len()], None);
            relu(&x.view(), &mut once.view_mut()).unwrap();
            let mut twice = once.clone();
            relu(&once.view(), &mut twice.view_mut()).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
