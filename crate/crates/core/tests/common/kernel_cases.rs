//! Seeded random conv / depthwise / dense cases checked against the oracles.

use mico::kernels::{conv_2d, depthwise_conv_2d, fully_connected};
use mico::model::{Activation, ConvParams, DType, FullyConnectedParams, Padding, QuantParams};
use mico::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conv_ref, dense_ref, quantize_real, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Conv,
    Depthwise,
    Dense,
}

#[derive(Debug, Clone)]
pub struct Case {
    pub kind: Kind,
    pub input: [usize; 4],
    pub weights: Vec<usize>,
    pub params: ConvParams,
    pub bias: bool,
}

impl Case {
    pub fn random(rng: &mut ChaCha8Rng) -> Case {
        let kind = [Kind::Conv, Kind::Depthwise, Kind::Dense][rng.random_range(0..3)];
        let n = rng.random_range(1..=2);
        let h = rng.random_range(1..=6);
        let w = rng.random_range(1..=6);
        let c = rng.random_range(1..=4);
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let (kh, kw) = match padding {
            Padding::Same => (rng.random_range(1..=3), rng.random_range(1..=3)),
            Padding::Valid => (rng.random_range(1..=h.min(3)), rng.random_range(1..=w.min(3))),
        };
        let mult = if kind == Kind::Depthwise { rng.random_range(1..=2) } else { 1 };
        let params = ConvParams {
            stride_h: rng.random_range(1..=2),
            stride_w: rng.random_range(1..=2),
            padding,
            fused_activation: if rng.random_bool(0.5) { Activation::Relu } else { Activation::None },
            depth_multiplier: mult,
        };
        let out_c = rng.random_range(1..=4);
        let weights = match kind {
            Kind::Conv => vec![out_c, kh, kw, c],
            Kind::Depthwise => vec![1, kh, kw, c * mult],
            Kind::Dense => vec![out_c, h * w * c],
        };
        Case { kind, input: [n, h, w, c], weights, params, bias: rng.random_bool(0.7) }
    }

    fn units(&self) -> usize {
        match self.kind {
            Kind::Conv => self.weights[0],
            Kind::Depthwise => self.weights[3],
            Kind::Dense => self.weights[0],
        }
    }

    fn window(&self) -> Window {
        Window { stride: (self.params.stride_h, self.params.stride_w), same: self.params.padding == Padding::Same }
    }

    fn relu(&self) -> bool {
        self.params.fused_activation == Activation::Relu
    }

    fn input_shape(&self) -> Vec<usize> {
        match self.kind {
            // dense flattens everything after the batch
            Kind::Dense => vec![self.input[0], self.input[1] * self.input[2] * self.input[3]],
            _ => self.input.to_vec(),
        }
    }

    fn output_shape(&self) -> Vec<usize> {
        if self.kind == Kind::Dense {
            return vec![self.input[0], self.units()];
        }
        let p = &self.params;
        let oh = p.padding.output_extent(self.input[1], self.weights[1], p.stride_h).unwrap().0;
        let ow = p.padding.output_extent(self.input[2], self.weights[2], p.stride_w).unwrap().0;
        vec![self.input[0], oh, ow, self.units()]
    }

    fn run(&self, x: &Tensor, w: &Tensor, b: Option<&Tensor>, out: &mut Tensor) {
        let bias = b.map(Tensor::view);
        match self.kind {
            Kind::Conv => conv_2d(&x.view(), &w.view(), bias.as_ref(), &self.params, &mut out.view_mut()),
            Kind::Depthwise => depthwise_conv_2d(&x.view(), &w.view(), bias.as_ref(), &self.params, &mut out.view_mut()),
            Kind::Dense => fully_connected(
                &x.view(),
                &w.view(),
                bias.as_ref(),
                &FullyConnectedParams { fused_activation: self.params.fused_activation },
                &mut out.view_mut(),
            ),
        }
        .unwrap_or_else(|e| panic!("{self:?}: {e}"));
    }

    fn reference<T: super::Real>(&self, x: &[T], w: &[T], b: Option<&[T]>) -> Vec<T> {
        match self.kind {
            Kind::Dense => dense_ref(x, w, self.units(), b, self.relu()),
            _ => {
                let ws: [usize; 4] = self.weights.clone().try_into().unwrap();
                conv_ref(x, self.input, w, ws, b, self.window(), self.kind == Kind::Depthwise, self.relu()).0
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// F32 kernel output must equal the oracle bit for bit.
pub fn check_f32(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = Case::random(&mut rng);
    let x = Tensor::from_f32(&case.input_shape(), &uniform(&mut rng, case.input.iter().product()));
    let w = Tensor::from_f32(&case.weights, &uniform(&mut rng, case.weights.iter().product()));
    let b = case.bias.then(|| Tensor::from_f32(&[case.units()], &uniform(&mut rng, case.units())));
    let mut out = Tensor::zeros(DType::F32, &case.output_shape(), None);
    case.run(&x, &w, b.as_ref(), &mut out);
    let bias = b.as_ref().map(Tensor::to_f32_vec);
    let want = case.reference(&x.to_f32_vec(), &w.to_f32_vec(), bias.as_deref());
    let got = out.to_f32_vec();
    let same = want.len() == got.len() && want.iter().zip(&got).all(|(a, b)| a.to_bits() == b.to_bits());
    if same {
        Ok(())
    } else {
        Err(format!("seed {seed} {case:?}: want {want:?} got {got:?}"))
    }
}

fn random_quant(rng: &mut ChaCha8Rng, lo: f32, hi: f32) -> QuantParams {
    QuantParams::new(rng.random_range(lo..hi), rng.random_range(-20..=20))
}

/// Int8 kernel output must be within one output quantum of the real-valued
/// result quantized into the output encoding. Returns the worst distance.
pub fn check_i8(seed: u64) -> Result<i32, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let case = Case::random(&mut rng);
    let qi = random_quant(&mut rng, 0.01, 0.1);
    let qw = random_quant(&mut rng, 0.005, 0.05);
    let qo = random_quant(&mut rng, 0.01, 0.2);
    let xs: Vec<i8> = (0..case.input.iter().product::<usize>()).map(|_| rng.random()).collect();
    let ws: Vec<i8> = (0..case.weights.iter().product::<usize>()).map(|_| rng.random()).collect();
    let bs: Vec<i32> = (0..case.units()).map(|_| rng.random_range(-2000..2000)).collect();
    let bias_q = QuantParams::new(qi.scale * qw.scale, 0);
    let x = Tensor::from_i8(&case.input_shape(), &xs, qi);
    let w = Tensor::from_i8(&case.weights, &ws, qw);
    let b = case.bias.then(|| Tensor::from_i32(&[case.units()], &bs, Some(bias_q)));
    let mut out = Tensor::zeros(DType::I8, &case.output_shape(), Some(qo));
    case.run(&x, &w, b.as_ref(), &mut out);

    let real = |v: i8, q: QuantParams| q.scale as f64 * (v as i32 - q.zero_point) as f64;
    let xr: Vec<f64> = xs.iter().map(|&v| real(v, qi)).collect();
    let wr: Vec<f64> = ws.iter().map(|&v| real(v, qw)).collect();
    let br: Vec<f64> = bs.iter().map(|&v| qi.scale as f64 * qw.scale as f64 * v as f64).collect();
    let want: Vec<i8> =
        case.reference(&xr, &wr, case.bias.then_some(&br[..])).iter().map(|&v| quantize_real(v, qo)).collect();
    let got = out.to_i8_vec();
    let worst = want.iter().zip(&got).map(|(&a, &b)| (a as i32 - b as i32).abs()).max().unwrap_or(0);
    if worst <= 1 {
        Ok(worst)
    } else {
        Err(format!("seed {seed} {case:?}: want {want:?} got {got:?}"))
    }
}
