//! Shared fixture loading and independent oracles for integration tests.
#![allow(dead_code)]

pub mod kernel_cases;
pub mod random_models;
pub mod serialization;

use std::path::PathBuf;

use mico::converter::{build_graph_text, quantize_post_training};
use mico::kernels::quant::quantize_value;
use mico::model::{Model, QuantParams};
use mico::tensor::Tensor;
use mico::tensor_file::read_tensor_file;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture_bytes(name: &str) -> Vec<u8> {
    std::fs::read(fixture_path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn float_fixture() -> Model<'static> {
    build_graph_text(&String::from_utf8(fixture_bytes("fixture.graph.json")).unwrap()).unwrap()
}

pub fn calibration_images() -> Vec<Tensor> {
    (0..8).map(|k| read_tensor_file(fixture_path(&format!("calib/{k:02}.mten"))).unwrap()).collect()
}

pub fn int8_fixture() -> Model<'static> {
    let samples: Vec<Vec<Tensor>> = calibration_images().into_iter().map(|t| vec![t]).collect();
    quantize_post_training(&float_fixture(), &samples).unwrap()
}

/// Set to rewrite the frozen fixture files instead of comparing against them.
pub const BLESS: &str = "MICO_BLESS";

pub fn frozen(name: &str, bytes: &[u8]) {
    let path = fixture_path(name);
    if std::env::var_os(BLESS).is_some() {
        std::fs::write(&path, bytes).unwrap();
    }
    assert!(fixture_bytes(name) == bytes, "{name} is stale; rerun with {BLESS}=1");
}

/// Encodes a float image with the model's input quantization.
pub fn quantize_input(image: &Tensor, q: QuantParams) -> Tensor {
    let values: Vec<i8> = image.to_f32_vec().iter().map(|&v| quantize_value(v, q)).collect();
    Tensor::from_i8(&image.shape, &values, q)
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Oracles. Plain loops over NHWC data, written without reference to the
// library kernels.

fn pad_before(input: usize, filter: usize, stride: usize, same: bool) -> (usize, usize) {
    if same {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + filter).saturating_sub(input);
        (out, total / 2)
    } else {
        ((input - filter) / stride + 1, 0)
    }
}

/// Geometry of a 2-D window op.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub stride: (usize, usize),
    pub same: bool,
}

/// Scalar types the float oracles run in: `f32` for bit-exact checks
/// (taps summed in (ky, kx, c) order, bias added last), `f64` as the real
/// number reference for int8 kernels.
pub trait Real: Copy + Default + PartialOrd + std::ops::Add<Output = Self> + std::ops::Mul<Output = Self> {}
impl Real for f32 {}
impl Real for f64 {}

fn relu_if<T: Real>(v: T, relu: bool) -> T {
    if relu && v < T::default() {
        T::default()
    } else {
        v
    }
}

/// Float convolution. `w` is `[oc, kh, kw, ic]`, or `[1, kh, kw, c * mult]`
/// when `depthwise`.
#[allow(clippy::too_many_arguments)]
pub fn conv_ref<T: Real>(
    x: &[T],
    xs: [usize; 4],
    w: &[T],
    ws: [usize; 4],
    b: Option<&[T]>,
    win: Window,
    depthwise: bool,
    relu: bool,
) -> (Vec<T>, [usize; 4]) {
    let [n, h, wd, c] = xs;
    let [wo, kh, kw, wi] = ws;
    let (oh, pt) = pad_before(h, kh, win.stride.0, win.same);
    let (ow, pl) = pad_before(wd, kw, win.stride.1, win.same);
    let oc = if depthwise { wi } else { wo };
    let mult = if depthwise { wi / c } else { 1 };
    let mut out = vec![T::default(); n * oh * ow * oc];
    for b_ in 0..n {
        for y in 0..oh {
            for x_ in 0..ow {
                for o in 0..oc {
                    let mut acc = T::default();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * win.stride.0 + ky) as isize - pt as isize;
                            let ix = (x_ * win.stride.1 + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let base = ((b_ * h + iy as usize) * wd + ix as usize) * c;
                            if depthwise {
                                acc = acc + x[base + o / mult] * w[(ky * kw + kx) * wi + o];
                            } else {
                                for i in 0..c {
                                    acc = acc + x[base + i] * w[((o * kh + ky) * kw + kx) * wi + i];
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        acc = acc + b[o];
                    }
                    out[((b_ * oh + y) * ow + x_) * oc + o] = relu_if(acc, relu);
                }
            }
        }
    }
    (out, [n, oh, ow, oc])
}

/// Float dense layer, `w` is `[units, depth]`.
pub fn dense_ref<T: Real>(x: &[T], w: &[T], units: usize, b: Option<&[T]>, relu: bool) -> Vec<T> {
    let depth = w.len() / units;
    let batches = x.len() / depth;
    let mut out = Vec::with_capacity(batches * units);
    for r in 0..batches {
        for u in 0..units {
            let mut acc = T::default();
            for d in 0..depth {
                acc = acc + x[r * depth + d] * w[u * depth + d];
            }
            if let Some(b) = b {
                acc = acc + b[u];
            }
            out.push(relu_if(acc, relu));
        }
    }
    out
}

pub fn round_away(v: f64) -> f64 {
    v.signum() * (v.abs() + 0.5).floor()
}

/// Integer requantization of an accumulator.
pub fn requant(acc: i64, s_in: f32, s_w: f32, out: QuantParams, relu: bool) -> i8 {
    let m = (s_in as f64 * s_w as f64) / out.scale as f64;
    let lo = if relu { out.zero_point.clamp(-128, 127) as f64 } else { -128.0 };
    (round_away(acc as f64 * m) + out.zero_point as f64).clamp(lo, 127.0) as i8
}

pub fn quantize_real(v: f64, q: QuantParams) -> i8 {
    (round_away(v / q.scale as f64) + q.zero_point as f64).clamp(-128.0, 127.0) as i8
}

fn i8s(t: &mico::tensor::TensorRef<'_>) -> Vec<i8> {
    t.data.iter().map(|&b| b as i8).collect()
}

/// Forward pass of an int8 conv/pool/reshape/dense/softmax model using
/// integer accumulation, computed op by op from the tensor table.
pub fn int8_forward(model: &Model<'_>, input: &[i8]) -> Vec<i8> {
    use mico::model::{OpParams, Padding, TensorRole};
    let mut values: Vec<Option<Vec<i8>>> = vec![None; model.tensors.len()];
    values[model.inputs[0]] = Some(input.to_vec());
    let q = |t: usize| model.tensors[t].quant.unwrap();
    let shape4 = |t: usize| -> [usize; 4] { model.tensors[t].shape.clone().try_into().unwrap() };
    let const_i8 = |t: usize| -> Vec<i8> { model.const_data(t).unwrap().iter().map(|&b| b as i8).collect() };
    let const_i32 = |t: usize| -> Vec<i32> {
        model.const_data(t).unwrap().chunks_exact(4).map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()
    };
    for op in &model.ops {
        let (a, out) = (op.inputs[0], op.outputs[0]);
        assert!(!matches!(model.tensors[a].role, TensorRole::Const(_)));
        let x = values[a].clone().unwrap();
        let result: Vec<i8> = match &op.params {
            OpParams::Conv2d(p) => {
                let (qi, qw, qo) = (q(a), q(op.inputs[1]), q(out));
                let [n, h, w, c] = shape4(a);
                let [oc, kh, kw, _] = shape4(op.inputs[1]);
                let wts = const_i8(op.inputs[1]);
                let bias = op.inputs.get(2).map(|&t| const_i32(t));
                let same = p.padding == Padding::Same;
                let (oh, pt) = pad_before(h, kh, p.stride_h, same);
                let (ow, pl) = pad_before(w, kw, p.stride_w, same);
                let relu = p.fused_activation == mico::model::Activation::Relu;
                let mut r = vec![0i8; n * oh * ow * oc];
                for b in 0..n {
                    for y in 0..oh {
                        for xx in 0..ow {
                            for o in 0..oc {
                                let mut acc: i64 = bias.as_ref().map_or(0, |v| v[o] as i64);
                                for ky in 0..kh {
                                    for kx in 0..kw {
                                        let iy = (y * p.stride_h + ky) as isize - pt as isize;
                                        let ix = (xx * p.stride_w + kx) as isize - pl as isize;
                                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                            continue;
                                        }
                                        for i in 0..c {
                                            let xv = x[((b * h + iy as usize) * w + ix as usize) * c + i] as i64 - qi.zero_point as i64;
                                            let wv = wts[((o * kh + ky) * kw + kx) * c + i] as i64 - qw.zero_point as i64;
                                            acc += xv * wv;
                                        }
                                    }
                                }
                                r[((b * oh + y) * ow + xx) * oc + o] = requant(acc, qi.scale, qw.scale, qo, relu);
                            }
                        }
                    }
                }
                r
            }
            OpParams::MaxPool2d(p) => {
                let [n, h, w, c] = shape4(a);
                let same = p.padding == Padding::Same;
                let (oh, pt) = pad_before(h, p.filter_h, p.stride_h, same);
                let (ow, pl) = pad_before(w, p.filter_w, p.stride_w, same);
                let mut r = vec![0i8; n * oh * ow * c];
                for b in 0..n {
                    for y in 0..oh {
                        for xx in 0..ow {
                            for ch in 0..c {
                                let mut m = i8::MIN;
                                for ky in 0..p.filter_h {
                                    for kx in 0..p.filter_w {
                                        let iy = (y * p.stride_h + ky) as isize - pt as isize;
                                        let ix = (xx * p.stride_w + kx) as isize - pl as isize;
                                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                            m = m.max(x[((b * h + iy as usize) * w + ix as usize) * c + ch]);
                                        }
                                    }
                                }
                                r[((b * oh + y) * ow + xx) * c + ch] = m;
                            }
                        }
                    }
                }
                r
            }
            OpParams::Reshape(_) => x,
            OpParams::FullyConnected(p) => {
                let (qi, qw, qo) = (q(a), q(op.inputs[1]), q(out));
                let wts = const_i8(op.inputs[1]);
                let units = model.tensors[op.inputs[1]].shape[0];
                let depth = wts.len() / units;
                let bias = op.inputs.get(2).map(|&t| const_i32(t));
                let relu = p.fused_activation == mico::model::Activation::Relu;
                let mut r = Vec::new();
                for row in x.chunks(depth) {
                    for u in 0..units {
                        let mut acc: i64 = bias.as_ref().map_or(0, |v| v[u] as i64);
                        for d in 0..depth {
                            acc += (row[d] as i64 - qi.zero_point as i64) * (wts[u * depth + d] as i64 - qw.zero_point as i64);
                        }
                        r.push(requant(acc, qi.scale, qw.scale, qo, relu));
                    }
                }
                r
            }
            OpParams::Softmax(_) => {
                let (qi, qo) = (q(a), q(out));
                let depth = *model.tensors[a].shape.last().unwrap();
                let mut r = Vec::new();
                for row in x.chunks(depth) {
                    // f32 arithmetic, matching the declared float semantics
                    let real: Vec<f32> = row.iter().map(|&v| qi.scale * (v as i32 - qi.zero_point) as f32).collect();
                    let max = real.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let e: Vec<f32> = real.iter().map(|v| (v - max).exp()).collect();
                    let sum: f32 = e.iter().fold(0.0, |s, v| s + v);
                    r.extend(e.iter().map(|v| quantize_real((v / sum) as f64, qo)));
                }
                r
            }
            other => panic!("oracle does not cover {other:?}"),
        };
        values[out] = Some(result);
    }
    values[model.outputs[0]].clone().unwrap()
}

/// Int8 output of a single tensor view, for comparisons.
pub fn view_i8(t: &mico::tensor::TensorRef<'_>) -> Vec<i8> {
    i8s(t)
}
