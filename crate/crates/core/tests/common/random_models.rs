//! Seeded random valid models built through the graph converter.

use mico::converter::{build_graph_text, quantize_post_training};
use mico::model::Model;
use mico::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

struct Builder {
    tensors: Vec<Value>,
    ops: Vec<Value>,
    next: usize,
    seed: u64,
}

impl Builder {
    fn name(&mut self) -> String {
        self.next += 1;
        format!("t{}", self.next)
    }

    fn weights(&mut self, shape: &[usize]) -> String {
        let name = self.name();
        self.seed += 1;
        self.tensors.push(json!({"name": name, "shape": shape,
            "init": {"uniform": {"seed": self.seed, "low": -0.5, "high": 0.5}}}));
        name
    }

    fn op(&mut self, opcode: &str, inputs: Vec<String>, params: Option<Value>) -> String {
        let out = self.name();
        let mut op = json!({"opcode": opcode, "inputs": inputs, "outputs": [out]});
        if let Some(p) = params {
            op["params"] = p;
        }
        self.ops.push(op);
        out
    }
}

fn activation(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.random_bool(0.5) {
        "RELU"
    } else {
        "NONE"
    }
}

/// Graph text for a random chain over an NHWC input ending in a dense layer.
pub fn random_graph_text(rng: &mut ChaCha8Rng) -> String {
    let mut shape = [1, rng.random_range(2..=6usize), rng.random_range(2..=6usize), rng.random_range(1..=3usize)];
    let mut b = Builder { tensors: vec![json!({"name": "x", "shape": shape})], ops: Vec::new(), next: 0, seed: rng.random() };
    let mut cur = "x".to_string();
    for _ in 0..rng.random_range(0..=4) {
        let padding = if rng.random_bool(0.5) { "SAME" } else { "VALID" };
        match rng.random_range(0..6) {
            0 => {
                let out_c = rng.random_range(1..=4);
                let (kh, kw) = (rng.random_range(1..=shape[1].min(3)), rng.random_range(1..=shape[2].min(3)));
                let w = b.weights(&[out_c, kh, kw, shape[3]]);
                let bias = b.weights(&[out_c]);
                let p = json!({"padding": padding, "fused_activation": activation(rng)});
                cur = b.op("CONV_2D", vec![cur, w, bias], Some(p));
                if padding == "VALID" {
                    shape = [1, shape[1] - kh + 1, shape[2] - kw + 1, out_c];
                } else {
                    shape[3] = out_c;
                }
            }
            1 => {
                let mult = rng.random_range(1..=2);
                let (kh, kw) = (rng.random_range(1..=shape[1].min(3)), rng.random_range(1..=shape[2].min(3)));
                let w = b.weights(&[1, kh, kw, shape[3] * mult]);
                let p = json!({"padding": padding, "fused_activation": activation(rng), "depth_multiplier": mult});
                cur = b.op("DEPTHWISE_CONV_2D", vec![cur, w], Some(p));
                if padding == "VALID" {
                    shape = [1, shape[1] - kh + 1, shape[2] - kw + 1, shape[3] * mult];
                } else {
                    shape[3] *= mult;
                }
            }
            2 | 3 if shape[1] >= 2 && shape[2] >= 2 => {
                let opcode = if rng.random_bool(0.5) { "MAX_POOL_2D" } else { "AVG_POOL_2D" };
                let p = json!({"filter_h": 2, "filter_w": 2, "stride_h": 2, "stride_w": 2});
                cur = b.op(opcode, vec![cur], Some(p));
                shape = [1, shape[1] / 2, shape[2] / 2, shape[3]];
            }
            4 => cur = b.op("RELU", vec![cur], None),
            _ => {
                let other = b.weights(&shape);
                cur = b.op("ADD", vec![cur, other], Some(json!({"fused_activation": activation(rng)})));
            }
        }
    }
    let flat = shape.iter().product::<usize>();
    cur = b.op("RESHAPE", vec![cur], Some(json!({"new_shape": [1, flat]})));
    let units = rng.random_range(1..=5);
    let w = b.weights(&[units, flat]);
    let mut inputs = vec![cur, w];
    if rng.random_bool(0.7) {
        inputs.push(b.weights(&[units]));
    }
    cur = b.op("FULLY_CONNECTED", inputs, Some(json!({"fused_activation": activation(rng)})));
    if rng.random_bool(0.5) {
        cur = b.op("SOFTMAX", vec![cur], None);
    }
    let mut metadata = serde_json::Map::new();
    for k in 0..rng.random_range(0..3) {
        metadata.insert(format!("key{k}"), json!(format!("value {}", rng.random::<u16>())));
    }
    json!({"tensors": b.tensors, "ops": b.ops, "inputs": ["x"], "outputs": [cur], "metadata": metadata}).to_string()
}

/// A random F32 model, quantized to I8 about half the time.
pub fn random_model(seed: u64) -> Model<'static> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = build_graph_text(&random_graph_text(&mut rng)).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    if rng.random_bool(0.5) {
        return model;
    }
    let shape = model.tensors[model.inputs[0]].shape.clone();
    let len = shape.iter().product();
    let samples: Vec<Vec<Tensor>> = (0..3)
        .map(|_| vec![Tensor::from_f32(&shape, &(0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>())])
        .collect();
    quantize_post_training(&model, &samples).unwrap_or_else(|e| panic!("seed {seed}: {e}"))
}
