//! GraphSpec: a JSON graph description that names tensors instead of
//! indexing them.
//!
//! ```json
//! {
//!   "tensors": [
//!     {"name": "x", "shape": [1, 4, 4, 1]},
//!     {"name": "w", "shape": [2, 3, 3, 1], "init": {"uniform": {"seed": 7, "low": -0.5, "high": 0.5}}},
//!     {"name": "b", "shape": [2], "data": [0.1, -0.1]}
//!   ],
//!   "ops": [
//!     {"opcode": "CONV_2D", "inputs": ["x", "w", "b"], "outputs": ["y"],
//!      "params": {"padding": "SAME", "fused_activation": "RELU"}},
//!     {"opcode": "SOFTMAX", "inputs": ["y"], "outputs": ["probs"]}
//!   ],
//!   "inputs": ["x"],
//!   "outputs": ["probs"],
//!   "metadata": {"description": "example"}
//! }
//! ```
//!
//! `dtype` defaults to `F32`. Tensors with `data` or `init` become constants.
//! Op outputs that are not declared get their dtype and shape inferred.
//! Params use the same records as the JSON model form; omitted params take
//! their defaults where the record has them.

use std::borrow::Cow;
use std::collections::HashMap;

use arrayvec::ArrayVec;
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::ConverterError;
use crate::kernels::infer_output;
use crate::model::{validate_model, DType, Model, OpEntry, OpParams, Opcode, QuantParams, TensorRole, TensorSpec, MODEL_VERSION};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(default)]
    pub tensors: Vec<TensorDecl>,
    pub ops: Vec<OpDecl>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub metadata: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDecl {
    pub name: String,
    #[serde(default = "default_dtype")]
    pub dtype: DType,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub quant: Option<QuantParams>,
    #[serde(default)]
    pub data: Option<Vec<f64>>,
    #[serde(default)]
    pub init: Option<Init>,
}

fn default_dtype() -> DType {
    DType::F32
}

/// Generated constant contents.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    /// Uniform in `[low, high)` from a seeded ChaCha8 stream.
    Uniform { seed: u64, low: f64, high: f64 },
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpDecl {
    pub opcode: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub params: Option<serde_json::Value>,
}

pub fn parse_graph(text: &str) -> Result<GraphSpec, ConverterError> {
    serde_json::from_str(text).map_err(|e| ConverterError::Parse(e.to_string()))
}

/// Parses and builds in one step.
pub fn build_graph_text(text: &str) -> Result<Model<'static>, ConverterError> {
    graph_build(&parse_graph(text)?)
}

fn op_params(decl: &OpDecl, index: usize) -> Result<OpParams, ConverterError> {
    let opcode = Opcode::from_name(&decl.opcode).ok_or_else(|| ConverterError::UnknownOpcode(decl.opcode.clone()))?;
    let mut tagged = serde_json::Map::new();
    tagged.insert("opcode".into(), decl.opcode.clone().into());
    match opcode {
        Opcode::Relu | Opcode::Quantize | Opcode::Dequantize => {}
        _ => {
            let params = decl.params.clone().filter(|p| !p.is_null()).unwrap_or_else(|| serde_json::json!({}));
            tagged.insert("params".into(), params);
        }
    }
    serde_json::from_value(tagged.into()).map_err(|e| ConverterError::Parse(format!("op {index} ({}) params: {e}", decl.opcode)))
}

fn const_bytes(decl: &TensorDecl) -> Result<Vec<u8>, ConverterError> {
    let n: usize = decl.shape.iter().product();
    let values: Vec<f64> = match (&decl.data, decl.init) {
        (Some(_), Some(_)) => return Err(ConverterError::Parse(format!("tensor {}: both data and init given", decl.name))),
        (Some(data), None) => {
            if data.len() != n {
                return Err(ConverterError::Parse(format!(
                    "tensor {}: {} values for shape {:?}",
                    decl.name,
                    data.len(),
                    decl.shape
                )));
            }
            data.clone()
        }
        (None, Some(Init::Constant(v))) => vec![v; n],
        (None, Some(Init::Uniform { seed, low, high })) => {
            if !(low < high) {
                return Err(ConverterError::Parse(format!("tensor {}: empty init range", decl.name)));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random_range(low..high)).collect()
        }
        (None, None) => unreachable!("only called for constants"),
    };
    let bytes = match decl.dtype {
        DType::F32 => values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        DType::I8 => values.iter().map(|&v| (v.round().clamp(-128.0, 127.0) as i8) as u8).collect(),
        DType::I32 => values.iter().flat_map(|&v| (v.round() as i32).to_le_bytes()).collect(),
    };
    Ok(bytes)
}

/// Builds a model from a parsed spec. Ops are emitted in spec order; an op
/// that reads a tensor produced later is rejected, never reordered.
pub fn graph_build(spec: &GraphSpec) -> Result<Model<'static>, ConverterError> {
    let mut model = Model { version: MODEL_VERSION, ..Default::default() };
    let mut index: HashMap<&str, usize> = HashMap::new();

    for decl in &spec.tensors {
        if index.insert(&decl.name, model.tensors.len()).is_some() {
            return Err(ConverterError::Parse(format!("tensor {} declared twice", decl.name)));
        }
        let role = if decl.data.is_some() || decl.init.is_some() {
            model.buffers.push(Cow::Owned(const_bytes(decl)?));
            TensorRole::Const(model.buffers.len() - 1)
        } else {
            TensorRole::Intermediate
        };
        model.tensors.push(TensorSpec {
            name: decl.name.clone(),
            dtype: decl.dtype,
            shape: decl.shape.clone(),
            role,
            quant: decl.quant,
        });
    }

    let mut producer: HashMap<&str, usize> = HashMap::new();
    for (k, op) in spec.ops.iter().enumerate() {
        for name in &op.outputs {
            if producer.insert(name, k).is_some() {
                return Err(ConverterError::CycleOrOrder(format!("tensor {name} has more than one producer")));
            }
        }
    }

    for (k, decl) in spec.ops.iter().enumerate() {
        let params = op_params(decl, k)?;
        let mut inputs = Vec::with_capacity(decl.inputs.len());
        for name in &decl.inputs {
            match producer.get(name.as_str()) {
                Some(&p) if p >= k => {
                    return Err(ConverterError::CycleOrOrder(format!(
                        "op {k} ({}) reads {name}, which op {p} produces",
                        decl.opcode
                    )))
                }
                _ => {}
            }
            let &t = index
                .get(name.as_str())
                .ok_or_else(|| ConverterError::Parse(format!("op {k} reads undeclared tensor {name}")))?;
            inputs.push(t);
        }
        if inputs.len() > 3 {
            return Err(ConverterError::ShapeInference(format!("op {k} ({}) has {} inputs", decl.opcode, inputs.len())));
        }
        let operands: ArrayVec<(DType, &[usize]), 3> =
            inputs.iter().map(|&t| (model.tensors[t].dtype, model.tensors[t].shape.as_slice())).collect();
        let (dtype, shape) = infer_output(&params, &operands)
            .map_err(|e| ConverterError::ShapeInference(format!("op {k} ({}): {e}", decl.opcode)))?;
        drop(operands);

        let mut outputs = Vec::with_capacity(decl.outputs.len());
        for name in &decl.outputs {
            let t = match index.get(name.as_str()) {
                Some(&t) => {
                    let declared = &model.tensors[t];
                    if declared.role.is_const() {
                        return Err(ConverterError::CycleOrOrder(format!("op {k} writes constant {name}")));
                    }
                    if declared.dtype != dtype || declared.shape != shape.as_slice() {
                        return Err(ConverterError::ShapeInference(format!(
                            "op {k} ({}) produces {dtype:?}{shape:?}, {name} is declared {:?}{:?}",
                            decl.opcode, declared.dtype, declared.shape
                        )));
                    }
                    t
                }
                None => {
                    index.insert(name, model.tensors.len());
                    model.tensors.push(TensorSpec {
                        name: name.clone(),
                        dtype,
                        shape: shape.to_vec(),
                        role: TensorRole::Intermediate,
                        quant: None,
                    });
                    model.tensors.len() - 1
                }
            };
            outputs.push(t);
        }
        model.ops.push(OpEntry::new(params, inputs, outputs));
    }

    for (list, names, role) in [
        (&mut model.inputs, &spec.inputs, TensorRole::ModelInput),
        (&mut model.outputs, &spec.outputs, TensorRole::ModelOutput),
    ] {
        for name in names {
            let &t = index.get(name.as_str()).ok_or_else(|| ConverterError::Parse(format!("unknown model io tensor {name}")))?;
            let spec = &mut model.tensors[t];
            if spec.role != TensorRole::Intermediate {
                return Err(ConverterError::Parse(format!("tensor {name} cannot be a model input or output")));
            }
            spec.role = role;
            list.push(t);
        }
    }
    for (key, value) in &spec.metadata {
        model.set_metadata(key.clone(), value.as_bytes().to_vec());
    }

    let report = validate_model(&model);
    if !report.is_valid() {
        return Err(ConverterError::InvalidModel(report));
    }
    Ok(model)
}
