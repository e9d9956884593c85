//! Operator codes and their parameter records.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Builtin operator codes. The numeric values are part of the `.mico` format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Opcode {
    #[serde(rename = "CONV_2D")]
    Conv2d = 0,
    #[serde(rename = "DEPTHWISE_CONV_2D")]
    DepthwiseConv2d = 1,
    #[serde(rename = "FULLY_CONNECTED")]
    FullyConnected = 2,
    #[serde(rename = "MAX_POOL_2D")]
    MaxPool2d = 3,
    #[serde(rename = "AVG_POOL_2D")]
    AvgPool2d = 4,
    #[serde(rename = "SOFTMAX")]
    Softmax = 5,
    #[serde(rename = "RELU")]
    Relu = 6,
    #[serde(rename = "ADD")]
    Add = 7,
    #[serde(rename = "RESHAPE")]
    Reshape = 8,
    #[serde(rename = "QUANTIZE")]
    Quantize = 9,
    #[serde(rename = "DEQUANTIZE")]
    Dequantize = 10,
}

impl Opcode {
    pub const ALL: [Opcode; 11] = [
        Opcode::Conv2d,
        Opcode::DepthwiseConv2d,
        Opcode::FullyConnected,
        Opcode::MaxPool2d,
        Opcode::AvgPool2d,
        Opcode::Softmax,
        Opcode::Relu,
        Opcode::Add,
        Opcode::Reshape,
        Opcode::Quantize,
        Opcode::Dequantize,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Opcode::Conv2d => "CONV_2D",
            Opcode::DepthwiseConv2d => "DEPTHWISE_CONV_2D",
            Opcode::FullyConnected => "FULLY_CONNECTED",
            Opcode::MaxPool2d => "MAX_POOL_2D",
            Opcode::AvgPool2d => "AVG_POOL_2D",
            Opcode::Softmax => "SOFTMAX",
            Opcode::Relu => "RELU",
            Opcode::Add => "ADD",
            Opcode::Reshape => "RESHAPE",
            Opcode::Quantize => "QUANTIZE",
            Opcode::Dequantize => "DEQUANTIZE",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.name() == name)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

impl Padding {
    pub fn code(self) -> u8 {
        match self {
            Padding::Valid => 0,
            Padding::Same => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Padding::Valid),
            1 => Some(Padding::Same),
            _ => None,
        }
    }

    /// Output extent and leading (top/left) padding for one spatial axis.
    ///
    /// SAME puts the odd padding element at the bottom/right.
    pub fn output_extent(self, input: usize, filter: usize, stride: usize) -> Option<(usize, usize)> {
        if stride == 0 || filter == 0 {
            return None;
        }
        match self {
            Padding::Valid => {
                if input < filter {
                    None
                } else {
                    Some(((input - filter) / stride + 1, 0))
                }
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let needed = out.checked_sub(1)?.checked_mul(stride)?.checked_add(filter)?.saturating_sub(input);
                Some((out, needed / 2))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Parameters shared by `CONV_2D` and `DEPTHWISE_CONV_2D`. Dilation is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvParams {
    pub stride_h: usize,
    pub stride_w: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub fused_activation: Activation,
    /// Only meaningful for depthwise convolution; must be 1 for `CONV_2D`.
    #[serde(default = "one")]
    pub depth_multiplier: usize,
}

fn one() -> usize {
    1
}

impl Default for ConvParams {
    fn default() -> Self {
        ConvParams {
            stride_h: 1,
            stride_w: 1,
            padding: Padding::Valid,
            fused_activation: Activation::None,
            depth_multiplier: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PoolParams {
    pub filter_h: usize,
    pub filter_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub fused_activation: Activation,
}

impl PoolParams {
    /// Square window with stride equal to the window.
    pub fn window(size: usize) -> Self {
        PoolParams {
            filter_h: size,
            filter_w: size,
            stride_h: size,
            stride_w: size,
            padding: Padding::Valid,
            fused_activation: Activation::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct FullyConnectedParams {
    #[serde(default)]
    pub fused_activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct AddParams {
    #[serde(default)]
    pub fused_activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftmaxParams {
    /// Only the last axis is supported; `-1` names it independent of rank.
    pub axis: i32,
}

impl Default for SoftmaxParams {
    fn default() -> Self {
        SoftmaxParams { axis: -1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReshapeParams {
    pub new_shape: Vec<usize>,
}

/// Opcode together with its parameter record.
///
/// In the JSON model form this is flattened into the op entry as
/// `"opcode": "CONV_2D", "params": {...}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "opcode", content = "params")]
pub enum OpParams {
    #[serde(rename = "CONV_2D")]
    Conv2d(ConvParams),
    #[serde(rename = "DEPTHWISE_CONV_2D")]
    DepthwiseConv2d(ConvParams),
    #[serde(rename = "FULLY_CONNECTED")]
    FullyConnected(FullyConnectedParams),
    #[serde(rename = "MAX_POOL_2D")]
    MaxPool2d(PoolParams),
    #[serde(rename = "AVG_POOL_2D")]
    AvgPool2d(PoolParams),
    #[serde(rename = "SOFTMAX")]
    Softmax(SoftmaxParams),
    #[serde(rename = "RELU")]
    Relu,
    #[serde(rename = "ADD")]
    Add(AddParams),
    #[serde(rename = "RESHAPE")]
    Reshape(ReshapeParams),
    #[serde(rename = "QUANTIZE")]
    Quantize,
    #[serde(rename = "DEQUANTIZE")]
    Dequantize,
}

impl OpParams {
    pub fn opcode(&self) -> Opcode {
        match self {
            OpParams::Conv2d(_) => Opcode::Conv2d,
            OpParams::DepthwiseConv2d(_) => Opcode::DepthwiseConv2d,
            OpParams::FullyConnected(_) => Opcode::FullyConnected,
            OpParams::MaxPool2d(_) => Opcode::MaxPool2d,
            OpParams::AvgPool2d(_) => Opcode::AvgPool2d,
            OpParams::Softmax(_) => Opcode::Softmax,
            OpParams::Relu => Opcode::Relu,
            OpParams::Add(_) => Opcode::Add,
            OpParams::Reshape(_) => Opcode::Reshape,
            OpParams::Quantize => Opcode::Quantize,
            OpParams::Dequantize => Opcode::Dequantize,
        }
    }
}
