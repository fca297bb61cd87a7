use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// The primitive operations a [`Graph`](crate::Graph) can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Conv2d,
    ConvTranspose2d,
    MaxPool2x2,
    Upsample2x,
    Add,
    AddBias,
    Sub,
    Mul,
    ScalarMul,
    Relu,
    LeakyRelu,
    Tanh,
    Reshape,
    Sum,
    Mean,
    Abs,
    Square,
    L2NormSquared,
    BatchNorm,
    SliceRows,
    ConcatRows,
}

impl OpKind {
    pub const ALL: [OpKind; 23] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Conv2d,
        OpKind::ConvTranspose2d,
        OpKind::MaxPool2x2,
        OpKind::Upsample2x,
        OpKind::Add,
        OpKind::AddBias,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul,
        OpKind::Relu,
        OpKind::LeakyRelu,
        OpKind::Tanh,
        OpKind::Reshape,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Abs,
        OpKind::Square,
        OpKind::L2NormSquared,
        OpKind::BatchNorm,
        OpKind::SliceRows,
        OpKind::ConcatRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Conv2d => "conv2d",
            OpKind::ConvTranspose2d => "transposed-conv2d",
            OpKind::MaxPool2x2 => "max-pool2x2",
            OpKind::Upsample2x => "bilinear-upsample2x",
            OpKind::Add => "add",
            OpKind::AddBias => "add-bias",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::ScalarMul => "scalar-mul",
            OpKind::Relu => "relu",
            OpKind::LeakyRelu => "leaky-relu",
            OpKind::Tanh => "tanh",
            OpKind::Reshape => "reshape",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Abs => "abs",
            OpKind::Square => "square",
            OpKind::L2NormSquared => "L2-norm-squared",
            OpKind::BatchNorm => "batch-norm",
            OpKind::SliceRows => "slice-rows",
            OpKind::ConcatRows => "concat-rows",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = AutodiffError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| AutodiffError::UnknownOp(s.to_string()))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: OpKind,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("unknown op-kind `{0}`")]
    UnknownOp(String),
    #[error("backward root must be scalar (shape [1]), got {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("value count {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: {msg}")]
    InvalidArgument { op: OpKind, msg: String },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
