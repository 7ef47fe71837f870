//! Dense f32 tensors with a minimal reverse-mode autodiff graph.
//!
//! Everything here is deterministic: no threading, no reductions with
//! data-dependent order. Two runs with the same seeds produce bit-identical
//! values and gradients.

pub mod fdcheck;
mod graph;
mod init;
mod optim;


pub use graph::{Graph, NodeId};
pub use init::{init_params, InitScheme, TRUNC_NORMAL_VAR_FACTOR};
pub use optim::{Optimizer, Param};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank-{expected} tensor, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("conv2d: output dim not integral: ({input} - {filter}) / {stride} + 1")]
    NonIntegralConvOutput {
        input: usize,
        filter: usize,
        stride: usize,
    },
    #[error("{op}: non-finite input")]
    Numeric { op: &'static str },
    #[error("softmax_cross_entropy: row {row} of labels is not one-hot")]
    BadLabel { row: usize },
    #[error("backward: loss must be scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("optimizer: parameter `{name}` has no gradient")]
    MissingGrad { name: String },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// A dense row-major f32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows / columns of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One-hot row matrix, used for labels and task identifiers.
    pub fn one_hot(indices: &[usize], width: usize) -> Self {
        let mut data = vec![0.0; indices.len() * width];
        for (r, &i) in indices.iter().enumerate() {
            assert!(i < width, "one_hot index {} out of range {}", i, width);
            data[r * width + i] = 1.0;
        }
        Tensor::new(vec![indices.len(), width], data)
    }
}
