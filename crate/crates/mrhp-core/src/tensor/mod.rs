//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything differentiable in the model is built from the ops on [`Tape`]:
//! a Wengert tape records each forward op into an arena, and [`Tape::backward`]
//! replays the record in reverse, accumulating gradients into the leaves.

mod adam;
mod gradcheck;
mod tape;

pub use adam::AdamState;
pub use gradcheck::{grad_check, grad_check_configured, GradCheckReport};
pub use tape::{PoolMode, Tape, TensorId};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch between shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: axis {axis} is out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: nothing to reduce along axis {axis} (empty extent)")]
    EmptyAxis { op: &'static str, axis: usize },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("data of length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("conv1d: input length {len} is shorter than kernel width {width}; pad the input or use a narrower kernel")]
    KernelWiderThanInput { len: usize, width: usize },
    #[error("embed: token id {id} out of range for table with {rows} rows")]
    TokenOutOfRange { id: usize, rows: usize },
    #[error("{op}: slice {start}..{end} out of bounds for extent {extent}")]
    SliceOutOfBounds {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("cosine_sim: zero-norm operand")]
    ZeroNorm,
    #[error("adam_step: parameter and state shapes disagree ({params} params, {state} state slots)")]
    AdamShapeMismatch { params: usize, state: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major f64 tensor.
///
/// Invariants: `data.len() == shape.iter().product()`, all values finite,
/// and `grad` (when present) has the same length as `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(vec![1], vec![v]).expect("finite scalar")
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Tensor::new(vec![len], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Build a matrix from row slices; rows must all have the same width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    lhs: vec![c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![r, c], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// First (and only) element of a scalar tensor.
    pub fn scalar_value(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub(crate) fn grad_mut(&mut self) -> &mut Option<Vec<f64>> {
        &mut self.grad
    }

    pub(crate) fn clear_grad(&mut self) {
        self.grad = None;
    }
}
