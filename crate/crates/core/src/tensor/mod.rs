//! Dense f64 tensors and a tape-based reverse-mode differentiation graph.
//!
//! Every model operation is expressed in terms of the primitives in
//! [`Graph`]: matrix products, elementwise nonlinearities, masked softmax,
//! layer normalization, embedding gathers, concatenation/slicing and
//! Euclidean row distances. The graph is rebuilt for every forward pass;
//! parameters live in a [`ParamStore`] and are bound into a graph as leaves.

mod graph;
mod ops;
mod params;

pub use graph::{BackwardFault, Graph, OpKind, Var};
pub use params::{Param, ParamId, ParamStore, Role};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("softmax row {row} is fully masked")]
    DegenerateRow { row: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("index {index} out of range for extent {extent} in {op}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("invalid tensor: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of f64 values.
///
/// Rank 0 (`shape == []`) holds one scalar, rank 1 is treated as a single
/// row wherever a matrix is expected.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(TensorError::Invalid(format!("zero extent in {shape:?}")));
        }
        if n != data.len() {
            return Err(TensorError::Invalid(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::Invalid("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` view: scalars are 1×1, vectors 1×n.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [m, n] => (*m, *n),
            s => {
                let last = *s.last().unwrap();
                (self.data.len() / last, last)
            }
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::Dimension {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }
}
