use super::Matrix;
use crate::error::{Error, Result};

/// Activations paired with their derivative along the time input.
///
/// `tangent[(i, j)]` is d value[(i, j)] / dt for sample `i`, where `t` is the
/// sample's own time coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBatch {
    pub value: Matrix,
    pub tangent: Matrix,
}

impl DualBatch {
    pub fn new(value: Matrix, tangent: Matrix) -> Result<Self> {
        if value.shape() != tangent.shape() {
            return Err(Error::contract(format!(
                "dual batch value {:?} and tangent {:?} shapes differ",
                value.shape(),
                tangent.shape()
            )));
        }
        Ok(Self { value, tangent })
    }

    /// A batch whose tangent is identically zero.
    pub fn constant(value: Matrix) -> Self {
        let tangent = Matrix::zeros(value.rows(), value.cols());
        Self { value, tangent }
    }

    /// A batch seeded as the independent variable: tangent identically one.
    pub fn variable(value: Matrix) -> Self {
        let tangent = Matrix::filled(value.rows(), value.cols(), 1.0);
        Self { value, tangent }
    }

    pub fn rows(&self) -> usize {
        self.value.rows()
    }

    pub fn cols(&self) -> usize {
        self.value.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.tangent.is_finite()
    }
}
