//! Grid functions: plain vectors of nodal samples tagged with their role.

use crate::error::{Error, Result};
use crate::grid::Grid;
use nalgebra::DVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldRole {
    Forcing,
    Solution,
}

/// Samples of a function on the interior nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    pub values: DVector<f64>,
    pub role: FieldRole,
}

impl FieldVector {
    pub fn forcing(values: DVector<f64>) -> Self {
        Self { values, role: FieldRole::Forcing }
    }

    pub fn solution(values: DVector<f64>) -> Self {
        Self { values, role: FieldRole::Solution }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.values.len() != grid.total_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.total_nodes(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}
