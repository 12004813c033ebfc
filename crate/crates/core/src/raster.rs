//! Real-valued rasters in the crate's canonical pixel order.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, SlemError};
use crate::grid::GridSpec;

/// An `n1 x n2` raster stored with `i1` varying fastest. `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    n1: usize,
    n2: usize,
    values: Vec<f64>,
}

impl Raster {
    pub fn new(n1: usize, n2: usize, values: Vec<f64>) -> Result<Self> {
        if n1 == 0 || n2 == 0 {
            return Err(SlemError::InvalidGrid(format!("raster dimensions {n1}x{n2}")));
        }
        check_len("raster values", n1 * n2, values.len())?;
        Ok(Raster { n1, n2, values })
    }

    pub fn on_grid(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        Raster::new(grid.n1(), grid.n2(), values)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[i2 * self.n1 + i1]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster {
            n1: self.n1,
            n2: self.n2,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if (self.n1, self.n2) != (grid.n1(), grid.n2()) {
            return Err(SlemError::InvalidInput(format!(
                "raster is {}x{} but the grid is {}x{}",
                self.n1,
                self.n2,
                grid.n1(),
                grid.n2()
            )));
        }
        Ok(())
    }
}
