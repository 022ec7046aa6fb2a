use ndarray::{Array1, Array2, Axis};

use crate::error::{dim_check, Error, Result};

/// Covariates and scalar responses, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        dim_check("dataset rows", x.nrows(), y.len())?;
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
        }
    }

    pub fn ensure_nonempty(&self, what: &str) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyData(what.to_string()));
        }
        Ok(())
    }
}
