//! Minimal row-major matrix of `f64` used for features, weights, and
//! activations. Values are validated to be finite at construction; the few
//! mutating entry points used by training keep that invariant because they
//! only write results of finite arithmetic on finite inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Tensor2D {
    /// Wraps a row-major buffer. Errors if the length is not `rows * cols`
    /// or any value is non-finite.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::shape(format!(
                "expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite value {} at flat index {pos}",
                values[pos]
            )));
        }
        Ok(Tensor2D { rows, cols, values })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("cannot build a matrix from zero rows"));
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::shape(format!(
                "row 0 has {cols} columns but row {bad} has {}",
                rows[bad].len()
            )));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Entry at `(row, col)`. Panics on out-of-range indices, matching slice
    /// indexing behaviour.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.rows && col < self.cols, "index out of range");
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(row < self.rows && col < self.cols, "index out of range");
        self.values[row * self.cols + col] = value;
    }

    /// Borrow of one row.
    pub fn row(&self, row: usize) -> &[f64] {
        assert!(row < self.rows, "row out of range");
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        assert!(row < self.rows, "row out of range");
        &mut self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Flat row-major view of all values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Iterator over row slices.
    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length_and_finiteness() {
        assert!(Tensor2D::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor2D::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor2D::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Tensor2D::new(2, 2, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor2D::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.get(0, 0), 1.0);
        assert_eq!(t.get(0, 2), 3.0);
        assert_eq!(t.get(1, 0), 4.0);
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn from_rows_rejects_ragged_input() {
        let err = Tensor2D::from_rows(&[vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    #[should_panic(expected = "index out of range")]
    fn get_panics_out_of_range() {
        Tensor2D::zeros(1, 1).get(0, 1);
    }
}
