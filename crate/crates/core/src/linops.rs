//! Linear observation operators `A : R^{n1 x n2} -> R^P`.
//!
//! Only entry masking ships. The [`LinearOperator`] trait is what the solver
//! and the risk estimators are written against, so other operators can be
//! plugged in later without touching them.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type ObsVector = DVector<f64>;

pub trait LinearOperator: Sync {
    /// Shape `(n1, n2)` of the matrices the operator acts on.
    fn shape(&self) -> (usize, usize);

    /// Number of observations `P`.
    fn num_obs(&self) -> usize;

    fn apply(&self, x: &Matrix) -> Result<ObsVector>;

    fn adjoint(&self, v: &ObsVector) -> Result<Matrix>;

    /// Upper bound on `||A* A||`.
    ///
    /// The default runs [`estimate_norm_sq`] and inflates the estimate by 1%
    /// so that step sizes derived from it stay admissible.
    fn operator_norm_sq(&self) -> f64 {
        estimate_norm_sq(self, 1e-6, 1000) * 1.01
    }
}

/// Power iteration on `A* A` started from the all-ones matrix.
///
/// Stops when the Rayleigh quotient changes by less than `rel_tol`
/// relative to its current value.
pub fn estimate_norm_sq<L: LinearOperator + ?Sized>(op: &L, rel_tol: f64, max_iters: usize) -> f64 {
    let (rows, cols) = op.shape();
    if op.num_obs() == 0 || rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut x = Matrix::from_element(rows, cols, 1.0 / ((rows * cols) as f64).sqrt());
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let ax = op.apply(&x).expect("shape fixed by operator");
        let next = op.adjoint(&ax).expect("length fixed by operator");
        let quotient = x.dot(&next);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        x = next / norm;
        let converged = (quotient - estimate).abs() <= rel_tol * quotient.abs();
        estimate = quotient;
        if converged {
            break;
        }
    }
    estimate
}

/// Entry-sampling operator: `A(X) = (X[i_p, j_p])_p`.
///
/// The order of `indices` is the coordinate system of observation vectors
/// and is kept exactly as given.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskOperator {
    rows: usize,
    cols: usize,
    indices: Vec<(usize, usize)>,
}

impl MaskOperator {
    pub fn new(rows: usize, cols: usize, indices: Vec<(usize, usize)>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Parameter(format!(
                "mask shape must be positive, got {rows}x{cols}"
            )));
        }
        let mut seen = HashSet::with_capacity(indices.len());
        for &(i, j) in &indices {
            if i >= rows || j >= cols {
                return Err(Error::Dimension(format!(
                    "entry ({i}, {j}) outside a {rows}x{cols} matrix"
                )));
            }
            if !seen.insert((i, j)) {
                return Err(Error::Parameter(format!("entry ({i}, {j}) listed twice")));
            }
        }
        Ok(Self {
            rows,
            cols,
            indices,
        })
    }

    /// Observes every entry, in row-major order.
    pub fn full(rows: usize, cols: usize) -> Result<Self> {
        let indices = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .collect();
        Self::new(rows, cols, indices)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }

    /// Boolean mask of observed entries.
    pub fn support(&self) -> DMatrix<bool> {
        let mut mask = DMatrix::from_element(self.rows, self.cols, false);
        for &(i, j) in &self.indices {
            mask[(i, j)] = true;
        }
        mask
    }

    fn check_shape(&self, x: &Matrix) -> Result<()> {
        if x.shape() != (self.rows, self.cols) {
            return Err(Error::Dimension(format!(
                "operator expects {}x{} matrices, got {}x{}",
                self.rows,
                self.cols,
                x.nrows(),
                x.ncols()
            )));
        }
        Ok(())
    }
}

impl LinearOperator for MaskOperator {
    fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn num_obs(&self) -> usize {
        self.indices.len()
    }

    fn apply(&self, x: &Matrix) -> Result<ObsVector> {
        self.check_shape(x)?;
        Ok(ObsVector::from_iterator(
            self.indices.len(),
            self.indices.iter().map(|&(i, j)| x[(i, j)]),
        ))
    }

    fn adjoint(&self, v: &ObsVector) -> Result<Matrix> {
        if v.len() != self.indices.len() {
            return Err(Error::Dimension(format!(
                "operator has {} observations, vector has length {}",
                self.indices.len(),
                v.len()
            )));
        }
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (&(i, j), &value) in self.indices.iter().zip(v.iter()) {
            out[(i, j)] = value;
        }
        Ok(out)
    }

    /// Masking is a coordinate restriction, so `A* A` is an orthogonal
    /// projection: its norm is 1 unless nothing is observed.
    fn operator_norm_sq(&self) -> f64 {
        if self.indices.is_empty() {
            0.0
        } else {
            1.0
        }
    }
}
