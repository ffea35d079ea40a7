//! Inexact inner solvers: Newton-Raphson for the forward constraint and
//! Landweber iteration for the linear adjoint system.

mod landweber;
mod newton;

pub use landweber::{landweber_solve, power_iteration_norm, LandweberConfig, LandweberStep};
pub use newton::{newton_solve, NewtonConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Outcome of an inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual_norm: f64,
    pub converged: bool,
    /// Newton only: a singular Jacobian forced a least-squares step.
    pub least_squares_fallback: bool,
}

/// A linear map together with its adjoint.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(y)
    }
}

/// View of `A^T` for a matrix `A`, without materializing the transpose.
pub struct Transposed<'a>(pub &'a DMatrix<f64>);

impl LinearOperator for Transposed<'_> {
    fn nrows(&self) -> usize {
        self.0.ncols()
    }

    fn ncols(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.0.tr_mul(x)
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.0 * y
    }
}
