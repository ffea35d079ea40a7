use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LinearOperator, SolveReport};
use crate::error::{Error, Result};

/// Step-size policy for Landweber iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandweberStep {
    /// `0.9 / sigma_max^2`, with `sigma_max` from power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandweberConfig {
    max_iter: usize,
    step: LandweberStep,
    residual_tol: f64,
}

/// Power iterations used to estimate the operator norm for the automatic step.
pub const POWER_ITERATIONS: usize = 20;
const AUTO_STEP_SCALE: f64 = 0.9;

impl LandweberConfig {
    pub fn new(max_iter: usize, step: LandweberStep, residual_tol: f64) -> Result<Self> {
        if max_iter < 1 {
            return Err(Error::Config("landweber max_iter must be >= 1".into()));
        }
        if let LandweberStep::Fixed(s) = step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("landweber step must be positive, got {s}")));
            }
        }
        if !(residual_tol >= 0.0) {
            return Err(Error::Config(format!(
                "landweber residual_tol must be >= 0, got {residual_tol}"
            )));
        }
        Ok(Self {
            max_iter,
            step,
            residual_tol,
        })
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn step(&self) -> LandweberStep {
        self.step
    }

    pub fn residual_tol(&self) -> f64 {
        self.residual_tol
    }
}

impl Default for LandweberConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            step: LandweberStep::Auto,
            residual_tol: 1e-8,
        }
    }
}

/// Estimate of the largest singular value of `op` by power iteration on `op^T op`.
pub fn power_iteration_norm(op: &dyn LinearOperator, iterations: usize) -> f64 {
    let n = op.ncols();
    if n == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start vector
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.5 * ((i as f64) * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut sigma = 0.0;
    for _ in 0..iterations {
        let y = op.apply_transpose(&op.apply(&x));
        let ny = y.norm();
        if ny == 0.0 || !ny.is_finite() {
            return if ny == 0.0 { 0.0 } else { f64::NAN };
        }
        sigma = ny.sqrt();
        x = y / ny;
    }
    sigma
}

/// Classical Landweber iteration `x <- x + w A^T (b - A x)` for `A x = b`.
///
/// From a zero start it converges to the minimum-norm least-squares solution.
/// Stops when the normal-equation residual `||A^T (b - A x)||` drops to the
/// tolerance or after `max_iter` updates.
pub fn landweber_solve(
    op: &dyn LinearOperator,
    rhs: &DVector<f64>,
    init: &DVector<f64>,
    cfg: &LandweberConfig,
) -> Result<(DVector<f64>, SolveReport)> {
    if rhs.len() != op.nrows() {
        return Err(Error::dim("landweber rhs", op.nrows(), rhs.len()));
    }
    if init.len() != op.ncols() {
        return Err(Error::dim("landweber init", op.ncols(), init.len()));
    }
    let mut x = init.clone();
    let mut grad = op.apply_transpose(&(rhs - op.apply(&x)));
    let mut report = SolveReport {
        iterations: 0,
        residual_norm: grad.norm(),
        converged: false,
        least_squares_fallback: false,
    };
    report.converged = report.residual_norm <= cfg.residual_tol;
    if report.converged {
        return Ok((x, report));
    }

    let step = match cfg.step {
        LandweberStep::Fixed(s) => s,
        LandweberStep::Auto => {
            let sigma = power_iteration_norm(op, POWER_ITERATIONS);
            AUTO_STEP_SCALE / (sigma * sigma)
        }
    };
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("landweber step must be positive, got {step}")));
    }

    while !report.converged && report.iterations < cfg.max_iter {
        let next = &x + &grad * step;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                context: "landweber".into(),
                reason: format!("non-finite iterate after {} iterations", report.iterations),
                last_finite: Some(Box::new(nalgebra::DMatrix::from_column_slice(x.len(), 1, x.as_slice()))),
            });
        }
        x = next;
        grad = op.apply_transpose(&(rhs - op.apply(&x)));
        report.iterations += 1;
        report.residual_norm = grad.norm();
        report.converged = report.residual_norm <= cfg.residual_tol;
    }
    Ok((x, report))
}
