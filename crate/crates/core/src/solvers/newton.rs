use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SolveReport;
use crate::error::{Error, Result};
use crate::model::{flatten_state, unflatten_state, ImplicitModel, ParamMatrix};

/// Newton-Raphson settings for `F(u, m) = 0` at fixed `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NewtonConfig {
    max_iter: usize,
    residual_tol: f64,
    step_damping: f64,
    max_halvings: usize,
}

impl NewtonConfig {
    pub fn new(max_iter: usize, residual_tol: f64, step_damping: f64) -> Result<Self> {
        if max_iter < 1 {
            return Err(Error::Config("newton max_iter must be >= 1".into()));
        }
        if !(residual_tol >= 0.0) {
            return Err(Error::Config(format!(
                "newton residual_tol must be >= 0, got {residual_tol}"
            )));
        }
        if !(step_damping > 0.0 && step_damping <= 1.0) {
            return Err(Error::Config(format!(
                "newton damping must lie in (0, 1], got {step_damping}"
            )));
        }
        Ok(Self {
            max_iter,
            residual_tol,
            step_damping,
            max_halvings: 5,
        })
    }

    /// Number of step halvings tried when a step increases `||F||`; 0 disables backtracking.
    pub fn with_max_halvings(mut self, halvings: usize) -> Self {
        self.max_halvings = halvings;
        self
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn residual_tol(&self) -> f64 {
        self.residual_tol
    }

    pub fn step_damping(&self) -> f64 {
        self.step_damping
    }

    pub fn max_halvings(&self) -> usize {
        self.max_halvings
    }
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            residual_tol: 1e-8,
            step_damping: 1.0,
            max_halvings: 5,
        }
    }
}

/// Solve `J delta = r`, falling back to an SVD least-squares solution when
/// the LU factorization is singular. The flag reports the fallback.
fn newton_direction(jac: DMatrix<f64>, r: &nalgebra::DVector<f64>) -> (nalgebra::DVector<f64>, bool) {
    let lu = jac.clone().lu();
    if let Some(delta) = lu.solve(r) {
        if delta.iter().all(|v| v.is_finite()) {
            return (delta, false);
        }
    }
    let svd = jac.svd(true, true);
    let eps = svd.singular_values.max() * f64::EPSILON * r.len() as f64;
    let delta = svd.solve(r, eps).unwrap_or_else(|_| nalgebra::DVector::zeros(r.len()));
    (delta, true)
}

fn divergence(context: &str, last: &DMatrix<f64>) -> Error {
    Error::Divergence {
        context: context.to_string(),
        reason: "non-finite Newton iterate".into(),
        last_finite: Some(Box::new(last.clone())),
    }
}

/// Newton-Raphson on `F(., m) = 0` from `u_init`.
///
/// Returns the last iterate even when the tolerance is not met; callers rely
/// on inexact solves. Steps that increase the residual norm are halved up to
/// `max_halvings` times, after which the last trial step is taken anyway.
pub fn newton_solve(
    model: &dyn ImplicitModel,
    m: &ParamMatrix,
    u_init: &DMatrix<f64>,
    cfg: &NewtonConfig,
) -> Result<(DMatrix<f64>, SolveReport)> {
    model.check_state(u_init)?;
    model.check_params(m)?;
    let (t, nu) = (u_init.nrows(), u_init.ncols());

    let mut u = u_init.clone();
    let mut res = model.residual(&u, m)?;
    let mut norm = res.norm();
    if !norm.is_finite() {
        return Err(divergence("newton: initial residual", &u));
    }
    let mut report = SolveReport {
        iterations: 0,
        residual_norm: norm,
        converged: norm <= cfg.residual_tol,
        least_squares_fallback: false,
    };

    while !report.converged && report.iterations < cfg.max_iter {
        let jac = model.jac_u(&u, m)?;
        let (delta, fallback) = newton_direction(jac, &flatten_state(&res));
        report.least_squares_fallback |= fallback;
        let delta = unflatten_state(&delta, t, nu);

        let mut step = cfg.step_damping;
        let mut halvings = 0;
        let (next, next_res, next_norm) = loop {
            let cand = &u - &delta * step;
            let cand_res = model.residual(&cand, m)?;
            let cand_norm = cand_res.norm();
            let worse = !cand_norm.is_finite() || cand_norm > norm;
            if worse && halvings < cfg.max_halvings {
                step *= 0.5;
                halvings += 1;
                continue;
            }
            break (cand, cand_res, cand_norm);
        };
        if !next_norm.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(divergence("newton", &u));
        }
        u = next;
        res = next_res;
        norm = next_norm;
        report.iterations += 1;
        report.residual_norm = norm;
        report.converged = norm <= cfg.residual_tol;
    }
    Ok((u, report))
}
