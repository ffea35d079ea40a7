//! Adjoint-state gradient descent at a fixed regularization weight.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::objective::{data_loss, data_loss_grad};
use super::regularizer::{hard_threshold, smooth_l1, smooth_l1_grad, RegularizerSpec};
use crate::error::{Error, Result};
use crate::model::{flatten_state, unflatten_state, ImplicitModel, ParamMatrix};
use crate::solvers::{landweber_solve, newton_solve, LandweberConfig, NewtonConfig, SolveReport, Transposed};

/// Starting point of each adjoint solve inside the inner loop.
///
/// `Cold` restarts Landweber from zero, so a truncated solve is a filtered
/// pseudo-inverse applied to the current right-hand side. `Warm` continues
/// from the previous multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdjointStart {
    Cold,
    #[default]
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    tau: f64,
    n_max: usize,
    n_es: usize,
    newton: NewtonConfig,
    landweber: LandweberConfig,
    #[serde(default)]
    adjoint_start: AdjointStart,
}

impl InnerConfig {
    pub fn new(tau: f64, n_max: usize, n_es: usize, newton: NewtonConfig, landweber: LandweberConfig) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::Config(format!("gradient step tau must be positive, got {tau}")));
        }
        if n_max < 1 {
            return Err(Error::Config("n_max must be >= 1".into()));
        }
        if n_es < 1 {
            return Err(Error::Config("n_es must be >= 1".into()));
        }
        Ok(Self {
            tau,
            n_max,
            n_es,
            newton,
            landweber,
            adjoint_start: AdjointStart::default(),
        })
    }

    pub fn with_adjoint_start(mut self, start: AdjointStart) -> Self {
        self.adjoint_start = start;
        self
    }

    pub fn adjoint_start(&self) -> AdjointStart {
        self.adjoint_start
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_es(&self) -> usize {
        self.n_es
    }

    pub fn newton(&self) -> &NewtonConfig {
        &self.newton
    }

    pub fn landweber(&self) -> &LandweberConfig {
        &self.landweber
    }
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            n_max: 1000,
            n_es: 5,
            newton: NewtonConfig::default(),
            landweber: LandweberConfig::default(),
            adjoint_start: AdjointStart::default(),
        }
    }
}

/// Starting point `(u, m, lambda)` of an inner solve.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub u: DMatrix<f64>,
    pub m: ParamMatrix,
    pub lambda: DMatrix<f64>,
}

impl WarmStart {
    /// `u = d`, `m = 0`, `lambda = 0`.
    pub fn from_data(model: &dyn ImplicitModel, d: &DMatrix<f64>) -> Self {
        let dims = model.dims();
        Self {
            u: d.clone(),
            m: ParamMatrix::zeros(dims.param_rows, dims.param_cols),
            lambda: DMatrix::zeros(dims.times, dims.components),
        }
    }
}

/// Snapshot of one level of the regularization path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub level: usize,
    pub alpha: f64,
    pub m: ParamMatrix,
    pub u: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub data_loss: f64,
    pub reg_value: f64,
    /// `data_loss + alpha * reg_value`.
    pub objective: f64,
    /// Objective evaluations performed (forward solves).
    pub inner_iterations: usize,
    /// Index of the returned (best) iterate.
    pub best_iteration: usize,
    pub stopped_early: bool,
    /// Largest gradient norm seen at this level.
    pub max_grad_norm: f64,
    /// Sum over iterations of the norm removed by hard thresholding.
    pub threshold_removed: f64,
    pub newton: SolveReport,
    pub landweber: SolveReport,
}

impl PathRecord {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            u: self.u.clone(),
            m: self.m.clone(),
            lambda: self.lambda.clone(),
        }
    }
}

/// `alpha * dg/dm - <lambda, dF/dm>`.
pub fn lagrangian_grad_m(
    model: &dyn ImplicitModel,
    u: &DMatrix<f64>,
    m: &ParamMatrix,
    lambda: &DMatrix<f64>,
    alpha: f64,
    spec: &RegularizerSpec,
) -> Result<ParamMatrix> {
    let pairing = model.jac_m_transpose_apply(u, m, lambda)?;
    let reg = smooth_l1_grad(m, spec);
    ParamMatrix::new(reg.values() * alpha - pairing.values())
}

/// Landweber solve of `[dF/du]^T lambda = rhs` warm-started at `lambda_init`.
pub fn solve_adjoint(
    model: &dyn ImplicitModel,
    u: &DMatrix<f64>,
    m: &ParamMatrix,
    rhs: &DMatrix<f64>,
    lambda_init: &DMatrix<f64>,
    cfg: &LandweberConfig,
) -> Result<(DMatrix<f64>, SolveReport)> {
    model.check_state(rhs)?;
    model.check_state(lambda_init)?;
    let jac = model.jac_u(u, m)?;
    let (lam, rep) = landweber_solve(&Transposed(&jac), &flatten_state(rhs), &flatten_state(lambda_init), cfg)?;
    Ok((unflatten_state(&lam, u.nrows(), u.ncols()), rep))
}

/// Everything produced by one pass of steps (i)-(iv) of the inner loop.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    /// Forward solution at the incoming parameters.
    pub u: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub data_loss: f64,
    pub reg_value: f64,
    pub objective: f64,
    pub grad: ParamMatrix,
    /// Parameters after the gradient step and optional thresholding.
    pub next_m: ParamMatrix,
    pub threshold_removed: f64,
    pub newton: SolveReport,
    pub landweber: SolveReport,
}

/// One adjoint gradient iteration at fixed `alpha` from `(u_warm, m, lambda_warm)`.
#[allow(clippy::too_many_arguments)]
pub fn inner_iteration(
    model: &dyn ImplicitModel,
    d: &DMatrix<f64>,
    alpha: f64,
    u_warm: &DMatrix<f64>,
    m: &ParamMatrix,
    lambda_warm: &DMatrix<f64>,
    cfg: &InnerConfig,
    spec: &RegularizerSpec,
) -> Result<IterationOutcome> {
    let (u, newton) = newton_solve(model, m, u_warm, &cfg.newton)?;
    let loss = data_loss(&u, d)?;
    let reg_value = smooth_l1(m, spec);
    let objective = loss + alpha * reg_value;

    let rhs = data_loss_grad(&u, d)?;
    let (lambda, landweber) = solve_adjoint(model, &u, m, &rhs, lambda_warm, &cfg.landweber)?;
    let grad = lagrangian_grad_m(model, &u, m, &lambda, alpha, spec)?;

    let stepped = ParamMatrix::new(m.values() - grad.values() * cfg.tau).map_err(|_| Error::Divergence {
        context: "gradient step".into(),
        reason: "non-finite parameters".into(),
        last_finite: Some(Box::new(m.values().clone())),
    })?;
    let (next_m, threshold_removed) = if spec.thresholding() {
        let t = hard_threshold(&stepped, alpha);
        let removed = (stepped.values() - t.values()).norm();
        (t, removed)
    } else {
        (stepped, 0.0)
    };
    Ok(IterationOutcome {
        u,
        lambda,
        data_loss: loss,
        reg_value,
        objective,
        grad,
        next_m,
        threshold_removed,
        newton,
        landweber,
    })
}

/// Inner loop at fixed `alpha`.
///
/// Runs up to `n_max` iterations of forward solve, adjoint solve, gradient
/// and update. The objective `h_d(u_m) + alpha g(m)` of each visited `m` is
/// tracked; once it fails to beat the running best for `n_es` consecutive
/// evaluations the loop stops. The best visited iterate is returned.
pub fn inner_solve(
    model: &dyn ImplicitModel,
    d: &DMatrix<f64>,
    alpha: f64,
    warm: &WarmStart,
    cfg: &InnerConfig,
    spec: &RegularizerSpec,
) -> Result<PathRecord> {
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    model.check_state(d)?;
    model.check_state(&warm.u)?;
    model.check_params(&warm.m)?;
    model.check_state(&warm.lambda)?;

    let mut u = warm.u.clone();
    let mut m = warm.m.clone();
    let mut lambda = warm.lambda.clone();
    let mut best: Option<PathRecord> = None;
    let mut since_best = 0;
    let mut max_grad_norm: f64 = 0.0;
    let mut threshold_removed = 0.0;
    let mut evaluations = 0;

    for i in 0..cfg.n_max {
        let lam0 = match cfg.adjoint_start {
            AdjointStart::Warm => lambda.clone(),
            AdjointStart::Cold => DMatrix::zeros(lambda.nrows(), lambda.ncols()),
        };
        let out = inner_iteration(model, d, alpha, &u, &m, &lam0, cfg, spec)
            .map_err(|e| e.with_context(format!("iteration {i}")))?;
        evaluations += 1;
        if !out.objective.is_finite() {
            return Err(Error::Divergence {
                context: format!("iteration {i}"),
                reason: "non-finite objective".into(),
                last_finite: best.map(|b| Box::new(b.m.values().clone())),
            });
        }
        max_grad_norm = max_grad_norm.max(out.grad.norm());
        threshold_removed += out.threshold_removed;

        let improved = best.as_ref().is_none_or(|b| out.objective < b.objective);
        if improved {
            best = Some(PathRecord {
                level: 0,
                alpha,
                m: m.clone(),
                u: out.u.clone(),
                lambda: out.lambda.clone(),
                data_loss: out.data_loss,
                reg_value: out.reg_value,
                objective: out.objective,
                inner_iterations: 0,
                best_iteration: i,
                stopped_early: false,
                max_grad_norm: 0.0,
                threshold_removed: 0.0,
                newton: out.newton,
                landweber: out.landweber,
            });
            since_best = 0;
        } else {
            since_best += 1;
        }

        u = out.u;
        lambda = out.lambda;
        m = out.next_m;

        if since_best >= cfg.n_es {
            break;
        }
    }

    let mut rec = best.expect("n_max >= 1 guarantees one evaluation");
    rec.inner_iterations = evaluations;
    rec.stopped_early = evaluations < cfg.n_max;
    rec.max_grad_norm = max_grad_norm;
    rec.threshold_removed = threshold_removed;
    Ok(rec)
}
