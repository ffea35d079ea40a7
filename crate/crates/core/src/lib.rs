//! Adjoint-state homotopy solver for implicit inverse problems.
//!
//! Parameters `m` of an implicit constraint `F(u, m) = 0` are recovered from
//! noisy samples `d` of `u` by minimizing `||u_m - d||^2 + alpha g(m)` with
//! adjoint-state gradient descent, for a decreasing sequence of weights
//! `alpha`, each solve warm-started from the previous one. The concrete model
//! is a collocation discretization of `u' = Phi(u) m` over a basis library.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod config;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod solvers;
pub mod synth;

pub use basis::{cosine_basis, BasisLibrary};
pub use error::{Error, ErrorClass, Result};
pub use grid::{build_diff_matrix, build_uniform_grid, TimeGrid};
pub use model::{AdjointField, CollocationModel, DataVector, ImplicitModel, ParamMatrix, Trajectory};
pub use optimizer::{
    homotopy_run, inner_solve, lagrangian_grad_m, make_log_schedule, HomotopySchedule, InnerConfig, PathRecord,
    RegularizerSpec, WarmStart,
};
pub use solvers::{landweber_solve, newton_solve, LandweberConfig, NewtonConfig, SolveReport};
pub use synth::{add_noise, ground_truths, integrate_cauchy, CauchySpec, NoiseSpec};
