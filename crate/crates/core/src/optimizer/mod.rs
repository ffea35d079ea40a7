//! Regularized adjoint-state optimization and the homotopy over the
//! regularization weight.

mod homotopy;
mod inner;
mod objective;
mod regularizer;
mod schedule;

pub use homotopy::{homotopy_run, PathFailure};
pub use inner::{
    inner_iteration, inner_solve, lagrangian_grad_m, solve_adjoint, AdjointStart, InnerConfig, IterationOutcome,
    PathRecord, WarmStart,
};
pub use objective::{data_loss, data_loss_grad};
pub use regularizer::{hard_threshold, smooth_l1, smooth_l1_grad, RegularizerSpec, SmoothL1Form};
pub use schedule::{make_log_schedule, HomotopySchedule};
