//! Second-order steps over a partition of the parameters, and baselines.
//!
//! The partitioned step solves the `S x S` pseudo-system for one learning
//! rate per group and moves each parameter by its gradient times its group's
//! rate. With the trivial partition this is Cauchy's steepest descent, and
//! with the discrete partition (and a gradient without zeros) it is Newton's
//! method.

mod config;
mod run;
mod solve;
mod step;
mod trace;

pub use config::{default_ladder, StepConfig};
pub use run::{run, run_batched, Method, RunAbort, RunOutcome};
pub use solve::{solve_pseudo_system, Solution};
pub use step::{cauchy_step, dense_hessian, gd_step, newton_step, partitioned_newton_step};
pub use trace::{traces_from_json, traces_to_csv, traces_to_json, StepStatus, StepTrace};

#[cfg(test)]
mod tests;
