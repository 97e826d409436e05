use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::StepConfig;
use super::step::{cauchy_from, gd_from, newton_from, partitioned_from, Start};
use super::trace::StepTrace;
use crate::autodiff::{passes, Expr, ParamVector};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::scalar::{norm2, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gd,
    Cauchy,
    Newton,
    Partitioned,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Gd, Method::Cauchy, Method::Newton, Method::Partitioned];

    pub fn name(self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Cauchy => "cauchy",
            Method::Newton => "newton",
            Method::Partitioned => "partitioned",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown method `{s}`; valid methods: {}",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome<T> {
    pub theta: ParamVector<T>,
    pub traces: Vec<StepTrace>,
    /// Gradient norm at `theta`.
    pub grad_norm: T,
    pub loss: T,
    pub converged: bool,
}

/// A run that stopped on an error. `outcome` holds the last good point and
/// every completed step.
#[derive(Debug, thiserror::Error)]
#[error("run aborted after {} steps: {cause}", .outcome.traces.len())]
pub struct RunAbort<T: Scalar> {
    pub outcome: RunOutcome<T>,
    #[source]
    pub cause: Error,
}

/// Iterates `method` from `theta0` until `max_iters` steps or the gradient
/// norm reaches `grad_tol`.
pub fn run<T: Scalar>(
    f: &Expr<T>,
    theta0: &ParamVector<T>,
    method: Method,
    part: &Partition,
    cfg: &StepConfig<T>,
) -> std::result::Result<RunOutcome<T>, Box<RunAbort<T>>> {
    run_batched(|_| f.clone(), theta0, method, part, cfg)
}

/// Like [`run`], with the objective rebuilt per iteration (minibatches).
pub fn run_batched<T: Scalar>(
    mut objective: impl FnMut(usize) -> Expr<T>,
    theta0: &ParamVector<T>,
    method: Method,
    part: &Partition,
    cfg: &StepConfig<T>,
) -> std::result::Result<RunOutcome<T>, Box<RunAbort<T>>> {
    let mut outcome = RunOutcome {
        theta: theta0.clone(),
        traces: Vec::new(),
        grad_norm: T::nan(),
        loss: T::nan(),
        converged: false,
    };
    let abort = |outcome: RunOutcome<T>, cause| Box::new(RunAbort { outcome, cause });
    if let Err(e) = cfg.validate() {
        return Err(abort(outcome, e));
    }
    if method == Method::Partitioned && part.num_params() != theta0.len() {
        let e = Error::Length {
            what: "partition size",
            expected: theta0.len(),
            got: part.num_params(),
        };
        return Err(abort(outcome, e));
    }

    for iter in 0..=cfg.max_iters {
        let f = objective(iter);
        let theta = outcome.theta.clone();
        let (step, count) = passes::measure(|| -> Result<Option<_>> {
            let start = Start::at(&f, &theta)?;
            if !start.loss.is_finite() {
                return Err(Error::NonFinite(format!("loss is {} at iteration {iter}", start.loss)));
            }
            let gn = norm2(&start.grad);
            if !gn.is_finite() {
                return Err(Error::NonFinite(format!("gradient norm is {gn} at iteration {iter}")));
            }
            outcome.loss = start.loss;
            outcome.grad_norm = gn;
            if gn <= cfg.grad_tol || iter == cfg.max_iters {
                return Ok(None);
            }
            let (next, trace) = match method {
                Method::Gd => gd_from(&f, &theta, start, cfg)?,
                Method::Cauchy => cauchy_from(&f, &theta, start, cfg)?,
                Method::Newton => newton_from(&f, &theta, start, cfg)?,
                Method::Partitioned => partitioned_from(&f, &theta, start, part, cfg)?,
            };
            if !trace.loss_after.is_finite() || next.values().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "step {iter} produced loss {}",
                    trace.loss_after
                )));
            }
            Ok(Some((next, trace)))
        });
        match step {
            Ok(Some((next, mut trace))) => {
                trace.iter = iter;
                trace.passes = count;
                outcome.theta = next;
                outcome.traces.push(trace);
            }
            Ok(None) => {
                outcome.converged = outcome.grad_norm <= cfg.grad_tol;
                return Ok(outcome);
            }
            Err(e) => return Err(abort(outcome, e)),
        }
    }
    unreachable!("the last iteration always returns")
}
