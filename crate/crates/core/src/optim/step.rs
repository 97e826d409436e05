use std::time::Instant;

use ndarray::Array2;

use super::config::StepConfig;
use super::solve::{ladder_solve, solve_pseudo_system};
use super::trace::{StepStatus, StepTrace};
use crate::autodiff::{passes, Expr, ParamVector};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::scalar::{dot, norm2, Scalar};
use crate::summaries::{par_map, pseudo_hessian_from, regularization_vector};

/// Loss and gradient at the current point, shared with the run loop so the
/// stopping test does not cost an extra pass.
pub(crate) struct Start<T> {
    pub loss: T,
    pub grad: Vec<T>,
}

impl<T: Scalar> Start<T> {
    pub fn at(f: &Expr<T>, theta: &ParamVector<T>) -> Result<Self> {
        let (loss, grad) = f.value_and_gradient(theta)?;
        Ok(Start { loss, grad })
    }
}

/// What a method produced before the update is applied.
struct Proposal<T> {
    /// Update is `theta - damping * direction`.
    direction: Vec<T>,
    eta: Vec<T>,
    status: StepStatus,
    dropped: Vec<usize>,
}

fn f64s<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64_lossy()).collect()
}

/// Applies the update and evaluates the new loss, backtracking on the update
/// length when `cfg.line_search` is set.
fn apply<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    loss: T,
    direction: &[T],
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, T)> {
    let moved = |t: T| {
        let v = theta
            .values()
            .iter()
            .zip(direction)
            .map(|(&x, &d)| x - t * d)
            .collect();
        theta.with_values(v)
    };
    let mut t = cfg.damping;
    let mut next = moved(t)?;
    let mut value = f.evaluate(&next);
    if cfg.line_search {
        let half = T::lit(0.5);
        for _ in 0..40 {
            match &value {
                Ok(v) if v.is_finite() && *v <= loss => break,
                _ => {}
            }
            t = t * half;
            next = moved(t)?;
            value = f.evaluate(&next);
        }
    }
    Ok((next, value?))
}

fn finish<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    start: &Start<T>,
    prop: Proposal<T>,
    cfg: &StepConfig<T>,
    clock: Instant,
) -> Result<(ParamVector<T>, StepTrace)> {
    let (next, after) = apply(f, theta, start.loss, &prop.direction, cfg)?;
    Ok((
        next,
        StepTrace {
            iter: 0,
            loss_before: start.loss.to_f64_lossy(),
            loss_after: after.to_f64_lossy(),
            grad_norm: norm2(&start.grad).to_f64_lossy(),
            eta: f64s(&prop.eta),
            status: prop.status,
            dropped: prop.dropped,
            passes: Default::default(),
            wall_time: clock.elapsed().as_secs_f64(),
        },
    ))
}

/// Runs `body`, then stores the passes it consumed in the trace.
fn counted<T: Scalar>(
    body: impl FnOnce() -> Result<(ParamVector<T>, StepTrace)>,
) -> Result<(ParamVector<T>, StepTrace)> {
    let (out, count) = passes::measure(body);
    let (theta, mut trace) = out?;
    trace.passes = count;
    Ok((theta, trace))
}

pub(crate) fn partitioned_from<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    start: Start<T>,
    part: &Partition,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    let clock = Instant::now();
    let sys = pseudo_hessian_from(f, theta, part, start.loss, start.grad.clone(), true)?;
    let r = if cfg.epsilon > T::zero() {
        Some(regularization_vector(f, theta, part, cfg.regularization)?.values)
    } else {
        None
    };
    let sol = solve_pseudo_system(&sys, cfg, r.as_deref())?;
    let rates = part.broadcast(&sol.eta)?;
    let direction = start.grad.iter().zip(&rates).map(|(&g, &e)| g * e).collect();
    let prop = Proposal {
        direction,
        eta: sol.eta,
        status: sol.status,
        dropped: sol.dropped,
    };
    finish(f, theta, &start, prop, cfg, clock)
}

/// `theta - damping * (g .* broadcast(eta))` with `eta` from the
/// pseudo-system.
pub fn partitioned_newton_step<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    counted(|| partitioned_from(f, theta, Start::at(f, theta)?, part, cfg))
}

pub(crate) fn cauchy_from<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    start: Start<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    let clock = Instant::now();
    let gg = dot(&start.grad, &start.grad);
    let (rate, status) = if gg == T::zero() {
        (T::zero(), StepStatus::Clean)
    } else {
        let hg = f.hvp(theta, &start.grad)?;
        let ghg = dot(&start.grad, &hg);
        if ghg > T::zero() && ghg.is_finite() {
            (gg / ghg, StepStatus::Clean)
        } else {
            (T::one(), StepStatus::GdFallback)
        }
    };
    let prop = Proposal {
        direction: start.grad.iter().map(|&g| g * rate).collect(),
        eta: vec![rate],
        status,
        dropped: Vec::new(),
    };
    finish(f, theta, &start, prop, cfg, clock)
}

/// Steepest descent with the exact quadratic-model step `g'g / g'Hg`, scaled
/// by the damping.
pub fn cauchy_step<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    counted(|| cauchy_from(f, theta, Start::at(f, theta)?, cfg))
}

/// Dense Hessian from `P` Hessian-vector products, symmetrized.
pub fn dense_hessian<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>) -> Result<Array2<T>> {
    let p = theta.len();
    let basis: Vec<usize> = (0..p).collect();
    let cols = par_map(&basis, true, |&i| {
        let mut e = vec![T::zero(); p];
        e[i] = T::one();
        f.hvp(theta, &e)
    })?;
    let half = T::lit(0.5);
    Ok(Array2::from_shape_fn((p, p), |(i, j)| half * (cols[j][i] + cols[i][j])))
}

pub(crate) fn newton_from<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    start: Start<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    let clock = Instant::now();
    let p = theta.len();
    if p > cfg.newton_budget {
        return Err(Error::Budget(format!(
            "dense Newton needs the full {p}x{p} Hessian; limit is P = {}",
            cfg.newton_budget
        )));
    }
    let (direction, status) = if start.grad.iter().all(|&g| g == T::zero()) {
        (vec![T::zero(); p], StepStatus::Clean)
    } else {
        let h = dense_hessian(f, theta)?;
        let (d, shift) = ladder_solve(&h, &start.grad, &cfg.ladder).ok_or_else(|| {
            Error::Solver(format!("Hessian stays singular or indefinite after the ladder (P = {p})"))
        })?;
        let status = match shift {
            None => StepStatus::Clean,
            Some(s) => StepStatus::Regularized {
                shift: s.to_f64_lossy(),
            },
        };
        (d, status)
    };
    let prop = Proposal {
        direction,
        eta: Vec::new(),
        status,
        dropped: Vec::new(),
    };
    finish(f, theta, &start, prop, cfg, clock)
}

/// Damped Newton: `theta - damping * H^{-1} g`.
pub fn newton_step<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    counted(|| newton_from(f, theta, Start::at(f, theta)?, cfg))
}

pub(crate) fn gd_from<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    start: Start<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    let clock = Instant::now();
    let prop = Proposal {
        direction: start.grad.clone(),
        eta: vec![T::one()],
        status: StepStatus::Clean,
        dropped: Vec::new(),
    };
    finish(f, theta, &start, prop, cfg, clock)
}

/// `theta - damping * g`.
pub fn gd_step<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    cfg: &StepConfig<T>,
) -> Result<(ParamVector<T>, StepTrace)> {
    counted(|| gd_from(f, theta, Start::at(f, theta)?, cfg))
}
