use ndarray::Array2;

use super::config::StepConfig;
use super::trace::StepStatus;
use crate::error::{Error, Result};
use crate::linalg::SymmetricFactor;
use crate::scalar::{dot, Scalar};
use crate::summaries::PseudoSystem;

/// Per-group rates and how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<T> {
    pub eta: Vec<T>,
    pub status: StepStatus,
    pub dropped: Vec<usize>,
}

fn max_abs<T: Scalar>(a: &Array2<T>) -> T {
    a.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Solves `a x = b` and accepts `x` when it is finite and `x . b > 0`.
fn try_descent<T: Scalar>(a: &Array2<T>, b: &[T]) -> Option<Vec<T>> {
    let x = SymmetricFactor::new(a).ok()?.solve(b).ok()?;
    (x.iter().all(|v| v.is_finite()) && dot(&x, b) > T::zero()).then_some(x)
}

/// Symmetric Jacobi scaling `1 / sqrt|a_kk|`, with the largest entry of the
/// row standing in for a zero diagonal.
fn jacobi_scaling<T: Scalar>(a: &Array2<T>) -> Vec<T> {
    (0..a.nrows())
        .map(|k| {
            let d = a[[k, k]].abs();
            let d = if d > T::zero() {
                d
            } else {
                a.row(k).iter().fold(T::zero(), |m, x| m.max(x.abs()))
            };
            if d > T::zero() && d.is_finite() {
                T::one() / d.sqrt()
            } else {
                T::one()
            }
        })
        .collect()
}

/// Solves `a x = b` after symmetric equilibration `D a D y = D b`, climbing
/// the ladder of diagonal shifts on the equilibrated matrix when the plain
/// solve fails or does not descend. Shifts are relative to its largest
/// entry. Returns the solution and the relative shift used, if any.
pub(crate) fn ladder_solve<T: Scalar>(
    a: &Array2<T>,
    b: &[T],
    ladder: &[T],
) -> Option<(Vec<T>, Option<T>)> {
    let d = jacobi_scaling(a);
    let scaled = Array2::from_shape_fn(a.dim(), |(i, j)| d[i] * a[[i, j]] * d[j]);
    let rhs: Vec<T> = b.iter().zip(&d).map(|(&x, &s)| x * s).collect();
    let unscale = |y: Vec<T>| -> Vec<T> { y.iter().zip(&d).map(|(&v, &s)| v * s).collect() };
    if let Some(y) = try_descent(&scaled, &rhs) {
        return Some((unscale(y), None));
    }
    let scale = match max_abs(&scaled) {
        m if m > T::zero() && m.is_finite() => m,
        _ => T::one(),
    };
    for &rel in ladder {
        let shift = rel * scale;
        let mut shifted = scaled.clone();
        for k in 0..shifted.nrows() {
            shifted[[k, k]] = shifted[[k, k]] + shift;
        }
        if let Some(y) = try_descent(&shifted, &rhs) {
            return Some((unscale(y), Some(rel)));
        }
    }
    None
}

/// Rates `eta` with `(hbar + epsilon Diag(r)) eta = gbar` over the groups
/// with nonzero pseudo-gradient. See [`StepConfig`] for the fallback policy.
pub fn solve_pseudo_system<T: Scalar>(
    sys: &PseudoSystem<T>,
    cfg: &StepConfig<T>,
    r: Option<&[T]>,
) -> Result<Solution<T>> {
    let s = sys.size();
    if sys.hbar.dim() != (s, s) {
        return Err(Error::Length {
            what: "pseudo-Hessian rows",
            expected: s,
            got: sys.hbar.nrows(),
        });
    }
    let reg = if cfg.epsilon > T::zero() {
        let r = r.ok_or_else(|| {
            Error::InvalidArgument("epsilon > 0 needs a regularization vector".into())
        })?;
        if r.len() != s {
            return Err(Error::Length {
                what: "regularization vector",
                expected: s,
                got: r.len(),
            });
        }
        Some(r)
    } else {
        None
    };

    let active: Vec<usize> = (0..s).filter(|&k| sys.gbar[k] != T::zero()).collect();
    let dropped: Vec<usize> = (0..s).filter(|&k| sys.gbar[k] == T::zero()).collect();
    let clean_status = || {
        if dropped.is_empty() {
            StepStatus::Clean
        } else {
            StepStatus::ZeroGroupsDropped {
                groups: dropped.clone(),
            }
        }
    };
    if active.is_empty() {
        return Ok(Solution {
            eta: vec![T::zero(); s],
            status: clean_status(),
            dropped,
        });
    }

    let k = active.len();
    let a = Array2::from_shape_fn((k, k), |(i, j)| {
        let v = sys.hbar[[active[i], active[j]]];
        match (reg, i == j) {
            (Some(r), true) => v + cfg.epsilon * r[active[i]],
            _ => v,
        }
    });
    let b: Vec<T> = active.iter().map(|&i| sys.gbar[i]).collect();

    if let Some((x, shift)) = ladder_solve(&a, &b, &cfg.ladder) {
        let mut eta = vec![T::zero(); s];
        for (&i, &v) in active.iter().zip(&x) {
            eta[i] = v;
        }
        let status = match shift {
            None => clean_status(),
            Some(sh) => StepStatus::Regularized {
                shift: sh.to_f64_lossy(),
            },
        };
        return Ok(Solution {
            eta,
            status,
            dropped,
        });
    }

    if !cfg.cauchy_fallback {
        return Err(Error::Solver(format!(
            "Levenberg ladder exhausted on a {s}x{s} pseudo-system \
             (max |hbar| = {:e}, sum gbar = {:e}, 1'hbar1 = {:e})",
            max_abs(&sys.hbar).to_f64_lossy(),
            sys.total_gradient().to_f64_lossy(),
            sys.total_curvature().to_f64_lossy(),
        )));
    }
    let curv = sys.total_curvature();
    let (rate, status) = if curv > T::zero() && curv.is_finite() {
        (sys.total_gradient() / curv, StepStatus::CauchyFallback)
    } else {
        (T::one(), StepStatus::GdFallback)
    };
    Ok(Solution {
        eta: vec![rate; s],
        status,
        dropped,
    })
}
