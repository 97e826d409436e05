//! Finite-difference oracles built only from function values.
//!
//! Nothing here touches the reverse sweep or the tangent transform, so these
//! routines can cross-check them.

use ndarray::Array2;

use crate::autodiff::{Expr, ParamVector};
use crate::error::Result;
use crate::partition::Partition;
use crate::scalar::Scalar;

fn shifted<T: Scalar>(theta: &ParamVector<T>, dir: &[(usize, T)]) -> Result<ParamVector<T>> {
    let mut v = theta.values().to_vec();
    for &(i, h) in dir {
        v[i] = v[i] + h;
    }
    theta.with_values(v)
}

fn along<T: Scalar>(theta: &ParamVector<T>, u: &[T], t: T) -> Result<ParamVector<T>> {
    let v = theta
        .values()
        .iter()
        .zip(u)
        .map(|(&x, &d)| x + t * d)
        .collect();
    theta.with_values(v)
}

/// Central-difference gradient with step `h`.
pub fn fd_gradient<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>, h: T) -> Result<Vec<T>> {
    let two_h = h + h;
    (0..theta.len())
        .map(|i| {
            let fp = f.evaluate(&shifted(theta, &[(i, h)])?)?;
            let fm = f.evaluate(&shifted(theta, &[(i, -h)])?)?;
            Ok((fp - fm) / two_h)
        })
        .collect()
}

/// Central second differences of function values:
/// `H_ij ~ [f(+i+j) - f(+i-j) - f(-i+j) + f(-i-j)] / (4 h^2)`.
pub fn fd_hessian<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>, h: T) -> Result<Array2<T>> {
    let p = theta.len();
    let mut hess = Array2::zeros((p, p));
    let denom = T::lit(4.0) * h * h;
    for i in 0..p {
        for j in i..p {
            let fpp = f.evaluate(&shifted(theta, &[(i, h), (j, h)])?)?;
            let fpm = f.evaluate(&shifted(theta, &[(i, h), (j, -h)])?)?;
            let fmp = f.evaluate(&shifted(theta, &[(i, -h), (j, h)])?)?;
            let fmm = f.evaluate(&shifted(theta, &[(i, -h), (j, -h)])?)?;
            let v = (fpp - fpm - fmp + fmm) / denom;
            hess[[i, j]] = v;
            hess[[j, i]] = v;
        }
    }
    Ok(hess)
}

/// Central finite difference of `t -> f(theta + t u)` at 0, orders 1 to 3.
pub fn fd_directional<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    u: &[T],
    order: usize,
    h: T,
) -> Result<T> {
    let at = |k: f64| -> Result<T> { f.evaluate(&along(theta, u, T::lit(k) * h)?) };
    let two = T::lit(2.0);
    Ok(match order {
        1 => (at(1.0)? - at(-1.0)?) / (two * h),
        2 => (at(1.0)? - two * at(0.0)? + at(-1.0)?) / (h * h),
        3 => (at(2.0)? - two * at(1.0)? + two * at(-1.0)? - at(-2.0)?) / (two * h * h * h),
        _ => {
            return Err(crate::Error::InvalidArgument(format!(
                "finite-difference order {order} not supported"
            )))
        }
    })
}

/// `I_{S:P} G H_fd G I_{P:S}` with `G = diag(g)`, `g` and `H_fd` both from
/// finite differences.
pub fn fd_pseudo_hessian<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
    h_grad: T,
    h_hess: T,
) -> Result<Array2<T>> {
    let g = fd_gradient(f, theta, h_grad)?;
    let hess = fd_hessian(f, theta, h_hess)?;
    let s = part.len();
    let mut out = Array2::zeros((s, s));
    for a in 0..s {
        for b in 0..s {
            let mut acc = T::zero();
            for &p in part.group(a) {
                for &q in part.group(b) {
                    acc = acc + g[p] * hess[[p, q]] * g[q];
                }
            }
            out[[a, b]] = acc;
        }
    }
    Ok(out)
}
