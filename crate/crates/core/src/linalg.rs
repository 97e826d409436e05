//! Dense symmetric indefinite factorization `P A P^T = L D L^T` with
//! Bunch-Kaufman partial pivoting (1x1 and 2x2 pivots).

use ndarray::Array2;
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is numerically singular (pivot {index})")]
    Singular { index: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: matrix is {n}x{n}, right-hand side has {m} entries")]
    Dim { n: usize, m: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pivot<T> {
    One(T),
    /// `[[a, b], [b, c]]` occupying positions k and k+1.
    Two(T, T, T),
    /// Second row of a 2x2 block.
    Cont,
}

/// Factorization of a symmetric matrix; see the module docs.
#[derive(Debug, Clone)]
pub struct SymmetricFactor<T> {
    n: usize,
    l: Array2<T>,
    pivots: Vec<Pivot<T>>,
    perm: Vec<usize>,
}

/// Growth bound constant `(1 + sqrt(17)) / 8`.
fn bk_alpha<T: Scalar>() -> T {
    T::lit((1.0 + 17f64.sqrt()) / 8.0)
}

fn swap_sym<T: Scalar>(w: &mut Array2<T>, i: usize, j: usize) {
    let n = w.nrows();
    for c in 0..n {
        w.swap([i, c], [j, c]);
    }
    for r in 0..n {
        w.swap([r, i], [r, j]);
    }
}

impl<T: Scalar> SymmetricFactor<T> {
    /// Factors `a`, which must be symmetric. Only exactly-zero or
    /// numerically negligible pivots are rejected; indefinite matrices are fine.
    pub fn new(a: &Array2<T>) -> Result<Self, LinalgError> {
        let (rows, cols) = a.dim();
        if rows != cols {
            return Err(LinalgError::NotSquare { rows, cols });
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let n = rows;
        let anorm = a.iter().fold(T::zero(), |m, x| m.max(x.abs()));
        let tol = T::lit(n as f64 * T::EPS) * anorm;
        let alpha = bk_alpha::<T>();

        let mut w = a.clone();
        let mut l = Array2::<T>::eye(n);
        let mut pivots = vec![Pivot::Cont; n];
        let mut perm: Vec<usize> = (0..n).collect();

        let mut k = 0;
        while k < n {
            let absakk = w[[k, k]].abs();
            let (imax, colmax) = ((k + 1)..n)
                .map(|i| (i, w[[i, k]].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if absakk.max(colmax) <= tol {
                return Err(LinalgError::Singular { index: k });
            }
            let (kp, kstep) = if absakk >= alpha * colmax {
                (k, 1)
            } else {
                let rowmax = (k..n)
                    .filter(|&j| j != imax)
                    .map(|j| w[[imax, j]].abs())
                    .fold(T::zero(), T::max);
                if absakk * rowmax >= alpha * colmax * colmax {
                    (k, 1)
                } else if w[[imax, imax]].abs() >= alpha * rowmax {
                    (imax, 1)
                } else {
                    (imax, 2)
                }
            };
            let kk = k + kstep - 1;
            if kp != kk {
                swap_sym(&mut w, kk, kp);
                for c in 0..k {
                    l.swap([kk, c], [kp, c]);
                }
                perm.swap(kk, kp);
            }

            if kstep == 1 {
                let dk = w[[k, k]];
                if dk.abs() <= tol {
                    return Err(LinalgError::Singular { index: k });
                }
                pivots[k] = Pivot::One(dk);
                for i in (k + 1)..n {
                    l[[i, k]] = w[[i, k]] / dk;
                }
                for i in (k + 1)..n {
                    let li = l[[i, k]];
                    for j in (k + 1)..n {
                        w[[i, j]] = w[[i, j]] - li * w[[j, k]];
                    }
                }
            } else {
                let (a11, a21, a22) = (w[[k, k]], w[[k + 1, k]], w[[k + 1, k + 1]]);
                let det = a11 * a22 - a21 * a21;
                if det == T::zero() || !det.is_finite() {
                    return Err(LinalgError::Singular { index: k });
                }
                pivots[k] = Pivot::Two(a11, a21, a22);
                pivots[k + 1] = Pivot::Cont;
                for i in (k + 2)..n {
                    let (x, y) = (w[[i, k]], w[[i, k + 1]]);
                    l[[i, k]] = (x * a22 - y * a21) / det;
                    l[[i, k + 1]] = (y * a11 - x * a21) / det;
                }
                for i in (k + 2)..n {
                    let (li1, li2) = (l[[i, k]], l[[i, k + 1]]);
                    for j in (k + 2)..n {
                        w[[i, j]] = w[[i, j]] - li1 * w[[j, k]] - li2 * w[[j, k + 1]];
                    }
                }
            }
            k += kstep;
        }
        Ok(SymmetricFactor { n, l, pivots, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, LinalgError> {
        let n = self.n;
        if b.len() != n {
            return Err(LinalgError::Dim { n, m: b.len() });
        }
        let mut y: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s = s - self.l[[i, j]] * y[j];
            }
            y[i] = s;
        }
        let mut k = 0;
        while k < n {
            match self.pivots[k] {
                Pivot::One(d) => {
                    y[k] = y[k] / d;
                    k += 1;
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    let (u, v) = (y[k], y[k + 1]);
                    y[k] = (c * u - b * v) / det;
                    y[k + 1] = (a * v - b * u) / det;
                    k += 2;
                }
                Pivot::Cont => unreachable!("2x2 continuation visited"),
            }
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s = s - self.l[[j, i]] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(x)
    }

    /// Number of (positive, negative) eigenvalues, by Sylvester's law of inertia.
    pub fn inertia(&self) -> (usize, usize) {
        let (mut pos, mut neg) = (0, 0);
        for p in &self.pivots {
            match *p {
                Pivot::One(d) => {
                    if d > T::zero() {
                        pos += 1
                    } else {
                        neg += 1
                    }
                }
                Pivot::Two(a, b, c) => {
                    let det = a * c - b * b;
                    if det < T::zero() {
                        pos += 1;
                        neg += 1;
                    } else if a + c > T::zero() {
                        pos += 2;
                    } else {
                        neg += 2;
                    }
                }
                Pivot::Cont => {}
            }
        }
        (pos, neg)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.inertia() == (self.n, 0)
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> Result<Array2<T>, LinalgError> {
        let n = self.n;
        let mut inv = Array2::zeros((n, n));
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e[j] = T::one();
            let col = self.solve(&e)?;
            e[j] = T::zero();
            for i in 0..n {
                inv[[i, j]] = col[i];
            }
        }
        let half = T::lit(0.5);
        Ok(Array2::from_shape_fn((n, n), |(i, j)| {
            half * (inv[[i, j]] + inv[[j, i]])
        }))
    }
}

/// Solves the symmetric system `a x = b`.
pub fn solve_symmetric<T: Scalar>(a: &Array2<T>, b: &[T]) -> Result<Vec<T>, LinalgError> {
    SymmetricFactor::new(a)?.solve(b)
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix, dropping eigenvalues
/// below `rcond * max|eigenvalue|`. Returns the inverse and the kept rank.
pub fn symmetric_pseudo_inverse(a: &Array2<f64>, rcond: f64) -> (Array2<f64>, usize) {
    let n = a.nrows();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (a[[i, j]] + a[[j, i]]));
    let eig = m.symmetric_eigen();
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let cutoff = rcond * top;
    let mut out = Array2::zeros((n, n));
    let mut rank = 0;
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() <= cutoff || lam == 0.0 {
            continue;
        }
        rank += 1;
        let v = eig.eigenvectors.column(k);
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] += v[i] * v[j] / lam;
            }
        }
    }
    (out, rank)
}
