use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Expr, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Random quadratic `1/2 (theta - c)' A (theta - c)` with `A = Q diag(lambda) Q'`,
/// `Q` a seeded random orthogonal matrix, eigenvalues uniform in
/// `[eig_min, eig_max]` and `c` uniform in `[-1, 1]^P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub eig_min: f64,
    pub eig_max: f64,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            dim: 4,
            eig_min: 0.1,
            eig_max: 10.0,
            seed: 0,
        }
    }
}

impl QuadraticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("quadratic dimension must be >= 1".into()));
        }
        if !self.eig_min.is_finite() || !self.eig_max.is_finite() || self.eig_min > self.eig_max {
            return Err(Error::InvalidArgument(format!(
                "invalid eigenvalue range [{}, {}]",
                self.eig_min, self.eig_max
            )));
        }
        Ok(())
    }

    /// Positive definite by construction.
    pub fn is_pd(&self) -> bool {
        self.eig_min > 0.0
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticProblem<T> {
    a: Array2<T>,
    c: Vec<T>,
    eigenvalues: Option<Vec<f64>>,
    layout: Arc<Layout>,
}

impl<T: Scalar> QuadraticProblem<T> {
    /// `A` must be square and symmetric, `c` of matching length.
    pub fn from_parts(a: Array2<T>, c: Vec<T>) -> Result<Self> {
        let p = c.len();
        if a.dim() != (p, p) {
            return Err(Error::Length {
                what: "quadratic matrix rows",
                expected: p,
                got: a.nrows(),
            });
        }
        let tol = T::lit(1e-12) * a.iter().fold(T::one(), |m, x| m.max(x.abs()));
        for i in 0..p {
            for j in 0..i {
                if (a[[i, j]] - a[[j, i]]).abs() > tol {
                    return Err(Error::InvalidArgument(format!(
                        "quadratic matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let layout = Layout::with_labels(vec![vec![p]], vec!["theta".into()])?;
        Ok(QuadraticProblem {
            a,
            c,
            eigenvalues: None,
            layout,
        })
    }

    pub fn generate(spec: &QuadraticSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let g = DMatrix::<f64>::from_fn(p, p, |_, _| rng.sample(StandardNormal));
        let q = g.qr().q();
        let lambda: Vec<f64> = (0..p)
            .map(|_| rng.random_range(spec.eig_min..=spec.eig_max))
            .collect();
        let c: Vec<T> = (0..p).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect();
        let a = Array2::from_shape_fn((p, p), |(i, j)| {
            let v: f64 = (0..p).map(|k| q[(i, k)] * lambda[k] * q[(j, k)]).sum();
            v
        });
        // Exact symmetry.
        let a = Array2::from_shape_fn((p, p), |(i, j)| T::lit(0.5 * (a[[i, j]] + a[[j, i]])));
        let mut out = Self::from_parts(a, c)?;
        out.eigenvalues = Some(lambda);
        Ok(out)
    }

    pub fn matrix(&self) -> &Array2<T> {
        &self.a
    }

    pub fn minimizer(&self) -> &[T] {
        &self.c
    }

    /// Eigenvalues used at generation, if generated.
    pub fn eigenvalues(&self) -> Option<&[f64]> {
        self.eigenvalues.as_deref()
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn point(&self, values: Vec<T>) -> Result<ParamVector<T>> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn expr(&self) -> Expr<T> {
        let p = self.dim();
        let theta = Expr::param(&self.layout, 0);
        let c = Array2::from_shape_vec((1, p), self.c.clone()).expect("shape");
        let d = theta - Expr::constant(c);
        (&d * &d.matmul(&Expr::constant(self.a.clone())))
            .sum()
            .scale(T::lit(0.5))
    }

    /// `A (theta - c)`.
    pub fn gradient_at(&self, theta: &[T]) -> Vec<T> {
        let p = self.dim();
        (0..p)
            .map(|i| (0..p).fold(T::zero(), |acc, j| acc + self.a[[i, j]] * (theta[j] - self.c[j])))
            .collect()
    }
}

/// The loss and its minimizer for a generated quadratic.
pub fn make_quadratic<T: Scalar>(p: usize, spec: &QuadraticSpec) -> Result<(Expr<T>, Vec<T>)> {
    let spec = QuadraticSpec {
        dim: p,
        ..spec.clone()
    };
    let q = QuadraticProblem::generate(&spec)?;
    Ok((q.expr(), q.c.clone()))
}
