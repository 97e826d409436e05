use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::summaries::RegularizationMode;

/// Step and run settings shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default, deny_unknown_fields)]
pub struct StepConfig<T> {
    /// Global factor on every update; the gradient-descent step size.
    pub damping: T,
    /// Weight of the third-order regularizer. Zero disables it.
    pub epsilon: T,
    /// Diagonal shifts tried in order when the solve fails or does not
    /// descend. The system is first equilibrated to a unit diagonal, and each
    /// shift is relative to its largest entry.
    pub ladder: Vec<T>,
    /// Fall back to a Cauchy step once the ladder is exhausted.
    pub cauchy_fallback: bool,
    pub max_iters: usize,
    /// Stop when the gradient norm drops to this value.
    pub grad_tol: T,
    /// Backtrack on the update length until the loss decreases.
    pub line_search: bool,
    pub regularization: RegularizationMode,
    /// Largest P for which the dense Newton step assembles H.
    pub newton_budget: usize,
}

impl<T: Scalar> Default for StepConfig<T> {
    fn default() -> Self {
        StepConfig {
            damping: T::one(),
            epsilon: T::zero(),
            ladder: default_ladder(),
            cauchy_fallback: true,
            max_iters: 100,
            grad_tol: T::lit(1e-10),
            line_search: false,
            regularization: RegularizationMode::default(),
            newton_budget: 512,
        }
    }
}

/// `1e-8 * 10^k` for `k = 0..=16`.
pub fn default_ladder<T: Scalar>() -> Vec<T> {
    (0..=16).map(|k| T::lit(1e-8 * 10f64.powi(k))).collect()
}

impl<T: Scalar> StepConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.damping > T::zero()) || !self.damping.is_finite() {
            return bad(format!("damping must be positive, got {}", self.damping));
        }
        if !(self.epsilon >= T::zero()) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.grad_tol >= T::zero()) {
            return bad(format!("grad_tol must be nonnegative, got {}", self.grad_tol));
        }
        if self.ladder.iter().any(|&x| !(x > T::zero()) || !x.is_finite()) {
            return bad("ladder shifts must be positive and finite".into());
        }
        if self.ladder.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("ladder must be strictly increasing".into());
        }
        Ok(())
    }
}
