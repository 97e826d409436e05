//! Grouped higher-order derivative summaries and partitioned second-order
//! optimization.
//!
//! A loss over a parameter vector made of several tensors is summarized per
//! group of parameters: order-`d` summary tensors of size `S^d`, and at order
//! two the `S x S` pseudo-Hessian used by the partitioned Newton step. With
//! one group the step is Cauchy's steepest descent; with one group per scalar
//! it is Newton's method.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar type.

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod optim;
pub mod oracle;
pub mod partition;
pub mod problems;
pub mod scalar;
pub mod summaries;

pub use autodiff::{Expr, Layout, ParamVector, PassCount};
pub use error::{Error, Result};
pub use optim::{Method, StepConfig, StepStatus, StepTrace};
pub use partition::{Partition, PartitionKind};
pub use scalar::Scalar;
pub use summaries::{
    pseudo_gradient, pseudo_hessian, regularization_vector, summary_tensor, taylor_term,
    PseudoSystem, RegularizationMode, RegularizationVector, SummaryOptions, SummaryTensor,
};

pub type Expr64 = Expr<f64>;
pub type Expr32 = Expr<f32>;
pub type ParamVector64 = ParamVector<f64>;
pub type ParamVector32 = ParamVector<f32>;
