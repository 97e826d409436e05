//! Immutable expression-graph nodes and their shape-checked constructors.
//!
//! Every node holds a 2-D value (scalars are 1x1). Nodes are shared through
//! `Arc`, so derived graphs (tangent graphs, rescaled graphs) reuse the primal
//! nodes instead of copying them.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ndarray::Array2;

use crate::scalar::Scalar;

pub(crate) type NodeRef<T> = Arc<Node<T>>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Node<T> {
    pub id: u64,
    pub rows: usize,
    pub cols: usize,
    pub op: Op<T>,
}

impl<T> Node<T> {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

pub(crate) enum Op<T> {
    /// Tensor `tensor` of the parameter vector, starting at `offset`, viewed
    /// row-major with the node's shape.
    Param {
        tensor: usize,
        offset: usize,
    },
    Const(Array2<T>),
    Add(NodeRef<T>, NodeRef<T>),
    Sub(NodeRef<T>, NodeRef<T>),
    Mul(NodeRef<T>, NodeRef<T>),
    Div(NodeRef<T>, NodeRef<T>),
    MatMul(NodeRef<T>, NodeRef<T>),
    Neg(NodeRef<T>),
    Scale(NodeRef<T>, T),
    Exp(NodeRef<T>),
    Log(NodeRef<T>),
    Tanh(NodeRef<T>),
    Softplus(NodeRef<T>),
    Sigmoid(NodeRef<T>),
    Powi(NodeRef<T>, i32),
    /// Sum of all entries, 1x1.
    Sum(NodeRef<T>),
    /// Row sums, rows x 1.
    RowSum(NodeRef<T>),
    /// Row-wise log-sum-exp, rows x 1.
    LogSumExpRows(NodeRef<T>),
    /// Broadcast to the node's own shape.
    Broadcast(NodeRef<T>),
    Entry(NodeRef<T>, usize, usize),
}

impl<T: Scalar> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Param { .. } => "param",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Softplus(_) => "softplus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Powi(..) => "powi",
            Op::Sum(_) => "sum",
            Op::RowSum(_) => "row_sum",
            Op::LogSumExpRows(_) => "log_sum_exp_rows",
            Op::Broadcast(_) => "broadcast",
            Op::Entry(..) => "entry",
        }
    }

    pub fn inputs(&self) -> (Option<&NodeRef<T>>, Option<&NodeRef<T>>) {
        match self {
            Op::Param { .. } | Op::Const(_) => (None, None),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                (Some(a), Some(b))
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Softplus(a)
            | Op::Sigmoid(a)
            | Op::Powi(a, _)
            | Op::Sum(a)
            | Op::RowSum(a)
            | Op::LogSumExpRows(a)
            | Op::Broadcast(a)
            | Op::Entry(a, ..) => (Some(a), None),
        }
    }

    /// Same operation with its inputs replaced. Leaves are returned unchanged.
    pub fn with_inputs(&self, a: Option<NodeRef<T>>, b: Option<NodeRef<T>>) -> Op<T> {
        let a1 = || a.clone().expect("unary input");
        let b1 = || b.clone().expect("binary input");
        match self {
            Op::Param { tensor, offset } => Op::Param {
                tensor: *tensor,
                offset: *offset,
            },
            Op::Const(v) => Op::Const(v.clone()),
            Op::Add(..) => Op::Add(a1(), b1()),
            Op::Sub(..) => Op::Sub(a1(), b1()),
            Op::Mul(..) => Op::Mul(a1(), b1()),
            Op::Div(..) => Op::Div(a1(), b1()),
            Op::MatMul(..) => Op::MatMul(a1(), b1()),
            Op::Neg(_) => Op::Neg(a1()),
            Op::Scale(_, c) => Op::Scale(a1(), *c),
            Op::Exp(_) => Op::Exp(a1()),
            Op::Log(_) => Op::Log(a1()),
            Op::Tanh(_) => Op::Tanh(a1()),
            Op::Softplus(_) => Op::Softplus(a1()),
            Op::Sigmoid(_) => Op::Sigmoid(a1()),
            Op::Powi(_, n) => Op::Powi(a1(), *n),
            Op::Sum(_) => Op::Sum(a1()),
            Op::RowSum(_) => Op::RowSum(a1()),
            Op::LogSumExpRows(_) => Op::LogSumExpRows(a1()),
            Op::Broadcast(_) => Op::Broadcast(a1()),
            Op::Entry(_, i, j) => Op::Entry(a1(), *i, *j),
        }
    }
}

pub(crate) fn node<T>(rows: usize, cols: usize, op: Op<T>) -> NodeRef<T> {
    Arc::new(Node {
        id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
        rows,
        cols,
        op,
    })
}

fn broadcast_dim(x: usize, y: usize) -> Option<usize> {
    if x == y || y == 1 {
        Some(x)
    } else if x == 1 {
        Some(y)
    } else {
        None
    }
}

pub(crate) fn broadcast_shape(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    Some((broadcast_dim(a.0, b.0)?, broadcast_dim(a.1, b.1)?))
}

fn binary_shape<T>(name: &str, a: &Node<T>, b: &Node<T>) -> (usize, usize) {
    broadcast_shape(a.shape(), b.shape()).unwrap_or_else(|| {
        panic!(
            "{name}: shapes {:?} and {:?} are not broadcast-compatible",
            a.shape(),
            b.shape()
        )
    })
}

pub(crate) fn param<T>(tensor: usize, offset: usize, rows: usize, cols: usize) -> NodeRef<T> {
    node(rows, cols, Op::Param { tensor, offset })
}

pub(crate) fn constant<T>(value: Array2<T>) -> NodeRef<T> {
    let (r, c) = value.dim();
    node(r, c, Op::Const(value))
}

pub(crate) fn scalar<T: Scalar>(v: T) -> NodeRef<T> {
    constant(Array2::from_elem((1, 1), v))
}

pub(crate) fn add<T: Scalar>(a: NodeRef<T>, b: NodeRef<T>) -> NodeRef<T> {
    let (r, c) = binary_shape("add", &a, &b);
    node(r, c, Op::Add(a, b))
}

pub(crate) fn sub<T: Scalar>(a: NodeRef<T>, b: NodeRef<T>) -> NodeRef<T> {
    let (r, c) = binary_shape("sub", &a, &b);
    node(r, c, Op::Sub(a, b))
}

pub(crate) fn mul<T: Scalar>(a: NodeRef<T>, b: NodeRef<T>) -> NodeRef<T> {
    let (r, c) = binary_shape("mul", &a, &b);
    node(r, c, Op::Mul(a, b))
}

pub(crate) fn div<T: Scalar>(a: NodeRef<T>, b: NodeRef<T>) -> NodeRef<T> {
    let (r, c) = binary_shape("div", &a, &b);
    node(r, c, Op::Div(a, b))
}

pub(crate) fn matmul<T: Scalar>(a: NodeRef<T>, b: NodeRef<T>) -> NodeRef<T> {
    assert_eq!(
        a.cols,
        b.rows,
        "matmul: inner dimensions differ ({:?} x {:?})",
        a.shape(),
        b.shape()
    );
    let (r, c) = (a.rows, b.cols);
    node(r, c, Op::MatMul(a, b))
}

pub(crate) fn neg<T: Scalar>(a: NodeRef<T>) -> NodeRef<T> {
    let (r, c) = a.shape();
    node(r, c, Op::Neg(a))
}

pub(crate) fn scale<T: Scalar>(a: NodeRef<T>, k: T) -> NodeRef<T> {
    if k == T::one() {
        return a;
    }
    let (r, c) = a.shape();
    node(r, c, Op::Scale(a, k))
}

macro_rules! unary_builder {
    ($name:ident, $variant:ident) => {
        pub(crate) fn $name<T: Scalar>(a: NodeRef<T>) -> NodeRef<T> {
            let (r, c) = a.shape();
            node(r, c, Op::$variant(a))
        }
    };
}

unary_builder!(exp, Exp);
unary_builder!(log, Log);
unary_builder!(tanh, Tanh);
unary_builder!(softplus, Softplus);
unary_builder!(sigmoid, Sigmoid);

pub(crate) fn powi<T: Scalar>(a: NodeRef<T>, n: i32) -> NodeRef<T> {
    let (r, c) = a.shape();
    match n {
        0 => constant(Array2::from_elem((r, c), T::one())),
        1 => a,
        _ => node(r, c, Op::Powi(a, n)),
    }
}

pub(crate) fn sum<T: Scalar>(a: NodeRef<T>) -> NodeRef<T> {
    node(1, 1, Op::Sum(a))
}

pub(crate) fn row_sum<T: Scalar>(a: NodeRef<T>) -> NodeRef<T> {
    let r = a.rows;
    node(r, 1, Op::RowSum(a))
}

pub(crate) fn log_sum_exp_rows<T: Scalar>(a: NodeRef<T>) -> NodeRef<T> {
    let r = a.rows;
    node(r, 1, Op::LogSumExpRows(a))
}

pub(crate) fn broadcast<T: Scalar>(a: NodeRef<T>, rows: usize, cols: usize) -> NodeRef<T> {
    if a.shape() == (rows, cols) {
        return a;
    }
    assert!(
        broadcast_shape(a.shape(), (rows, cols)) == Some((rows, cols)),
        "broadcast: cannot broadcast {:?} to {:?}",
        a.shape(),
        (rows, cols)
    );
    node(rows, cols, Op::Broadcast(a))
}

pub(crate) fn entry<T: Scalar>(a: NodeRef<T>, i: usize, j: usize) -> NodeRef<T> {
    assert!(
        i < a.rows && j < a.cols,
        "entry: index ({i}, {j}) out of bounds for shape {:?}",
        a.shape()
    );
    node(1, 1, Op::Entry(a, i, j))
}
