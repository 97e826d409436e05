//! Graph-to-graph transforms: the tangent (directional-derivative) graph and
//! parameter substitution.
//!
//! The tangent graph is built from the same primitives as the primal graph,
//! so it can be differentiated again. Zero tangents are tracked as `None` and
//! never materialized, which keeps masked directions cheap.

use std::sync::Arc;

use super::eval::Plan;
use super::graph::{self as g, Node, NodeRef, Op};
use crate::scalar::Scalar;

type Tan<T> = Option<NodeRef<T>>;

fn fit<T: Scalar>(t: NodeRef<T>, shape: (usize, usize)) -> NodeRef<T> {
    g::broadcast(t, shape.0, shape.1)
}

fn add_opt<T: Scalar>(x: Tan<T>, y: Tan<T>, shape: (usize, usize)) -> Tan<T> {
    match (x, y) {
        (Some(x), Some(y)) => Some(fit(g::add(x, y), shape)),
        (Some(x), None) | (None, Some(x)) => Some(fit(x, shape)),
        (None, None) => None,
    }
}

fn sub_opt<T: Scalar>(x: Tan<T>, y: Tan<T>, shape: (usize, usize)) -> Tan<T> {
    match (x, y) {
        (Some(x), Some(y)) => Some(fit(g::sub(x, y), shape)),
        (Some(x), None) => Some(fit(x, shape)),
        (None, Some(y)) => Some(fit(g::neg(y), shape)),
        (None, None) => None,
    }
}

fn one<T: Scalar>() -> NodeRef<T> {
    g::scalar(T::one())
}

/// Builds the tangent of `plan`'s root. `seed` gives the tangent of each
/// parameter leaf (`None` for a zero tangent). Returns `None` when the
/// tangent is identically zero.
pub(crate) fn tangent<T: Scalar>(
    plan: &Plan<T>,
    seed: &dyn Fn(&Node<T>) -> Tan<T>,
) -> Tan<T> {
    let mut tans: Vec<Tan<T>> = Vec::with_capacity(plan.len());
    for (k, n) in plan.nodes.iter().enumerate() {
        let (ia, ib) = plan.inputs[k];
        let ta = ia.and_then(|i| tans[i].clone());
        let tb = ib.and_then(|i| tans[i].clone());
        let shape = n.shape();
        let t = match &n.op {
            Op::Param { .. } => seed(n),
            Op::Const(_) => None,
            Op::Add(..) => add_opt(ta, tb, shape),
            Op::Sub(..) => sub_opt(ta, tb, shape),
            Op::Mul(a, b) => add_opt(
                ta.map(|t| g::mul(t, b.clone())),
                tb.map(|t| g::mul(a.clone(), t)),
                shape,
            ),
            Op::Div(_, b) => {
                // d(a/b) = (da - (a/b) db) / b
                let num = sub_opt(ta, tb.map(|t| g::mul(n_ref(plan, k), t)), shape);
                num.map(|x| g::div(x, b.clone()))
            }
            Op::MatMul(a, b) => add_opt(
                ta.map(|t| g::matmul(t, b.clone())),
                tb.map(|t| g::matmul(a.clone(), t)),
                shape,
            ),
            Op::Neg(_) => ta.map(g::neg),
            Op::Scale(_, c) => ta.map(|t| g::scale(t, *c)),
            Op::Exp(_) => ta.map(|t| g::mul(n_ref(plan, k), t)),
            Op::Log(a) => ta.map(|t| g::div(t, a.clone())),
            Op::Tanh(_) => ta.map(|t| {
                let out = n_ref(plan, k);
                let d = g::sub(one(), g::mul(out.clone(), out));
                g::mul(d, t)
            }),
            Op::Softplus(a) => ta.map(|t| g::mul(g::sigmoid(a.clone()), t)),
            Op::Sigmoid(_) => ta.map(|t| {
                let out = n_ref(plan, k);
                let d = g::mul(out.clone(), g::sub(one(), out));
                g::mul(d, t)
            }),
            Op::Powi(a, p) => ta.map(|t| {
                let pt = T::from_i32(*p).expect("exponent");
                g::mul(g::scale(g::powi(a.clone(), p - 1), pt), t)
            }),
            Op::Sum(_) => ta.map(g::sum),
            Op::RowSum(_) => ta.map(g::row_sum),
            Op::LogSumExpRows(a) => ta.map(|t| {
                let soft = g::exp(g::sub(a.clone(), n_ref(plan, k)));
                g::row_sum(g::mul(soft, t))
            }),
            Op::Broadcast(_) => ta.map(|t| fit(t, shape)),
            Op::Entry(_, i, j) => ta.map(|t| g::entry(t, *i, *j)),
        };
        tans.push(t);
    }
    tans.pop().flatten()
}

fn n_ref<T>(plan: &Plan<T>, k: usize) -> NodeRef<T> {
    plan.nodes[k].clone()
}

/// Rebuilds the graph with every parameter leaf replaced by `replace(leaf)`.
/// Subgraphs without parameters are shared, not copied.
pub(crate) fn substitute_params<T: Scalar>(
    plan: &Plan<T>,
    replace: &dyn Fn(&NodeRef<T>) -> NodeRef<T>,
) -> NodeRef<T> {
    let mut out: Vec<NodeRef<T>> = Vec::with_capacity(plan.len());
    for (k, n) in plan.nodes.iter().enumerate() {
        let new = match &n.op {
            Op::Param { .. } => replace(n),
            _ => {
                let (ia, ib) = plan.inputs[k];
                let na = ia.map(|i| out[i].clone());
                let nb = ib.map(|i| out[i].clone());
                let (oa, ob) = n.op.inputs();
                let same = |new: &Option<NodeRef<T>>, old: Option<&NodeRef<T>>| match (new, old) {
                    (Some(x), Some(y)) => Arc::ptr_eq(x, y),
                    (None, None) => true,
                    _ => false,
                };
                if same(&na, oa) && same(&nb, ob) {
                    n.clone()
                } else {
                    g::node(n.rows, n.cols, n.op.with_inputs(na, nb))
                }
            }
        };
        out.push(new);
    }
    out.pop().expect("non-empty plan")
}
