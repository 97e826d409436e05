//! Topological evaluation plan, numeric forward sweep and reverse sweep.

use std::collections::HashMap;

use ndarray::{Array2, Axis};

use super::graph::{Node, NodeRef, Op};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Nodes of a graph in dependency order (inputs before users), deduplicated.
pub(crate) struct Plan<T> {
    pub nodes: Vec<NodeRef<T>>,
    pub inputs: Vec<(Option<usize>, Option<usize>)>,
}

impl<T: Scalar> Plan<T> {
    pub fn build(root: &NodeRef<T>) -> Self {
        let mut index: HashMap<u64, usize> = HashMap::new();
        let mut nodes: Vec<NodeRef<T>> = Vec::new();
        let mut inputs = Vec::new();
        // Iterative post-order DFS: (node, inputs already pushed).
        let mut stack: Vec<(NodeRef<T>, bool)> = vec![(root.clone(), false)];
        while let Some((n, expanded)) = stack.pop() {
            if index.contains_key(&n.id) {
                continue;
            }
            let (a, b) = n.op.inputs();
            if expanded {
                let ia = a.map(|x| index[&x.id]);
                let ib = b.map(|x| index[&x.id]);
                index.insert(n.id, nodes.len());
                inputs.push((ia, ib));
                nodes.push(n);
            } else {
                let (a, b) = (a.cloned(), b.cloned());
                stack.push((n, true));
                // Push b first so a is visited first.
                if let Some(b) = b {
                    if !index.contains_key(&b.id) {
                        stack.push((b, false));
                    }
                }
                if let Some(a) = a {
                    if !index.contains_key(&a.id) {
                        stack.push((a, false));
                    }
                }
            }
        }
        Plan { nodes, inputs }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
}

fn domain(primitive: &'static str, detail: impl Into<String>) -> Error {
    Error::Domain {
        primitive,
        detail: detail.into(),
    }
}

/// Sums `g` over broadcast axes so it matches `(rows, cols)`.
fn reduce_to<T: Scalar>(g: Array2<T>, rows: usize, cols: usize) -> Array2<T> {
    let mut g = g;
    if g.nrows() != rows {
        debug_assert_eq!(rows, 1);
        g = g.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if g.ncols() != cols {
        debug_assert_eq!(cols, 1);
        g = g.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    g
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Numeric forward sweep. `theta` is the flat parameter vector.
pub(crate) fn forward<T: Scalar>(plan: &Plan<T>, theta: &[T]) -> Result<Vec<Array2<T>>> {
    let mut vals: Vec<Array2<T>> = Vec::with_capacity(plan.len());
    for (k, n) in plan.nodes.iter().enumerate() {
        let (ia, ib) = plan.inputs[k];
        let a = ia.map(|i| &vals[i]);
        let b = ib.map(|i| &vals[i]);
        let v = eval_node(n, a, b, theta)?;
        vals.push(v);
    }
    Ok(vals)
}

fn eval_node<T: Scalar>(
    n: &Node<T>,
    a: Option<&Array2<T>>,
    b: Option<&Array2<T>>,
    theta: &[T],
) -> Result<Array2<T>> {
    let a_ = || a.expect("input a");
    let b_ = || b.expect("input b");
    let v = match &n.op {
        Op::Param { offset, .. } => {
            let len = n.rows * n.cols;
            let slice = theta.get(*offset..offset + len).ok_or(Error::Length {
                what: "parameter vector",
                expected: offset + len,
                got: theta.len(),
            })?;
            Array2::from_shape_vec((n.rows, n.cols), slice.to_vec()).expect("param shape")
        }
        Op::Const(c) => c.clone(),
        Op::Add(..) => a_() + b_(),
        Op::Sub(..) => a_() - b_(),
        Op::Mul(..) => a_() * b_(),
        Op::Div(..) => {
            if let Some(pos) = b_().iter().position(|x| *x == T::zero()) {
                return Err(domain("div", format!("division by zero at flat index {pos}")));
            }
            a_() / b_()
        }
        Op::MatMul(..) => a_().dot(b_()),
        Op::Neg(_) => a_().mapv(|x| -x),
        Op::Scale(_, k) => a_().mapv(|x| x * *k),
        Op::Exp(_) => a_().mapv(T::exp),
        Op::Log(_) => {
            if let Some(x) = a_().iter().find(|x| !(**x > T::zero())) {
                return Err(domain("log", format!("non-positive argument {x}")));
            }
            a_().mapv(T::ln)
        }
        Op::Tanh(_) => a_().mapv(T::tanh),
        Op::Softplus(_) => a_().mapv(softplus),
        Op::Sigmoid(_) => a_().mapv(sigmoid),
        Op::Powi(_, p) => {
            if *p < 0 && a_().iter().any(|x| *x == T::zero()) {
                return Err(domain("powi", format!("zero raised to negative power {p}")));
            }
            a_().mapv(|x| x.powi(*p))
        }
        Op::Sum(_) => Array2::from_elem((1, 1), a_().sum()),
        Op::RowSum(_) => a_().sum_axis(Axis(1)).insert_axis(Axis(1)),
        Op::LogSumExpRows(_) => {
            let x = a_();
            let mut out = Array2::zeros((x.nrows(), 1));
            for (r, row) in x.rows().into_iter().enumerate() {
                let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let s: T = row.iter().map(|&v| (v - m).exp()).sum();
                out[[r, 0]] = m + s.ln();
            }
            out
        }
        Op::Broadcast(_) => a_()
            .broadcast((n.rows, n.cols))
            .expect("broadcast shape checked at construction")
            .to_owned(),
        Op::Entry(_, i, j) => Array2::from_elem((1, 1), a_()[[*i, *j]]),
    };
    Ok(v)
}

fn accumulate<T: Scalar>(slot: &mut Option<Array2<T>>, g: Array2<T>) {
    match slot {
        Some(acc) => acc.zip_mut_with(&g, |a, &b| *a = *a + b),
        None => *slot = Some(g),
    }
}

/// Reverse sweep from the (1x1) root. Returns the gradient over `len` params.
pub(crate) fn backward<T: Scalar>(plan: &Plan<T>, vals: &[Array2<T>], len: usize) -> Vec<T> {
    let n = plan.len();
    let mut grad = vec![T::zero(); len];
    let mut adj: Vec<Option<Array2<T>>> = (0..n).map(|_| None).collect();
    adj[n - 1] = Some(Array2::from_elem((1, 1), T::one()));

    for k in (0..n).rev() {
        let Some(g) = adj[k].take() else { continue };
        let node = &plan.nodes[k];
        let (ia, ib) = plan.inputs[k];
        let out = &vals[k];
        match &node.op {
            Op::Param { offset, .. } => {
                for (dst, src) in grad[*offset..offset + g.len()].iter_mut().zip(g.iter()) {
                    *dst = *dst + *src;
                }
            }
            Op::Const(_) => {}
            Op::Add(..) | Op::Sub(..) => {
                let (ia, ib) = (ia.unwrap(), ib.unwrap());
                let (ra, ca) = vals[ia].dim();
                let (rb, cb) = vals[ib].dim();
                let gb = if matches!(node.op, Op::Sub(..)) {
                    g.mapv(|x| -x)
                } else {
                    g.clone()
                };
                accumulate(&mut adj[ia], reduce_to(g, ra, ca));
                accumulate(&mut adj[ib], reduce_to(gb, rb, cb));
            }
            Op::Mul(..) => {
                let (ia, ib) = (ia.unwrap(), ib.unwrap());
                let (va, vb) = (&vals[ia], &vals[ib]);
                let ga = reduce_to(&g * vb, va.nrows(), va.ncols());
                let gb = reduce_to(&g * va, vb.nrows(), vb.ncols());
                accumulate(&mut adj[ia], ga);
                accumulate(&mut adj[ib], gb);
            }
            Op::Div(..) => {
                let (ia, ib) = (ia.unwrap(), ib.unwrap());
                let (va, vb) = (&vals[ia], &vals[ib]);
                let ga = reduce_to(&g / vb, va.nrows(), va.ncols());
                let gb = reduce_to((&g * out / vb).mapv(|x| -x), vb.nrows(), vb.ncols());
                accumulate(&mut adj[ia], ga);
                accumulate(&mut adj[ib], gb);
            }
            Op::MatMul(..) => {
                let (ia, ib) = (ia.unwrap(), ib.unwrap());
                let ga = g.dot(&vals[ib].t());
                let gb = vals[ia].t().dot(&g);
                accumulate(&mut adj[ia], ga);
                accumulate(&mut adj[ib], gb);
            }
            Op::Neg(_) => accumulate(&mut adj[ia.unwrap()], g.mapv(|x| -x)),
            Op::Scale(_, c) => accumulate(&mut adj[ia.unwrap()], g.mapv(|x| x * *c)),
            Op::Exp(_) => accumulate(&mut adj[ia.unwrap()], &g * out),
            Op::Log(_) => {
                let ia = ia.unwrap();
                let ga = &g / &vals[ia];
                accumulate(&mut adj[ia], ga);
            }
            Op::Tanh(_) => {
                let d = out.mapv(|t| T::one() - t * t);
                accumulate(&mut adj[ia.unwrap()], &g * &d);
            }
            Op::Softplus(_) => {
                let ia = ia.unwrap();
                let d = vals[ia].mapv(sigmoid);
                accumulate(&mut adj[ia], &g * &d);
            }
            Op::Sigmoid(_) => {
                let d = out.mapv(|s| s * (T::one() - s));
                accumulate(&mut adj[ia.unwrap()], &g * &d);
            }
            Op::Powi(_, p) => {
                let ia = ia.unwrap();
                let pt = T::from_i32(*p).expect("exponent");
                let d = vals[ia].mapv(|x| pt * x.powi(*p - 1));
                accumulate(&mut adj[ia], &g * &d);
            }
            Op::Sum(_) => {
                let ia = ia.unwrap();
                let ga = Array2::from_elem(vals[ia].dim(), g[[0, 0]]);
                accumulate(&mut adj[ia], ga);
            }
            Op::RowSum(_) => {
                let ia = ia.unwrap();
                let ga = g.broadcast(vals[ia].dim()).unwrap().to_owned();
                accumulate(&mut adj[ia], ga);
            }
            Op::LogSumExpRows(_) => {
                let ia = ia.unwrap();
                let soft = (&vals[ia] - out).mapv(T::exp);
                accumulate(&mut adj[ia], &soft * &g);
            }
            Op::Broadcast(_) => {
                let ia = ia.unwrap();
                let (r, c) = vals[ia].dim();
                accumulate(&mut adj[ia], reduce_to(g, r, c));
            }
            Op::Entry(_, i, j) => {
                let ia = ia.unwrap();
                let mut ga = Array2::zeros(vals[ia].dim());
                ga[[*i, *j]] = g[[0, 0]];
                accumulate(&mut adj[ia], ga);
            }
        }
    }
    grad
}
