//! Scalar losses over structured parameter vectors, with exact gradients and
//! nested directional derivatives.
//!
//! An [`Expr`] is an immutable expression graph over the tensors of a
//! [`Layout`]. Gradients come from a numeric reverse sweep. Directional
//! derivatives are built symbolically: [`Expr::directional`] returns a new
//! `Expr` computing `grad f(theta) . u`, which can itself be evaluated,
//! differentiated, or differentiated along another direction. Repeating it
//! `d` times yields `d`-th order directional derivatives, and a gradient of a
//! single directional derivative is a Hessian-vector product.
//!
//! ```
//! use groupnewton::autodiff::{Expr, Layout, ParamVector};
//!
//! let layout = Layout::new(vec![vec![1]]).unwrap();
//! let x = Expr::<f64>::param(&layout, 0).entry(0, 0);
//! let f = x.powi(3);
//! let theta = ParamVector::new(layout, vec![2.0]).unwrap();
//! let d2 = f.directional(&[1.0]).unwrap().directional(&[1.0]).unwrap();
//! assert_eq!(d2.evaluate(&theta).unwrap(), 12.0);
//! ```

mod eval;
mod graph;
mod jvp;
pub mod passes;

use std::fmt;
use std::ops::Range;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;

use self::eval::Plan;
use self::graph::{NodeRef, Op};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use self::passes::PassCount;

/// Ordered tensor shapes of a parameter vector, flattened in declaration
/// order with each tensor row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    shapes: Vec<Vec<usize>>,
    labels: Vec<String>,
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    /// Layout with default labels `t1, t2, ...`.
    pub fn new(shapes: Vec<Vec<usize>>) -> Result<Arc<Layout>> {
        let labels = (1..=shapes.len()).map(|k| format!("t{k}")).collect();
        Layout::with_labels(shapes, labels)
    }

    pub fn with_labels(shapes: Vec<Vec<usize>>, labels: Vec<String>) -> Result<Arc<Layout>> {
        if shapes.is_empty() {
            return Err(Error::Layout("a layout needs at least one tensor".into()));
        }
        if labels.len() != shapes.len() {
            return Err(Error::Length {
                what: "layout labels",
                expected: shapes.len(),
                got: labels.len(),
            });
        }
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut len = 0;
        for (k, s) in shapes.iter().enumerate() {
            let n: usize = s.iter().product();
            if n == 0 {
                return Err(Error::Layout(format!(
                    "tensor {} (`{}`) has no elements",
                    k + 1,
                    labels[k]
                )));
            }
            offsets.push(len);
            len += n;
        }
        Ok(Arc::new(Layout {
            shapes,
            labels,
            offsets,
            len,
        }))
    }

    /// Total number of scalar parameters P.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_tensors(&self) -> usize {
        self.shapes.len()
    }

    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn numel(&self, k: usize) -> usize {
        self.shapes[k].iter().product()
    }

    pub fn range(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k] + self.numel(k)
    }

    /// Matrix view of tensor `k`: `()` is 1x1, `(n)` is a 1xn row, and
    /// `(m, n, ...)` is m x (n*...).
    pub fn matrix_dims(&self, k: usize) -> (usize, usize) {
        let s = &self.shapes[k];
        match s.len() {
            0 => (1, 1),
            1 => (1, s[0]),
            _ => (s[0], s[1..].iter().product()),
        }
    }
}

/// Flat parameter values tied to an immutable [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Arc<Layout>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn new(layout: Arc<Layout>, values: Vec<T>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Length {
                what: "parameter values",
                expected: layout.len(),
                got: values.len(),
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector {
            values: vec![T::zero(); layout.len()],
            layout,
        }
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        ParamVector::new(self.layout.clone(), values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, k: usize) -> &[T] {
        &self.values[self.layout.range(k)]
    }
}

/// Immutable scalar- or matrix-valued expression over a parameter layout.
///
/// Cloning is cheap. Expressions are `Send + Sync`; concurrent evaluations
/// of the same expression are independent.
pub struct Expr<T: Scalar> {
    root: NodeRef<T>,
    layout: Option<Arc<Layout>>,
    plan: Arc<OnceLock<Plan<T>>>,
}

impl<T: Scalar> Clone for Expr<T> {
    fn clone(&self) -> Self {
        Expr {
            root: self.root.clone(),
            layout: self.layout.clone(),
            plan: self.plan.clone(),
        }
    }
}

impl<T: Scalar> fmt::Debug for Expr<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Expr")
            .field("shape", &self.shape())
            .field("root", &self.root.op.name())
            .field("nodes", &self.node_count())
            .finish()
    }
}

fn merge_layouts(a: &Option<Arc<Layout>>, b: &Option<Arc<Layout>>) -> Option<Arc<Layout>> {
    match (a, b) {
        (Some(x), Some(y)) => {
            assert!(
                Arc::ptr_eq(x, y) || x == y,
                "expressions over different parameter layouts cannot be combined"
            );
            Some(x.clone())
        }
        (Some(x), None) | (None, Some(x)) => Some(x.clone()),
        (None, None) => None,
    }
}

impl<T: Scalar> Expr<T> {
    fn from_node(root: NodeRef<T>, layout: Option<Arc<Layout>>) -> Self {
        Expr {
            root,
            layout,
            plan: Arc::new(OnceLock::new()),
        }
    }

    fn unary(&self, f: impl FnOnce(NodeRef<T>) -> NodeRef<T>) -> Self {
        Expr::from_node(f(self.root.clone()), self.layout.clone())
    }

    fn binary(&self, o: &Expr<T>, f: impl FnOnce(NodeRef<T>, NodeRef<T>) -> NodeRef<T>) -> Self {
        let layout = merge_layouts(&self.layout, &o.layout);
        Expr::from_node(f(self.root.clone(), o.root.clone()), layout)
    }

    fn plan(&self) -> &Plan<T> {
        self.plan.get_or_init(|| Plan::build(&self.root))
    }

    /// Tensor `k` of `layout`, in its matrix view (see [`Layout::matrix_dims`]).
    pub fn param(layout: &Arc<Layout>, k: usize) -> Self {
        assert!(k < layout.num_tensors(), "tensor index {k} out of range");
        let (r, c) = layout.matrix_dims(k);
        Expr::from_node(
            graph::param(k, layout.range(k).start, r, c),
            Some(layout.clone()),
        )
    }

    /// One leaf per tensor, in declaration order.
    pub fn params(layout: &Arc<Layout>) -> Vec<Self> {
        (0..layout.num_tensors())
            .map(|k| Expr::param(layout, k))
            .collect()
    }

    pub fn constant(value: Array2<T>) -> Self {
        Expr::from_node(graph::constant(value), None)
    }

    pub fn scalar(v: T) -> Self {
        Expr::from_node(graph::scalar(v), None)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.root.shape()
    }

    pub fn layout(&self) -> Option<&Arc<Layout>> {
        self.layout.as_ref()
    }

    /// Number of distinct nodes in the graph.
    pub fn node_count(&self) -> usize {
        self.plan().len()
    }

    pub fn matmul(&self, o: &Expr<T>) -> Self {
        self.binary(o, graph::matmul)
    }

    pub fn scale(&self, k: T) -> Self {
        self.unary(|a| graph::scale(a, k))
    }

    pub fn add_scalar(&self, k: T) -> Self {
        self.unary(|a| graph::add(a, graph::scalar(k)))
    }

    pub fn exp(&self) -> Self {
        self.unary(graph::exp)
    }

    pub fn ln(&self) -> Self {
        self.unary(graph::log)
    }

    pub fn tanh(&self) -> Self {
        self.unary(graph::tanh)
    }

    /// `ln(1 + e^x)`.
    pub fn softplus(&self) -> Self {
        self.unary(graph::softplus)
    }

    pub fn sigmoid(&self) -> Self {
        self.unary(graph::sigmoid)
    }

    pub fn powi(&self, n: i32) -> Self {
        self.unary(|a| graph::powi(a, n))
    }

    pub fn square(&self) -> Self {
        self.powi(2)
    }

    pub fn sum(&self) -> Self {
        self.unary(graph::sum)
    }

    pub fn mean(&self) -> Self {
        let (r, c) = self.shape();
        let n = T::from_usize(r * c).expect("size");
        self.sum().scale(T::one() / n)
    }

    /// Row sums as a column.
    pub fn row_sum(&self) -> Self {
        self.unary(graph::row_sum)
    }

    /// Row-wise `ln sum exp`, as a column.
    pub fn log_sum_exp_rows(&self) -> Self {
        self.unary(graph::log_sum_exp_rows)
    }

    pub fn broadcast_to(&self, rows: usize, cols: usize) -> Self {
        self.unary(|a| graph::broadcast(a, rows, cols))
    }

    /// Entry `(i, j)` as a 1x1 expression.
    pub fn entry(&self, i: usize, j: usize) -> Self {
        self.unary(|a| graph::entry(a, i, j))
    }

    fn check_point(&self, theta: &ParamVector<T>) -> Result<()> {
        if let Some(l) = &self.layout {
            if !(Arc::ptr_eq(l, &theta.layout) || **l == *theta.layout) {
                return Err(Error::Layout(format!(
                    "expression expects shapes {:?}, point has {:?}",
                    l.shapes(),
                    theta.layout.shapes()
                )));
            }
        }
        Ok(())
    }

    fn check_scalar(&self) -> Result<()> {
        let (rows, cols) = self.shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalar { rows, cols });
        }
        Ok(())
    }

    /// Value at `theta` as a matrix (for non-scalar expressions).
    pub fn evaluate_matrix(&self, theta: &ParamVector<T>) -> Result<Array2<T>> {
        self.check_point(theta)?;
        passes::bump_forward();
        let mut vals = eval::forward(self.plan(), theta.values())?;
        Ok(vals.pop().expect("non-empty plan"))
    }

    /// Scalar value at `theta`.
    pub fn evaluate(&self, theta: &ParamVector<T>) -> Result<T> {
        self.check_scalar()?;
        Ok(self.evaluate_matrix(theta)?[[0, 0]])
    }

    /// Value and exact gradient: one forward and one reverse sweep.
    pub fn value_and_gradient(&self, theta: &ParamVector<T>) -> Result<(T, Vec<T>)> {
        self.check_scalar()?;
        self.check_point(theta)?;
        let plan = self.plan();
        passes::bump_forward();
        let vals = eval::forward(plan, theta.values())?;
        passes::bump_backward();
        let value = vals[vals.len() - 1][[0, 0]];
        let grad = eval::backward(plan, &vals, theta.len());
        Ok((value, grad))
    }

    pub fn gradient(&self, theta: &ParamVector<T>) -> Result<Vec<T>> {
        Ok(self.value_and_gradient(theta)?.1)
    }

    /// Directional derivative along `u` as a new expression in theta: its
    /// value is `grad f(theta) . u`, and it can be differentiated again.
    pub fn directional(&self, u: &[T]) -> Result<Expr<T>> {
        let Some(layout) = &self.layout else {
            // No parameters: the derivative is zero everywhere.
            let (r, c) = self.shape();
            return Ok(Expr::constant(Array2::zeros((r, c))));
        };
        if u.len() != layout.len() {
            return Err(Error::Length {
                what: "direction",
                expected: layout.len(),
                got: u.len(),
            });
        }
        let seed = |n: &graph::Node<T>| -> Option<NodeRef<T>> {
            let Op::Param { offset, .. } = n.op else {
                unreachable!()
            };
            let slice = &u[offset..offset + n.rows * n.cols];
            if slice.iter().all(|x| *x == T::zero()) {
                return None;
            }
            let v = Array2::from_shape_vec((n.rows, n.cols), slice.to_vec()).expect("shape");
            Some(graph::constant(v))
        };
        let root = match jvp::tangent(self.plan(), &seed) {
            Some(t) => t,
            None => {
                let (r, c) = self.shape();
                graph::constant(Array2::zeros((r, c)))
            }
        };
        Ok(Expr::from_node(root, Some(layout.clone())))
    }

    /// `d` nested directional derivatives, one per direction, innermost first.
    pub fn nested_directional(&self, dirs: &[&[T]]) -> Result<Expr<T>> {
        let mut e = self.clone();
        for u in dirs {
            e = e.directional(u)?;
        }
        Ok(e)
    }

    /// Hessian-vector product `H(theta) v` as the gradient of the
    /// directional derivative along `v`.
    pub fn hvp(&self, theta: &ParamVector<T>, v: &[T]) -> Result<Vec<T>> {
        self.directional(v)?.gradient(theta)
    }

    /// Expression of `theta_tilde` equal to `self` at `theta_tilde * scale`
    /// (elementwise). Used for linear reparameterizations.
    pub fn rescale_params(&self, scale: &[T]) -> Result<Expr<T>> {
        let Some(layout) = &self.layout else {
            return Ok(self.clone());
        };
        if scale.len() != layout.len() {
            return Err(Error::Length {
                what: "parameter scaling",
                expected: layout.len(),
                got: scale.len(),
            });
        }
        let replace = |n: &NodeRef<T>| -> NodeRef<T> {
            let Op::Param { offset, .. } = n.op else {
                unreachable!()
            };
            let s = Array2::from_shape_vec(
                (n.rows, n.cols),
                scale[offset..offset + n.rows * n.cols].to_vec(),
            )
            .expect("shape");
            graph::mul(n.clone(), graph::constant(s))
        };
        let root = jvp::substitute_params(self.plan(), &replace);
        Ok(Expr::from_node(root, Some(layout.clone())))
    }
}

macro_rules! impl_binop {
    ($tr:ident, $method:ident, $builder:path) => {
        impl<T: Scalar> std::ops::$tr<&Expr<T>> for &Expr<T> {
            type Output = Expr<T>;
            fn $method(self, o: &Expr<T>) -> Expr<T> {
                self.binary(o, $builder)
            }
        }
        impl<T: Scalar> std::ops::$tr<Expr<T>> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, o: Expr<T>) -> Expr<T> {
                self.binary(&o, $builder)
            }
        }
        impl<T: Scalar> std::ops::$tr<&Expr<T>> for Expr<T> {
            type Output = Expr<T>;
            fn $method(self, o: &Expr<T>) -> Expr<T> {
                self.binary(o, $builder)
            }
        }
        impl<T: Scalar> std::ops::$tr<Expr<T>> for &Expr<T> {
            type Output = Expr<T>;
            fn $method(self, o: Expr<T>) -> Expr<T> {
                self.binary(&o, $builder)
            }
        }
    };
}

impl_binop!(Add, add, graph::add);
impl_binop!(Sub, sub, graph::sub);
impl_binop!(Mul, mul, graph::mul);
impl_binop!(Div, div, graph::div);

impl<T: Scalar> std::ops::Neg for &Expr<T> {
    type Output = Expr<T>;
    fn neg(self) -> Expr<T> {
        self.unary(graph::neg)
    }
}

impl<T: Scalar> std::ops::Neg for Expr<T> {
    type Output = Expr<T>;
    fn neg(self) -> Expr<T> {
        self.unary(graph::neg)
    }
}

/// Scalar value of `f` at `theta`.
pub fn evaluate<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>) -> Result<T> {
    f.evaluate(theta)
}

/// Exact reverse-mode gradient of `f` at `theta`.
pub fn gradient<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>) -> Result<Vec<T>> {
    f.gradient(theta)
}

/// `grad f . u` as a differentiable expression.
pub fn directional_derivative<T: Scalar>(f: &Expr<T>, u: &[T]) -> Result<Expr<T>> {
    f.directional(u)
}
