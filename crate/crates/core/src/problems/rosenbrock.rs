use std::sync::Arc;

use crate::autodiff::{Expr, Layout};
use crate::scalar::Scalar;

/// `(1 - x)^2 + 100 (y - x^2)^2` over one tensor of shape `[2]`.
pub fn make_rosenbrock<T: Scalar>() -> (Arc<Layout>, Expr<T>) {
    let layout = Layout::with_labels(vec![vec![2]], vec!["xy".into()]).expect("valid layout");
    let t = Expr::param(&layout, 0);
    let (x, y) = (t.entry(0, 0), t.entry(0, 1));
    let f = (Expr::scalar(T::one()) - &x).square() + (y - x.square()).square().scale(T::lit(100.0));
    (layout, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamVector;
    use crate::oracle::{fd_gradient, fd_hessian};

    #[test]
    fn known_values() {
        let (l, f) = make_rosenbrock::<f64>();
        let at = |v: [f64; 2]| ParamVector::new(l.clone(), v.to_vec()).unwrap();
        assert_eq!(f.evaluate(&at([1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(f.gradient(&at([1.0, 1.0])).unwrap(), vec![0.0, 0.0]);
        assert_eq!(f.evaluate(&at([0.0, 0.0])).unwrap(), 1.0);
        assert!((f.evaluate(&at([-1.2, 1.0])).unwrap() - 24.2).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (l, f) = make_rosenbrock::<f64>();
        let x = ParamVector::new(l, vec![-1.2, 1.0]).unwrap();
        let g = f.gradient(&x).unwrap();
        let fd = fd_gradient(&f, &x, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
        }
        // [[1200x^2 - 400y + 2, -400x], [-400x, 200]]
        let h = fd_hessian(&f, &x, 1e-4).unwrap();
        let exact = [[1330.0, 480.0], [480.0, 200.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((h[[i, j]] - exact[i][j]).abs() <= 1e-5 * (1.0 + exact[i][j].abs()));
            }
        }
    }
}
