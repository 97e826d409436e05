use std::sync::Arc;

use ndarray::{array, Array2};

use super::*;
use crate::autodiff::Layout;
use crate::partition::PartitionKind;
use crate::oracle::{fd_directional, fd_pseudo_hessian};

fn vec_layout(p: usize) -> Arc<Layout> {
    Layout::new(vec![vec![p]]).unwrap()
}

fn point(l: &Arc<Layout>, v: &[f64]) -> ParamVector<f64> {
    ParamVector::new(l.clone(), v.to_vec()).unwrap()
}

/// `1/2 theta^T A theta` over a single vector tensor.
fn quadratic(a: Array2<f64>) -> (Arc<Layout>, Expr<f64>) {
    let l = vec_layout(a.nrows());
    let t = Expr::param(&l, 0);
    let f = (&t * &t.matmul(&Expr::constant(a))).sum().scale(0.5);
    (l, f)
}

/// Two-layer tanh network on fixed inputs, squared loss. Tensors: W1 [2,3],
/// b1 [3], W2 [3,1].
fn tiny_net() -> (Arc<Layout>, Expr<f64>, ParamVector<f64>) {
    let l = Layout::with_labels(
        vec![vec![2, 3], vec![3], vec![3, 1]],
        vec!["w1".into(), "b1".into(), "w2".into()],
    )
    .unwrap();
    let p = Expr::params(&l);
    let x = Expr::constant(array![[0.5, -1.0], [1.5, 0.25], [-0.7, 0.9]]);
    let y = Expr::constant(array![[1.0], [-0.5], [0.3]]);
    let h = (x.matmul(&p[0]) + p[1].broadcast_to(3, 3)).tanh();
    let out = h.matmul(&p[2]);
    let f = (&out - &y).square().mean();
    let theta: Vec<f64> = (0..l.len()).map(|i| 0.3 * ((i as f64) * 1.7).sin() + 0.1).collect();
    let theta = ParamVector::new(l.clone(), theta).unwrap();
    (l, f, theta)
}

#[test]
fn taylor_term_examples() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let x = point(&l, &[1.0, 1.0]);
    assert_eq!(taylor_term(&f, &x, &[1.0, 1.0], 2).unwrap(), 3.0);
    assert_eq!(taylor_term(&f, &x, &[1.0, 1.0], 3).unwrap(), 0.0);

    let l1 = vec_layout(1);
    let e = Expr::param(&l1, 0).entry(0, 0).exp();
    let t = taylor_term(&e, &point(&l1, &[0.0]), &[1.0], 4).unwrap();
    assert!((t - 1.0).abs() < 1e-15);

    assert!(matches!(
        taylor_term(&e, &point(&l1, &[0.0]), &[1.0], 0),
        Err(Error::InvalidArgument(_))
    ));
}

#[test]
fn taylor_terms_match_finite_differences() {
    let (_, f, theta) = tiny_net();
    let u: Vec<f64> = (0..theta.len()).map(|i| ((i * 7 % 5) as f64 - 2.0) / 3.0).collect();
    for d in 1..=3 {
        let exact = taylor_term(&f, &theta, &u, d).unwrap();
        let fd = fd_directional(&f, &theta, &u, d, 1e-3).unwrap();
        assert!((exact - fd).abs() < 1e-4 * (1.0 + exact.abs()), "d={d}: {exact} vs {fd}");
    }
}

#[test]
fn order_two_summary_of_quadratic_is_the_matrix() {
    let a = array![[2.0, 1.0], [1.0, 3.0]];
    let (l, f) = quadratic(a.clone());
    let part = Partition::discrete(2).unwrap();
    let t = summary_tensor(&f, &point(&l, &[0.4, -0.2]), &[1.0, 1.0], &part, 2).unwrap();
    assert_eq!(t.to_matrix().unwrap(), a);
    assert_eq!(t.total(), 7.0);
}

#[test]
fn trivial_partition_gives_the_taylor_term() {
    let (_, f, theta) = tiny_net();
    let part = Partition::trivial(theta.len()).unwrap();
    let u: Vec<f64> = (0..theta.len()).map(|i| (i as f64 * 0.37).cos()).collect();
    for d in 1..=3 {
        let t = summary_tensor(&f, &theta, &u, &part, d).unwrap();
        assert_eq!(t.entries().len(), 1);
        let tt = taylor_term(&f, &theta, &u, d).unwrap();
        assert!((t.total() - tt).abs() < 1e-12 * (1.0 + tt.abs()));
    }
}

#[test]
fn sum_collapse_and_symmetry() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let full = SummaryOptions {
        exploit_symmetry: false,
        ..Default::default()
    };
    let u: Vec<f64> = (0..theta.len()).map(|i| ((i * 3 % 7) as f64 - 3.0) / 4.0).collect();
    for d in 1..=3 {
        let t = summary_tensor_with(&f, &theta, &u, &part, d, &full).unwrap();
        let tt = taylor_term(&f, &theta, &u, d).unwrap();
        assert!((t.total() - tt).abs() <= 1e-10 * tt.abs().max(1e-12), "d={d}");
        assert!(t.symmetry_defect() <= 1e-10 * t.max_abs().max(1e-300), "d={d}");

        let sym = summary_tensor(&f, &theta, &u, &part, d).unwrap();
        for (a, b) in sym.entries().iter().zip(t.entries()) {
            assert!((a - b).abs() <= 1e-10 * t.max_abs());
        }
    }
}

#[test]
fn order_one_with_gradient_is_pseudo_gradient() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let g = f.gradient(&theta).unwrap();
    let t = summary_tensor(&f, &theta, &g, &part, 1).unwrap();
    let pg = pseudo_gradient(&f, &theta, &part).unwrap();
    for (a, b) in t.entries().iter().zip(&pg) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn order_two_with_gradient_is_pseudo_hessian() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let g = f.gradient(&theta).unwrap();
    let t = summary_tensor(&f, &theta, &g, &part, 2).unwrap();
    let sys = pseudo_hessian(&f, &theta, &part).unwrap();
    let m = t.to_matrix().unwrap();
    for (a, b) in m.iter().zip(sys.hbar.iter()) {
        assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn summary_cost_is_bounded() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let s = part.len();
    let u = vec![0.5; theta.len()];
    for d in 1..=3usize {
        let (t, count) = passes::measure(|| summary_tensor(&f, &theta, &u, &part, d));
        t.unwrap();
        assert!(count.backward as usize <= s.pow(d as u32 - 1), "d={d}: {count:?}");
    }
}

#[test]
fn budget_is_enforced() {
    let l = vec_layout(200);
    let f = Expr::<f64>::param(&l, 0).square().sum();
    let part = Partition::discrete(200).unwrap();
    let theta = ParamVector::zeros(l);
    let u = vec![1.0; 200];
    assert!(matches!(
        summary_tensor(&f, &theta, &u, &part, 3),
        Err(Error::Budget(_))
    ));
}

#[test]
fn pseudo_gradient_examples() {
    let l = vec_layout(3);
    let f = (Expr::param(&l, 0) * Expr::constant(array![[1.0, 2.0, 3.0]])).sum();
    let x = ParamVector::zeros(l.clone());
    let part = Partition::from_groups(3, vec![vec![0, 1], vec![2]], vec![], PartitionKind::Custom).unwrap();
    assert_eq!(pseudo_gradient(&f, &x, &part).unwrap(), vec![5.0, 9.0]);

    let trivial = Partition::trivial(3).unwrap();
    assert_eq!(pseudo_gradient(&f, &x, &trivial).unwrap(), vec![14.0]);

    let z = Expr::<f64>::param(&l, 0).square().sum();
    assert_eq!(pseudo_gradient(&z, &x, &part).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn pseudo_hessian_examples() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let x = point(&l, &[1.0, 1.0]);
    let sys = pseudo_hessian(&f, &x, &Partition::discrete(2).unwrap()).unwrap();
    assert_eq!(sys.hbar, array![[1.0, 0.0], [0.0, 8.0]]);
    assert_eq!(sys.gbar, vec![1.0, 4.0]);

    let sys = pseudo_hessian(&f, &x, &Partition::trivial(2).unwrap()).unwrap();
    assert_eq!(sys.hbar, array![[9.0]]);
    assert_eq!(sys.gbar, vec![5.0]);

    let sys = pseudo_hessian(&f, &point(&l, &[0.0, 0.0]), &Partition::discrete(2).unwrap())
        .unwrap();
    assert_eq!(sys.hbar, Array2::<f64>::zeros((2, 2)));
    assert_eq!(sys.gbar, vec![0.0, 0.0]);
}

#[test]
fn pseudo_hessian_costs_one_pass_per_group_plus_one() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let (sys, count) = passes::measure(|| pseudo_hessian(&f, &theta, &part));
    sys.unwrap();
    assert_eq!(count.backward as usize, part.len() + 1);
}

#[test]
fn pseudo_hessian_matches_value_oracle() {
    let (l, f, theta) = tiny_net();
    for part in [
        Partition::canonical(&l).unwrap(),
        Partition::discrete(theta.len()).unwrap(),
    ] {
        let sys = pseudo_hessian(&f, &theta, &part).unwrap();
        let fd = fd_pseudo_hessian(&f, &theta, &part, 1e-6, 1e-4).unwrap();
        for (a, b) in sys.hbar.iter().zip(fd.iter()) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
        }
        assert!((sys.total_curvature() - taylor_term(&f, &theta, &sys.gradient, 2).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn pseudo_system_json_round_trip() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let sys = pseudo_hessian(&f, &theta, &part).unwrap();
    let back = PseudoSystem::<f64>::from_json(&sys.to_json()).unwrap();
    assert_eq!(back.hbar, sys.hbar);
    assert_eq!(back.gbar, sys.gbar);
    assert_eq!(back.labels, vec!["w1", "b1", "w2"]);
    assert!(PseudoSystem::<f64>::from_json(r#"{"hbar":[[1.0]],"gbar":[1.0,2.0],"labels":[]}"#).is_err());
}

#[test]
fn summary_json_round_trip() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let t = summary_tensor(&f, &theta, &vec![1.0; theta.len()], &part, 2).unwrap();
    let back = SummaryTensor::<f64>::from_json(&t.to_json()).unwrap();
    assert_eq!(back.entries(), t.entries());
    assert_eq!(back.order(), 2);
}

#[test]
fn regularizer_examples() {
    let (l, f) = quadratic(array![[2.0, 1.0], [1.0, 3.0]]);
    let x = point(&l, &[0.3, 0.1]);
    let r = regularization_vector(&f, &x, &Partition::discrete(2).unwrap(), Default::default())
        .unwrap();
    assert_eq!(r.values, vec![0.0, 0.0]);

    let l2 = vec_layout(2);
    let t = Expr::param(&l2, 0);
    let cube = t.entry(0, 0).powi(3) + t.entry(0, 1).scale(0.0);
    let part = Partition::from_groups(2, vec![vec![0], vec![1]], vec![], PartitionKind::Custom).unwrap();
    let r = regularization_vector(&cube, &point(&l2, &[0.7, 0.2]), &part, Default::default())
        .unwrap();
    assert!((r.values[0] - 6f64.powf(2.0 / 3.0)).abs() < 1e-10);
    assert_eq!(r.values[1], 0.0);
    assert!(!r.lower_bound);

    let ex = t.entry(0, 0).exp() + t.entry(0, 1).square();
    let r = regularization_vector(&ex, &point(&l2, &[0.0, 0.0]), &part, Default::default())
        .unwrap();
    assert!((r.values[0] - 1.0).abs() < 1e-12);
    assert_eq!(r.values[1], 0.0);
}

#[test]
fn sampled_regularizer_is_a_lower_bound() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let exact = regularization_vector(&f, &theta, &part, Default::default()).unwrap();
    let sampled =
        regularization_vector(&f, &theta, &part, RegularizationMode::Sampled { samples: 16, seed: 3 })
            .unwrap();
    assert!(sampled.lower_bound);
    for (s, e) in sampled.values.iter().zip(&exact.values) {
        assert!(*s <= *e + 1e-12);
    }
    let again =
        regularization_vector(&f, &theta, &part, RegularizationMode::Sampled { samples: 16, seed: 3 })
            .unwrap();
    assert_eq!(again.values, sampled.values);
}

#[test]
fn oversized_group_is_rejected_in_exact_mode() {
    let (l, f, theta) = tiny_net();
    let part = Partition::canonical(&l).unwrap();
    let r = regularization_vector(&f, &theta, &part, RegularizationMode::Exact { max_group: 2 });
    assert!(matches!(r, Err(Error::Budget(_))));
}

#[test]
fn multisets_are_counted() {
    assert_eq!(multisets(0, 4).len(), 1);
    assert_eq!(multisets(2, 4).len(), 10);
    assert_eq!(multisets(3, 3).len(), 10);
}
