use std::sync::Arc;

use ndarray::{array, Array2};

use super::*;
use crate::autodiff::{Expr, Layout, ParamVector};
use crate::error::Error;
use crate::partition::Partition;
use crate::summaries::{pseudo_hessian, PseudoSystem};

fn vec_layout(p: usize) -> Arc<Layout> {
    Layout::new(vec![vec![p]]).unwrap()
}

fn point(l: &Arc<Layout>, v: &[f64]) -> ParamVector<f64> {
    ParamVector::new(l.clone(), v.to_vec()).unwrap()
}

fn quadratic(a: Array2<f64>) -> (Arc<Layout>, Expr<f64>) {
    let l = vec_layout(a.nrows());
    let t = Expr::param(&l, 0);
    let f = (&t * &t.matmul(&Expr::constant(a))).sum().scale(0.5);
    (l, f)
}

fn rosenbrock() -> (Arc<Layout>, Expr<f64>) {
    let l = vec_layout(2);
    let t = Expr::param(&l, 0);
    let (x, y) = (t.entry(0, 0), t.entry(0, 1));
    let f = (Expr::scalar(1.0) - &x).square() + (y - x.square()).square().scale(100.0);
    (l, f)
}

fn system(h: Array2<f64>, g: Vec<f64>) -> PseudoSystem<f64> {
    let s = g.len();
    PseudoSystem {
        hbar: h,
        gbar: g,
        labels: (1..=s).map(|k| format!("g{k}")).collect(),
        gradient: Vec::new(),
        loss: 0.0,
        point_fingerprint: String::new(),
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn solve_examples() {
    let cfg = StepConfig::default();
    let sol = solve_pseudo_system(&system(array![[1.0, 0.0], [0.0, 8.0]], vec![1.0, 4.0]), &cfg, None)
        .unwrap();
    assert_eq!(sol.eta, vec![1.0, 0.5]);
    assert_eq!(sol.status, StepStatus::Clean);

    let sol = solve_pseudo_system(&system(array![[9.0]], vec![5.0]), &cfg, None).unwrap();
    assert!((sol.eta[0] - 5.0 / 9.0).abs() < 1e-15);

    let sol = solve_pseudo_system(&system(Array2::zeros((2, 2)), vec![0.0, 0.0]), &cfg, None)
        .unwrap();
    assert_eq!(sol.eta, vec![0.0, 0.0]);
    assert_eq!(sol.status, StepStatus::ZeroGroupsDropped { groups: vec![0, 1] });
}

#[test]
fn zero_groups_are_dropped() {
    let cfg = StepConfig::default();
    let h = array![[2.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 3.0]];
    let sol = solve_pseudo_system(&system(h, vec![1.0, 0.0, 2.0]), &cfg, None).unwrap();
    assert_eq!(sol.eta[1], 0.0);
    assert!(close(&[sol.eta[0], sol.eta[2]], &[0.2, 0.6], 1e-15));
    assert_eq!(sol.dropped, vec![1]);
    assert_eq!(sol.status.to_string(), "zero-groups-dropped(2)");
}

#[test]
fn indefinite_system_climbs_the_ladder() {
    let cfg = StepConfig::default();
    let sys = system(array![[1.0, 0.0], [0.0, -1.0]], vec![1.0, 1.0]);
    let sol = solve_pseudo_system(&sys, &cfg, None).unwrap();
    match sol.status {
        StepStatus::Regularized { shift } => assert!(shift > 0.0),
        other => panic!("expected a shift, got {other}"),
    }
    let descent: f64 = sol.eta.iter().zip(&sys.gbar).map(|(a, b)| a * b).sum();
    assert!(descent > 0.0);
}

#[test]
fn exhausted_ladder_falls_back_or_fails() {
    let sys = system(array![[1.0, 0.0], [0.0, -1.0]], vec![1.0, 1.0]);
    let mut cfg = StepConfig {
        ladder: vec![],
        ..StepConfig::default()
    };
    // 1'hbar1 = 0: no usable curvature, plain gradient step.
    let sol = solve_pseudo_system(&sys, &cfg, None).unwrap();
    assert_eq!(sol.status, StepStatus::GdFallback);

    // eta = (1, -2) does not descend; 1'hbar1 = 0.5 > 0.
    let sys2 = system(array![[1.0, 0.0], [0.0, -0.5]], vec![1.0, 1.0]);
    let sol = solve_pseudo_system(&sys2, &cfg, None).unwrap();
    assert_eq!(sol.status, StepStatus::CauchyFallback);
    assert_eq!(sol.eta, vec![4.0, 4.0]);

    cfg.cauchy_fallback = false;
    assert!(matches!(
        solve_pseudo_system(&sys, &cfg, None),
        Err(Error::Solver(_))
    ));
}

#[test]
fn regularized_solve_needs_r() {
    let cfg = StepConfig {
        epsilon: 0.5,
        ..StepConfig::default()
    };
    let sys = system(array![[1.0, 0.0], [0.0, 8.0]], vec![1.0, 4.0]);
    assert!(matches!(
        solve_pseudo_system(&sys, &cfg, None),
        Err(Error::InvalidArgument(_))
    ));
    let sol = solve_pseudo_system(&sys, &cfg, Some(&[2.0, 0.0])).unwrap();
    assert_eq!(sol.eta, vec![0.5, 0.5]);
}

#[test]
fn partitioned_step_examples() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let x = point(&l, &[1.0, 1.0]);
    let cfg = StepConfig::default();

    let (next, tr) = partitioned_newton_step(&f, &x, &Partition::discrete(2).unwrap(), &cfg).unwrap();
    assert!(close(next.values(), &[0.0, 0.0], 1e-12));
    assert_eq!(tr.status, StepStatus::Clean);
    assert_eq!(tr.loss_before, 1.5);
    assert_eq!(tr.eta, vec![1.0, 0.5]);

    let (next, _) = partitioned_newton_step(&f, &x, &Partition::trivial(2).unwrap(), &cfg).unwrap();
    assert!(close(next.values(), &[4.0 / 9.0, -1.0 / 9.0], 1e-12));

    let zero = point(&l, &[0.0, 0.0]);
    let (next, tr) = partitioned_newton_step(&f, &zero, &Partition::discrete(2).unwrap(), &cfg).unwrap();
    assert_eq!(next.values(), zero.values());
    assert_eq!(tr.dropped, vec![0, 1]);
}

#[test]
fn partitioned_step_pass_count() {
    let (l, f) = quadratic(array![[1.0, 0.2, 0.0], [0.2, 2.0, 0.1], [0.0, 0.1, 3.0]]);
    let x = point(&l, &[1.0, -1.0, 0.5]);
    let part = Partition::discrete(3).unwrap();
    let (_, tr) = partitioned_newton_step(&f, &x, &part, &StepConfig::default()).unwrap();
    // gradient + S products, plus the forward pass for the new loss.
    assert_eq!(tr.passes.backward, 4);
    assert_eq!(tr.passes.forward, 5);
}

#[test]
fn damping_scales_the_update() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let x = point(&l, &[1.0, 1.0]);
    let cfg = StepConfig {
        damping: 0.5,
        ..StepConfig::default()
    };
    let (next, _) = partitioned_newton_step(&f, &x, &Partition::discrete(2).unwrap(), &cfg).unwrap();
    assert!(close(next.values(), &[0.5, 0.5], 1e-15));
    let (next, _) = newton_step(&f, &x, &cfg).unwrap();
    assert!(close(next.values(), &[0.5, 0.5], 1e-15));
}

#[test]
fn cauchy_step_examples() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let cfg = StepConfig::default();
    let (next, tr) = cauchy_step(&f, &point(&l, &[1.0, 1.0]), &cfg).unwrap();
    assert!(close(next.values(), &[4.0 / 9.0, -1.0 / 9.0], 1e-15));
    assert!((tr.eta[0] - 5.0 / 9.0).abs() < 1e-15);

    let (l3, iso) = quadratic(Array2::eye(3));
    let (next, _) = cauchy_step(&iso, &point(&l3, &[0.3, -2.0, 5.0]), &cfg).unwrap();
    assert!(close(next.values(), &[0.0; 3], 1e-15));

    let z = point(&l, &[0.0, 0.0]);
    let (next, _) = cauchy_step(&f, &z, &cfg).unwrap();
    assert_eq!(next.values(), z.values());
}

#[test]
fn cauchy_with_negative_curvature_uses_gradient_descent() {
    let (l, f) = quadratic(array![[-1.0, 0.0], [0.0, -2.0]]);
    let cfg = StepConfig {
        damping: 0.1,
        ..StepConfig::default()
    };
    let (next, tr) = cauchy_step(&f, &point(&l, &[1.0, 1.0]), &cfg).unwrap();
    assert_eq!(tr.status, StepStatus::GdFallback);
    assert!(close(next.values(), &[1.1, 1.2], 1e-15));
}

#[test]
fn newton_step_examples() {
    let a = array![[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]];
    let (l, f) = quadratic(a);
    let (next, tr) = newton_step(&f, &point(&l, &[1.0, 2.0, -1.0]), &StepConfig::default()).unwrap();
    assert!(close(next.values(), &[0.0; 3], 1e-12));
    assert!(tr.eta.is_empty());

    let small = StepConfig {
        newton_budget: 2,
        ..StepConfig::default()
    };
    assert!(matches!(
        newton_step(&f, &point(&l, &[1.0, 2.0, -1.0]), &small),
        Err(Error::Budget(_))
    ));
}

#[test]
fn newton_solves_rosenbrock() {
    let (l, f) = rosenbrock();
    let cfg = StepConfig {
        max_iters: 50,
        grad_tol: 1e-8,
        ..StepConfig::default()
    };
    let out = run(&f, &point(&l, &[-1.2, 1.0]), Method::Newton, &Partition::trivial(2).unwrap(), &cfg)
        .unwrap();
    assert!(out.converged, "grad norm {}", out.grad_norm);
    assert!(close(out.theta.values(), &[1.0, 1.0], 1e-8));
}

#[test]
fn gd_step_examples() {
    let (l, iso) = quadratic(Array2::eye(2));
    let cfg = StepConfig::default();
    let (next, _) = gd_step(&iso, &point(&l, &[0.7, -0.4]), &cfg).unwrap();
    assert_eq!(next.values(), &[0.0, 0.0]);

    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let cfg = StepConfig {
        damping: 0.1,
        ..StepConfig::default()
    };
    let (next, _) = gd_step(&f, &point(&l, &[1.0, 1.0]), &cfg).unwrap();
    assert!(close(next.values(), &[0.9, 0.8], 1e-15));

    let frozen = StepConfig {
        damping: 0.0,
        ..StepConfig::default()
    };
    let x = point(&l, &[1.0, 1.0]);
    assert_eq!(gd_step(&f, &x, &frozen).unwrap().0.values(), x.values());
}

#[test]
fn run_examples() {
    let a = array![[2.0, 0.5], [0.5, 1.0]];
    let (l, f) = quadratic(a);
    let part = Partition::discrete(2).unwrap();
    let cfg = StepConfig::default();
    let out = run(&f, &point(&l, &[1.0, -2.0]), Method::Partitioned, &part, &cfg).unwrap();
    assert_eq!(out.traces.len(), 1);
    assert!(out.converged);

    let out = run(&f, &point(&l, &[0.0, 0.0]), Method::Partitioned, &part, &cfg).unwrap();
    assert!(out.traces.is_empty());
    assert!(out.converged);
}

#[test]
fn cauchy_with_backtracking_decreases_monotonically_on_rosenbrock() {
    let (l, f) = rosenbrock();
    let cfg = StepConfig {
        max_iters: 10_000,
        grad_tol: 1e-8,
        line_search: true,
        ..StepConfig::default()
    };
    let out = run(&f, &point(&l, &[-1.2, 1.0]), Method::Cauchy, &Partition::trivial(2).unwrap(), &cfg)
        .unwrap();
    for t in &out.traces {
        assert!(t.loss_after <= t.loss_before, "iteration {}: {} -> {}", t.iter, t.loss_before, t.loss_after);
    }
    assert!(out.loss < 1e-6, "final loss {}", out.loss);
}

#[test]
fn run_aborts_on_domain_error_with_last_good_point() {
    let l = vec_layout(1);
    let t = Expr::param(&l, 0);
    let f = t.ln().sum();
    // 3 -> 2.33 -> 1.48 -> 0.12 -> negative.
    let cfg = StepConfig {
        damping: 2.0,
        max_iters: 20,
        ..StepConfig::default()
    };
    let err = run(&f, &point(&l, &[3.0]), Method::Gd, &Partition::trivial(1).unwrap(), &cfg)
        .unwrap_err();
    assert!(matches!(err.cause, Error::Domain { .. }));
    assert!(err.outcome.theta.values()[0] > 0.0);
    assert_eq!(err.outcome.traces.len(), 3);
}

#[test]
fn method_names() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
    let msg = "sgd".parse::<Method>().unwrap_err().to_string();
    assert!(msg.contains("gd, cauchy, newton, partitioned"), "{msg}");
}

#[test]
fn config_validation() {
    assert!(StepConfig::<f64>::default().validate().is_ok());
    let bad = StepConfig::<f64> {
        damping: 0.0,
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    let bad = StepConfig::<f64> {
        ladder: vec![1e-3, 1e-4],
        ..Default::default()
    };
    assert!(bad.validate().is_err());
    assert_eq!(StepConfig::<f64>::default().ladder.len(), 17);
}

#[test]
fn trace_csv_layout() {
    let (l, f) = quadratic(array![[1.0, 0.0], [0.0, 2.0]]);
    let part = Partition::discrete(2).unwrap();
    let out = run(&f, &point(&l, &[1.0, 1.0]), Method::Partitioned, &part, &StepConfig::default())
        .unwrap();
    let csv = traces_to_csv(&out.traces).unwrap();
    assert_eq!(csv, "iter,loss,grad_norm,status,eta_1,eta_2\n0,1.5,2.23606797749979,clean,1,0.5\n");
    let back = traces_from_json(&traces_to_json(&out.traces)).unwrap();
    assert_eq!(back, out.traces);
}

#[test]
fn pseudo_system_step_matches_manual_update() {
    let a = array![[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.0]];
    let (l, f) = quadratic(a);
    let x = point(&l, &[0.5, -1.0, 2.0]);
    let part = Partition::from_groups(3, vec![vec![0, 2], vec![1]], vec![], crate::PartitionKind::Custom)
        .unwrap();
    let sys = pseudo_hessian(&f, &x, &part).unwrap();
    let sol = solve_pseudo_system(&sys, &StepConfig::default(), None).unwrap();
    let (next, _) = partitioned_newton_step(&f, &x, &part, &StepConfig::default()).unwrap();
    let g = &sys.gradient;
    let manual = [
        0.5 - g[0] * sol.eta[0],
        -1.0 - g[1] * sol.eta[1],
        2.0 - g[2] * sol.eta[0],
    ];
    assert!(close(next.values(), &manual, 1e-15));
}
