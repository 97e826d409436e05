mod common;

use common::*;
use groupnewton::optim::{partitioned_newton_step, solve_pseudo_system, StepConfig};
use groupnewton::problems::LossKind;
use groupnewton::summaries::{pseudo_hessian, regularization_vector, RegularizationMode};
use groupnewton::{Expr, ParamVector, Partition};

use rand::Rng;

/// Reparameterized loss `f(theta_tilde / alpha)` and start `alpha * theta`.
fn reparam(
    f: &Expr<f64>,
    theta: &ParamVector<f64>,
    part: &Partition,
    alpha: &[f64],
) -> (Expr<f64>, ParamVector<f64>, Vec<f64>) {
    let a = part.broadcast(alpha).unwrap();
    let inv: Vec<f64> = a.iter().map(|x| 1.0 / x).collect();
    let ft = f.rescale_params(&inv).unwrap();
    let t0 = theta
        .with_values(theta.values().iter().zip(&a).map(|(x, s)| x * s).collect())
        .unwrap();
    (ft, t0, a)
}

fn random_alpha(s: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..s)
        .map(|_| {
            let m = r.random_range(0.25..=4.0);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Runs 10 steps on both problems and returns the worst per-coordinate
/// relative error, or `None` when a step was not clean. Stops early once
/// the original run has converged.
fn trajectory_error(
    f: &Expr<f64>,
    theta: &ParamVector<f64>,
    part: &Partition,
    alpha: &[f64],
    cfg: &StepConfig<f64>,
) -> Option<f64> {
    let (ft, mut xt, a) = reparam(f, theta, part, alpha);
    let mut x = theta.clone();
    let mut worst = 0.0f64;
    let g0 = f.gradient(theta).unwrap().iter().map(|g| g * g).sum::<f64>().sqrt();
    for _ in 0..10 {
        let (nx, tr) = partitioned_newton_step(f, &x, part, cfg).unwrap();
        let (nxt, trt) = partitioned_newton_step(&ft, &xt, part, cfg).unwrap();
        // Converged: the iterates sit at the minimizer up to rounding.
        if tr.grad_norm <= 1e-9 * g0 {
            break;
        }
        if !tr.status.is_clean() || !trt.status.is_clean() {
            return None;
        }
        for ((u, v), s) in nxt.values().iter().zip(nx.values()).zip(&a) {
            let want = v * s;
            let e = (u - want).abs() / want.abs().max(1e-300);
            worst = worst.max(e);
        }
        x = nx;
        xt = nxt;
    }
    Some(worst)
}

#[test]
fn quadratic_trajectories_are_invariant() {
    let cfg = StepConfig::default();
    for seed in 0..20 {
        let (q, x) = pd_quadratic(seed);
        let p = q.dim();
        let s = 1 + (seed as usize % p);
        let part = random_partition(p, s, seed);
        let alpha = random_alpha(s, seed + 100);
        let e = trajectory_error(&q.expr(), &x, &part, &alpha, &cfg).expect("clean on PD quadratics");
        assert!(e <= 1e-8, "seed {seed}: {e:e}");
    }
}

/// One fixed, seeded network; random scalings.
#[test]
fn mlp_trajectories_are_invariant() {
    let cfg = StepConfig {
        line_search: true,
        ..StepConfig::default()
    };
    let (f, x) = small_mlp(&[2, 3, 2], LossKind::Mse, 0);
    let part = Partition::canonical(x.layout()).unwrap();
    for k in 0..20 {
        let alpha = random_alpha(part.len(), 1000 + k);
        let e = trajectory_error(&f, &x, &part, &alpha, &cfg).expect("clean run");
        assert!(e <= 1e-8, "draw {k}: {e:e}");
    }
}

/// Across many initializations the correspondence holds up to rounding
/// amplified by the conditioning of each trajectory.
#[test]
fn mlp_invariance_across_instances() {
    let cfg = StepConfig {
        line_search: true,
        ..StepConfig::default()
    };
    let mut clean = 0;
    for seed in 0..30 {
        let (f, x) = small_mlp(&[2, 3, 2], LossKind::Mse, seed);
        let part = Partition::canonical(x.layout()).unwrap();
        let alpha = random_alpha(part.len(), seed + 7);
        if let Some(e) = trajectory_error(&f, &x, &part, &alpha, &cfg) {
            assert!(e <= 1e-6, "seed {seed}: {e:e}");
            clean += 1;
        }
    }
    assert!(clean >= 10, "only {clean} clean instances");
}

/// `1/2 (theta - c)' A (theta - c) + sum_i k_i theta_i^3 / 6`.
fn quadratic_plus_cubic(seed: u64) -> (Expr<f64>, ParamVector<f64>) {
    let (q, x) = pd_quadratic(seed);
    let p = q.dim();
    let mut r = rng(seed + 50);
    let k: Vec<f64> = (0..p).map(|_| r.random_range(-0.3..0.3)).collect();
    let t = Expr::param(q.layout(), 0);
    let cubic = (t.powi(3) * Expr::constant(ndarray::Array2::from_shape_vec((1, p), k).unwrap()))
        .sum()
        .scale(1.0 / 6.0);
    (q.expr() + cubic, x)
}

fn exact_r(f: &Expr<f64>, x: &ParamVector<f64>, part: &Partition) -> Vec<f64> {
    regularization_vector(f, x, part, RegularizationMode::Exact { max_group: 64 })
        .unwrap()
        .values
}

#[test]
fn regularizer_scales_as_alpha_to_minus_two() {
    for seed in 0..10 {
        let (f, x) = quadratic_plus_cubic(seed);
        let part = random_partition(x.len(), 1 + seed as usize % x.len(), seed);
        let alpha = random_alpha(part.len(), seed + 3);
        let (ft, xt, _) = reparam(&f, &x, &part, &alpha);
        let r = exact_r(&f, &x, &part);
        let rt = exact_r(&ft, &xt, &part);
        for s in 0..part.len() {
            let want = r[s] / (alpha[s] * alpha[s]);
            assert!((rt[s] - want).abs() <= 1e-10 * want.abs().max(1e-300), "{} vs {want}", rt[s]);
        }
        // The pseudo-Hessian diagonal scales as alpha^-4.
        let h = pseudo_hessian(&f, &x, &part).unwrap().hbar;
        let ht = pseudo_hessian(&ft, &xt, &part).unwrap().hbar;
        for s in 0..part.len() {
            let want = h[[s, s]] / alpha[s].powi(4);
            assert!((ht[[s, s]] - want).abs() <= 1e-10 * want.abs());
        }
    }
}

/// Regularized partitioned iterates with `r` computed by `make_r`.
fn regularized_trajectory(
    f: &Expr<f64>,
    x0: &ParamVector<f64>,
    part: &Partition,
    epsilon: f64,
    make_r: &dyn Fn(&Expr<f64>, &ParamVector<f64>) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let cfg = StepConfig {
        epsilon,
        ..StepConfig::default()
    };
    let mut x = x0.clone();
    let mut out = Vec::new();
    for _ in 0..10 {
        let sys = pseudo_hessian(f, &x, part).unwrap();
        let r = make_r(f, &x);
        let sol = solve_pseudo_system(&sys, &cfg, Some(&r)).unwrap();
        assert!(sol.status.is_clean());
        let rates = part.broadcast(&sol.eta).unwrap();
        let next: Vec<f64> = x
            .values()
            .iter()
            .zip(&sys.gradient)
            .zip(&rates)
            .map(|((t, g), e)| t - g * e)
            .collect();
        x = x.with_values(next).unwrap();
        out.push(x.values().to_vec());
    }
    out
}

fn worst_mismatch(orig: &[Vec<f64>], tilde: &[Vec<f64>], a: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for (o, t) in orig.iter().zip(tilde) {
        for ((v, u), s) in o.iter().zip(t).zip(a) {
            let want = v * s;
            worst = worst.max((u - want).abs() / want.abs().max(1e-300));
        }
    }
    worst
}

#[test]
fn regularized_invariance_needs_alpha_to_minus_four_covariance() {
    let mut literal_breaks = 0;
    for seed in 0..10 {
        let (f, x) = quadratic_plus_cubic(seed);
        let part = random_partition(x.len(), 1 + seed as usize % x.len(), seed);
        let alpha = random_alpha(part.len(), seed + 3);
        let (ft, xt, a) = reparam(&f, &x, &part, &alpha);
        let eps = 0.5;

        // r squared scales like the pseudo-Hessian diagonal.
        let squared = |g: &Expr<f64>, y: &ParamVector<f64>| -> Vec<f64> {
            exact_r(g, y, &part).iter().map(|v| v * v).collect()
        };
        let e = worst_mismatch(
            &regularized_trajectory(&f, &x, &part, eps, &squared),
            &regularized_trajectory(&ft, &xt, &part, eps, &squared),
            &a,
        );
        assert!(e <= 1e-8, "seed {seed}: {e:e}");

        let literal = |g: &Expr<f64>, y: &ParamVector<f64>| exact_r(g, y, &part);
        let e = worst_mismatch(
            &regularized_trajectory(&f, &x, &part, eps, &literal),
            &regularized_trajectory(&ft, &xt, &part, eps, &literal),
            &a,
        );
        if e > 1e-6 {
            literal_breaks += 1;
        }
    }
    assert!(literal_breaks >= 8, "literal r kept invariance on {} of 10", 10 - literal_breaks);
}
