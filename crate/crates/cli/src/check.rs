//! The derivative test battery behind `check`.

use groupnewton::autodiff::passes;
use groupnewton::optim::dense_hessian;
use groupnewton::oracle::{fd_gradient, fd_hessian, fd_pseudo_hessian};
use groupnewton::summaries::{
    pseudo_hessian, summary_tensor, summary_tensor_with, taylor_term, SummaryOptions,
};
use groupnewton::{Expr, ParamVector, Partition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::CheckConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

/// Largest summary entry seen per order, over the random directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryInfo {
    pub order: usize,
    pub max_abs: f64,
    pub all_zero: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub passed: bool,
    pub first_failure: Option<String>,
    pub order: usize,
    pub num_params: usize,
    pub num_groups: usize,
    pub checks: Vec<CheckResult>,
    pub summaries: Vec<SummaryInfo>,
}

struct Battery {
    checks: Vec<CheckResult>,
}

impl Battery {
    fn push(&mut self, name: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) {
        self.checks.push(CheckResult {
            name: name.into(),
            measured,
            tolerance,
            // NaN fails.
            passed: measured <= tolerance,
            detail: detail.into(),
        });
    }
}

fn lib(e: groupnewton::Error) -> CliError {
    CliError::runtime(e)
}

/// `max_i |a_i - b_i| / (1 + |b_i|)`.
fn mixed_error(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
        .fold(0.0, f64::max)
}

/// `|a - b| / scale`, zero when both vanish.
fn relative(diff: f64, scale: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn run_checks(
    f: &Expr<f64>,
    theta: &ParamVector<f64>,
    part: &Partition,
    order: usize,
    cfg: &CheckConfig,
    seed: u64,
) -> Result<CheckReport, CliError> {
    if !(1..=3).contains(&order) {
        return Err(CliError::Config(format!("check order must be 1, 2 or 3, got {order}")));
    }
    let p = theta.len();
    let s = part.len();
    let mut b = Battery { checks: Vec::new() };

    let g = f.gradient(theta).map_err(lib)?;
    let fd = fd_gradient(f, theta, cfg.fd_step).map_err(lib)?;
    b.push(
        "gradient-fd",
        mixed_error(g.iter().copied(), fd.iter().copied()),
        cfg.tolerance(cfg.gradient_tol),
        format!("central differences, h = {:e}", cfg.fd_step),
    );

    if p <= cfg.max_dense_params {
        let h = dense_hessian(f, theta).map_err(lib)?;
        let hf = fd_hessian(f, theta, cfg.fd_hessian_step).map_err(lib)?;
        b.push(
            "hessian-fd",
            mixed_error(h.iter().copied(), hf.iter().copied()),
            cfg.tolerance(cfg.hessian_tol),
            format!("{p}x{p} against second differences"),
        );
    }

    let (sys, ph_passes) = passes::measure(|| pseudo_hessian(f, theta, part));
    let sys = sys.map_err(lib)?;

    if p <= cfg.max_fd_pseudo_params {
        let hf = fd_pseudo_hessian(f, theta, part, cfg.fd_step, cfg.fd_pseudo_step).map_err(lib)?;
        b.push(
            "pseudo-hessian-fd",
            mixed_error(sys.hbar.iter().copied(), hf.iter().copied()),
            cfg.tolerance(cfg.pseudo_hessian_tol),
            format!("{s}x{s} against the finite-difference construction"),
        );
    }

    // Along the gradient, orders one and two are the pseudo-gradient and
    // pseudo-Hessian.
    let hscale = sys.hbar.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let d2 = summary_tensor(f, theta, &g, part, 2).map_err(lib)?;
    let d2 = d2.to_matrix().expect("order two");
    let diff = d2.iter().zip(&sys.hbar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    b.push(
        "summary-at-gradient-order-2",
        relative(diff, hscale),
        cfg.tolerance(cfg.identity_tol),
        "order-2 summary along g equals the pseudo-Hessian",
    );
    let gscale = sys.gbar.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let d1 = summary_tensor(f, theta, &g, part, 1).map_err(lib)?;
    let diff = d1.entries().iter().zip(&sys.gbar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    b.push(
        "summary-at-gradient-order-1",
        relative(diff, gscale),
        cfg.tolerance(cfg.identity_tol),
        "order-1 summary along g equals the pseudo-gradient",
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Vec<f64>> = (0..cfg.directions)
        .map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let full = SummaryOptions {
        exploit_symmetry: false,
        ..SummaryOptions::default()
    };
    let mut summaries = Vec::new();
    let mut audits = Vec::new();
    for d in 1..=order {
        let mut collapse = 0.0f64;
        let mut asym = 0.0f64;
        let mut biggest = 0.0f64;
        let mut worst_passes = 0u64;
        for u in &dirs {
            let (t, c) = passes::measure(|| summary_tensor(f, theta, u, part, d));
            let t = t.map_err(lib)?;
            worst_passes = worst_passes.max(c.gradient_equivalents());
            let taylor = taylor_term(f, theta, u, d).map_err(lib)?;
            let scale = taylor.abs().max(t.max_abs());
            collapse = collapse.max(relative((t.total() - taylor).abs(), scale));
            biggest = biggest.max(t.max_abs());
            if d >= 2 {
                let full_t = summary_tensor_with(f, theta, u, part, d, &full).map_err(lib)?;
                asym = asym.max(relative(full_t.symmetry_defect(), full_t.max_abs()));
            }
        }
        b.push(
            format!("sum-collapse-order-{d}"),
            collapse,
            cfg.tolerance(cfg.sum_collapse_tol),
            format!("{} directions", dirs.len()),
        );
        if d >= 2 {
            b.push(
                format!("symmetry-order-{d}"),
                asym,
                cfg.tolerance(cfg.symmetry_tol),
                "every entry computed, no symmetric fill",
            );
        }
        summaries.push(SummaryInfo {
            order: d,
            max_abs: biggest,
            all_zero: biggest == 0.0,
        });
        audits.push((d, worst_passes));
    }

    let want = (s + 1) as u64;
    b.push(
        "pass-count-pseudo-hessian",
        ph_passes.gradient_equivalents() as f64,
        want as f64,
        format!("exactly S + 1 = {want} gradient-equivalent passes"),
    );
    if ph_passes.gradient_equivalents() != want {
        b.checks.last_mut().expect("just pushed").passed = false;
    }
    for (d, used) in audits {
        let bound = s.pow(d as u32 - 1) + s + 1;
        b.push(
            format!("pass-count-summary-order-{d}"),
            used as f64,
            bound as f64,
            format!("at most S^(d-1) + S + 1 = {bound}"),
        );
    }

    let first_failure = b.checks.iter().find(|c| !c.passed).map(|c| c.name.clone());
    Ok(CheckReport {
        passed: first_failure.is_none(),
        first_failure,
        order,
        num_params: p,
        num_groups: s,
        checks: b.checks,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use groupnewton::problems::{make_rosenbrock, QuadraticProblem, QuadraticSpec};

    #[test]
    fn rosenbrock_passes_at_order_three() {
        let (l, f) = make_rosenbrock::<f64>();
        let x = ParamVector::new(l, vec![-1.2, 1.0]).unwrap();
        let part = Partition::discrete(2).unwrap();
        let r = run_checks(&f, &x, &part, 3, &CheckConfig::default(), 1).unwrap();
        assert!(r.passed, "{:?}", r.checks);
        assert!(!r.summaries[2].all_zero);
    }

    #[test]
    fn quadratic_third_order_is_zero() {
        let q = QuadraticProblem::<f64>::generate(&QuadraticSpec::default()).unwrap();
        let x = q.point(vec![0.5; 4]).unwrap();
        let part = Partition::discrete(4).unwrap();
        let r = run_checks(&q.expr(), &x, &part, 3, &CheckConfig::default(), 2).unwrap();
        assert!(r.passed, "{:?}", r.checks);
        assert!(r.summaries[2].all_zero);
    }

    #[test]
    fn zero_tolerance_names_first_failure() {
        let q = QuadraticProblem::<f64>::generate(&QuadraticSpec::default()).unwrap();
        let x = q.point(vec![0.5; 4]).unwrap();
        let cfg = CheckConfig {
            tol: Some(0.0),
            ..CheckConfig::default()
        };
        let r = run_checks(&q.expr(), &x, &Partition::trivial(4).unwrap(), 2, &cfg, 0).unwrap();
        assert!(!r.passed);
        assert_eq!(r.first_failure.as_deref(), Some("gradient-fd"));
    }
}
