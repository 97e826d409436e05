//! `run`, `inspect` and `check`. Each writes its artifacts and a manifest
//! into the configured output directory.

use groupnewton::autodiff::passes;
use groupnewton::optim::{run_batched, traces_to_csv, traces_to_json, RunOutcome};
use groupnewton::summaries::pseudo_hessian;
use groupnewton::{Method, ParamVector, PassCount, StepTrace};
use serde::Serialize;

use crate::check::{run_checks, CheckReport};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::Experiment;
use crate::heatmap::{inverse_export, HeatmapExport};
use crate::manifest::{Artifacts, Manifest};

/// Where `inspect` evaluates the pseudo-Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum At {
    Init,
    /// After running the configured optimizer.
    Checkpoint,
}

impl At {
    pub fn name(self) -> &'static str {
        match self {
            At::Init => "init",
            At::Checkpoint => "checkpoint",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Serialize)]
struct TensorJson<'a> {
    label: &'a str,
    shape: &'a [usize],
    values: &'a [f64],
}

#[derive(Serialize)]
struct ParamsJson<'a> {
    num_params: usize,
    tensors: Vec<TensorJson<'a>>,
}

fn params_json(theta: &ParamVector<f64>) -> String {
    let l = theta.layout();
    let tensors = (0..l.num_tensors())
        .map(|k| TensorJson {
            label: &l.labels()[k],
            shape: &l.shapes()[k],
            values: theta.tensor(k),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&ParamsJson {
        num_params: theta.len(),
        tensors,
    })
    .expect("params serialize");
    s.push('\n');
    s
}

fn write_traces(out: &mut Artifacts, cfg: &ExperimentConfig, traces: &[StepTrace]) -> Result<(), CliError> {
    out.write("trace.csv", &traces_to_csv(traces).map_err(CliError::runtime)?)?;
    if cfg.output.trace_json {
        out.write("trace.json", &format!("{}\n", traces_to_json(traces)))?;
    }
    Ok(())
}

fn total_passes(traces: &[StepTrace]) -> PassCount {
    traces.iter().fold(PassCount::default(), |acc, t| acc + t.passes)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Runs the optimizer, recording totals and any abort in `manifest`.
fn optimize(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    method: Method,
    manifest: &mut Manifest,
) -> (RunOutcome<f64>, Option<String>) {
    let result = run_batched(
        |i| exp.objective_at(i),
        &exp.theta0,
        method,
        &exp.partition,
        &cfg.step,
    );
    let (outcome, cause) = match result {
        Ok(o) => (o, None),
        Err(abort) => {
            let abort = *abort;
            (abort.outcome, Some(abort.cause.to_string()))
        }
    };
    manifest.passes = total_passes(&outcome.traces);
    manifest.steps = outcome.traces.len();
    manifest.final_loss = finite(outcome.loss);
    manifest.final_grad_norm = finite(outcome.grad_norm);
    manifest.converged = Some(outcome.converged);
    if let Some(c) = &cause {
        manifest.status = "aborted".into();
        manifest.error = Some(c.clone());
    }
    (outcome, cause)
}

/// Writes traces and final parameters of a finished or aborted run.
fn write_run(
    cfg: &ExperimentConfig,
    out: &mut Artifacts,
    outcome: &RunOutcome<f64>,
) -> Result<(), CliError> {
    write_traces(out, cfg, &outcome.traces)?;
    if cfg.output.params {
        out.write("params.json", &params_json(&outcome.theta))?;
    }
    Ok(())
}

pub fn cmd_run(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let method = cfg.method()?;
    let exp = Experiment::build(cfg)?;
    let mut out = Artifacts::create(&cfg.output.dir)?;
    let mut manifest = Manifest::new("run", cfg);
    manifest.inputs = exp.inputs.clone();

    let (outcome, cause) = optimize(cfg, &exp, method, &mut manifest);
    write_run(cfg, &mut out, &outcome)?;
    out.finish(manifest)?;
    if let Some(c) = cause {
        return Err(CliError::Runtime(c));
    }
    Ok(RunSummary {
        steps: outcome.traces.len(),
        loss: outcome.loss,
        grad_norm: outcome.grad_norm,
        converged: outcome.converged,
    })
}

#[derive(Debug, Clone)]
pub struct InspectSummary {
    pub step: usize,
    pub hbar: HeatmapExport,
    pub inverse: HeatmapExport,
}

pub fn cmd_inspect(cfg: &ExperimentConfig, at: At) -> Result<InspectSummary, CliError> {
    let exp = Experiment::build(cfg)?;
    let mut out = Artifacts::create(&cfg.output.dir)?;
    let mut manifest = Manifest::new(&format!("inspect --at {}", at.name()), cfg);
    manifest.inputs = exp.inputs.clone();

    let (theta, step) = match at {
        At::Init => (exp.theta0.clone(), 0),
        At::Checkpoint => {
            let (outcome, cause) = optimize(cfg, &exp, cfg.method()?, &mut manifest);
            write_run(cfg, &mut out, &outcome)?;
            if let Some(c) = cause {
                out.finish(manifest)?;
                return Err(CliError::Runtime(c));
            }
            let n = outcome.traces.len();
            (outcome.theta, n)
        }
    };

    let (sys, count) = passes::measure(|| pseudo_hessian(&exp.objective, &theta, &exp.partition));
    manifest.passes += count;
    let sys = match sys {
        Ok(s) => s,
        Err(e) => {
            manifest.status = "aborted".into();
            manifest.error = Some(e.to_string());
            out.finish(manifest)?;
            return Err(CliError::runtime(e));
        }
    };
    let labels = exp.partition.labels();
    let hbar = if sys.hbar.iter().all(|v| v.is_finite()) {
        HeatmapExport::from_matrix("hbar", at.name(), step, labels, &sys.hbar)
    } else {
        HeatmapExport::missing(
            "hbar",
            at.name(),
            step,
            labels,
            "pseudo-Hessian has non-finite entries".into(),
        )
    };
    let inverse = inverse_export(at.name(), step, labels, &sys.hbar);

    out.write("hbar.json", &hbar.to_json())?;
    out.write("hbar_inv.json", &inverse.to_json())?;
    if cfg.output.blocks {
        for (prefix, export) in [("", &hbar), ("inv_", &inverse)] {
            if let Some(blocks) = &export.blocks {
                for (name, view) in blocks.iter() {
                    out.write(&format!("blocks/{prefix}{name}.csv"), &view.to_csv()?)?;
                }
            }
        }
    }
    if at == At::Init && cfg.output.params {
        out.write("params.json", &params_json(&theta))?;
    }
    manifest.warnings.extend(hbar.warning.iter().chain(&inverse.warning).cloned());
    out.finish(manifest)?;
    Ok(InspectSummary { step, hbar, inverse })
}

/// Runs the battery at the start point and writes `check_report.json`,
/// passing or not.
pub fn cmd_check(cfg: &ExperimentConfig, order: usize) -> Result<CheckReport, CliError> {
    let exp = Experiment::build(cfg)?;
    let mut out = Artifacts::create(&cfg.output.dir)?;
    let mut manifest = Manifest::new(&format!("check --order {order}"), cfg);
    manifest.inputs = exp.inputs.clone();
    let (report, count) = passes::measure(|| {
        run_checks(&exp.objective, &exp.theta0, &exp.partition, order, &cfg.check, cfg.seed)
    });
    manifest.passes = count;
    let report = report?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    out.write("check_report.json", &format!("{text}\n"))?;
    if let Some(name) = &report.first_failure {
        manifest.status = "failed".into();
        manifest.error = Some(format!("check `{name}` failed"));
    }
    out.finish(manifest)?;
    Ok(report)
}

pub fn defaults_toml() -> String {
    ExperimentConfig::default().to_toml()
}
