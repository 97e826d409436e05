use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::PassCount;
use crate::error::Result;

/// Outcome of the linear solve behind a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepStatus {
    Clean,
    /// Solved after adding `shift` times the largest entry of the
    /// equilibrated system to its diagonal.
    Regularized { shift: f64 },
    CauchyFallback,
    /// Fixed-step gradient descent because the curvature along `g` was not
    /// positive.
    GdFallback,
    /// Solved cleanly on the groups with nonzero gradient; the listed
    /// (0-based) groups got a zero rate.
    ZeroGroupsDropped { groups: Vec<usize> },
}

impl StepStatus {
    pub fn is_clean(&self) -> bool {
        matches!(self, StepStatus::Clean | StepStatus::ZeroGroupsDropped { .. })
    }
}

impl fmt::Display for StepStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepStatus::Clean => write!(f, "clean"),
            StepStatus::Regularized { shift } => write!(f, "regularized({shift:e})"),
            StepStatus::CauchyFallback => write!(f, "cauchy-fallback"),
            StepStatus::GdFallback => write!(f, "gd-fallback"),
            StepStatus::ZeroGroupsDropped { groups } => {
                let list: Vec<String> = groups.iter().map(|g| (g + 1).to_string()).collect();
                write!(f, "zero-groups-dropped({})", list.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub iter: usize,
    pub loss_before: f64,
    pub loss_after: f64,
    /// Gradient norm at the point the step started from.
    pub grad_norm: f64,
    /// Per-group rates: `eta` for partitioned steps, `[eta*]` for Cauchy,
    /// `[1]` for gradient descent, empty for Newton.
    pub eta: Vec<f64>,
    pub status: StepStatus,
    /// Groups with zero gradient, whatever the status.
    pub dropped: Vec<usize>,
    pub passes: PassCount,
    /// Seconds.
    pub wall_time: f64,
}

/// One row per step: `iter,loss,grad_norm,status,eta_1..eta_S`. Wall time
/// is left out so identical runs give identical files.
pub fn traces_to_csv(traces: &[StepTrace]) -> Result<String> {
    let width = traces.iter().map(|t| t.eta.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["iter".to_string(), "loss".into(), "grad_norm".into(), "status".into()];
    header.extend((1..=width).map(|k| format!("eta_{k}")));
    w.write_record(&header)?;
    for t in traces {
        let mut row = vec![
            t.iter.to_string(),
            t.loss_before.to_string(),
            t.grad_norm.to_string(),
            t.status.to_string(),
        ];
        row.extend((0..width).map(|k| t.eta.get(k).map(f64::to_string).unwrap_or_default()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn traces_to_json(traces: &[StepTrace]) -> String {
    serde_json::to_string_pretty(traces).expect("traces serialize")
}

pub fn traces_from_json(text: &str) -> Result<Vec<StepTrace>> {
    Ok(serde_json::from_str(text)?)
}
