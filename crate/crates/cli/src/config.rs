//! Experiment configuration, read from TOML (or from the `config` field of
//! a run manifest).

use std::path::{Path, PathBuf};

use groupnewton::problems::{Activation, LossKind, SynthKind, Task};
use groupnewton::{Method, StepConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// One of `gd`, `cauchy`, `newton`, `partitioned`.
    pub method: String,
    /// `trivial`, `discrete`, `canonical` or `file:PATH` (partition JSON).
    pub partition: String,
    /// Seeds the problem, dataset, initialization and check directions.
    pub seed: u64,
    pub output: OutputConfig,
    pub problem: ProblemConfig,
    pub step: StepConfig<f64>,
    pub check: CheckConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: "partitioned".into(),
            partition: "canonical".into(),
            seed: 0,
            output: OutputConfig::default(),
            problem: ProblemConfig::default(),
            step: StepConfig::default(),
            check: CheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write `trace.json` next to `trace.csv`.
    pub trace_json: bool,
    /// Write `params.json` with the final point.
    pub params: bool,
    /// Write `blocks/*.csv` from `inspect`.
    pub blocks: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            trace_json: true,
            params: true,
            blocks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProblemConfig {
    /// `1/2 (x - c)' A (x - c)` with a seeded spectrum.
    Quadratic {
        dim: usize,
        eig_min: f64,
        eig_max: f64,
        /// Starting point; the origin when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start: Option<Vec<f64>>,
    },
    Rosenbrock {
        #[serde(default = "rosenbrock_start")]
        start: [f64; 2],
    },
    Mlp {
        widths: Vec<usize>,
        activation: Activation,
        loss: LossKind,
        #[serde(default = "one")]
        init_scale: f64,
        /// Rows per step, cycling through the data; full batch when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        batch_size: Option<usize>,
        dataset: DatasetConfig,
    },
}

fn rosenbrock_start() -> [f64; 2] {
    [-1.2, 1.0]
}

fn one() -> f64 {
    1.0
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig::Quadratic {
            dim: 4,
            eig_min: 0.1,
            eig_max: 10.0,
            start: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        kind: SynthKind,
        n: usize,
        /// Default noise of the kind when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<f64>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        /// Every column but the label when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        features: Option<Vec<String>>,
        task: Task,
    },
}

/// Tolerances and sizes for `check`. `tol`, when set, replaces every
/// tolerance below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Random directions per order for the sum-collapse and symmetry checks.
    pub directions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    pub gradient_tol: f64,
    pub hessian_tol: f64,
    pub pseudo_hessian_tol: f64,
    pub sum_collapse_tol: f64,
    pub symmetry_tol: f64,
    pub identity_tol: f64,
    /// Central-difference steps.
    pub fd_step: f64,
    pub fd_hessian_step: f64,
    pub fd_pseudo_step: f64,
    /// Dense finite-difference Hessian check only up to this many parameters.
    pub max_dense_params: usize,
    /// Finite-difference pseudo-Hessian check only up to this many parameters.
    pub max_fd_pseudo_params: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            directions: 20,
            tol: None,
            gradient_tol: 1e-6,
            hessian_tol: 1e-5,
            pseudo_hessian_tol: 1e-5,
            sum_collapse_tol: 1e-10,
            symmetry_tol: 1e-10,
            identity_tol: 1e-10,
            fd_step: 1e-5,
            fd_hessian_step: 1e-4,
            fd_pseudo_step: 1e-3,
            max_dense_params: 8,
            max_fd_pseudo_params: 64,
        }
    }
}

impl CheckConfig {
    pub fn tolerance(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }
}

/// How the partition is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionChoice {
    Trivial,
    Discrete,
    Canonical,
    File(PathBuf),
}

impl PartitionChoice {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "trivial" => Ok(PartitionChoice::Trivial),
            "discrete" => Ok(PartitionChoice::Discrete),
            "canonical" => Ok(PartitionChoice::Canonical),
            _ => match s.strip_prefix("file:") {
                Some(p) if !p.is_empty() => Ok(PartitionChoice::File(PathBuf::from(p))),
                _ => Err(CliError::Config(format!(
                    "unknown partition `{s}`; valid: trivial, discrete, canonical, file:PATH"
                ))),
            },
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub partition: Option<String>,
}

impl ExperimentConfig {
    /// Reads a TOML config, or a `manifest.json` to replay its run.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: Manifest = serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            Ok(m.config)
        } else {
            Self::from_toml(&text).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
                other => other,
            })
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.method {
            self.method = m.clone();
        }
        if let Some(p) = &o.partition {
            self.partition = p.clone();
        }
    }

    pub fn method(&self) -> Result<Method, CliError> {
        self.method.parse().map_err(|e: groupnewton::Error| {
            CliError::Config(e.to_string().trim_start_matches("invalid argument: ").to_string())
        })
    }

    pub fn partition_choice(&self) -> Result<PartitionChoice, CliError> {
        PartitionChoice::parse(&self.partition)
    }

    /// Checks everything that can be checked without building the problem.
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: groupnewton::Error| CliError::Config(e.to_string());
        self.method()?;
        if let PartitionChoice::File(p) = self.partition_choice()? {
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "partition file {} does not exist",
                    p.display()
                )));
            }
        }
        self.step.validate().map_err(cfg)?;
        match &self.problem {
            ProblemConfig::Quadratic { dim, eig_min, eig_max, start } => {
                if *dim == 0 {
                    return Err(CliError::Config("quadratic dim must be >= 1".into()));
                }
                if !(eig_min.is_finite() && eig_max.is_finite() && eig_min <= eig_max) {
                    return Err(CliError::Config(format!(
                        "invalid eigenvalue range [{eig_min}, {eig_max}]"
                    )));
                }
                if let Some(s) = start {
                    if s.len() != *dim {
                        return Err(CliError::Config(format!(
                            "quadratic start has {} entries, dim is {dim}",
                            s.len()
                        )));
                    }
                }
            }
            ProblemConfig::Rosenbrock { .. } => {}
            ProblemConfig::Mlp { widths, init_scale, batch_size, dataset, .. } => {
                if widths.len() < 3 || widths.contains(&0) {
                    return Err(CliError::Config(format!(
                        "mlp widths need input, hidden and output sizes >= 1, got {widths:?}"
                    )));
                }
                if !init_scale.is_finite() || *init_scale < 0.0 {
                    return Err(CliError::Config(format!("invalid init_scale {init_scale}")));
                }
                if *batch_size == Some(0) {
                    return Err(CliError::Config("batch_size must be >= 1".into()));
                }
                match dataset {
                    DatasetConfig::Synthetic { n, .. } if *n == 0 => {
                        return Err(CliError::Config("dataset size must be >= 1".into()));
                    }
                    DatasetConfig::Csv { path, .. } if !path.is_file() => {
                        return Err(CliError::Config(format!(
                            "dataset file {} does not exist",
                            path.display()
                        )));
                    }
                    _ => {}
                }
            }
        }
        if self.check.directions == 0 {
            return Err(CliError::Config("check.directions must be >= 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let d = ExperimentConfig::default();
        let text = d.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), d);
        assert!(text.contains("method = \"partitioned\""));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            method = "newton"
            [problem]
            kind = "mlp"
            widths = [2, 3, 2]
            activation = "tanh"
            loss = "mse"
            [problem.dataset]
            source = "synthetic"
            kind = "moons"
            n = 16
            [step]
            damping = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.method().unwrap(), Method::Newton);
        assert_eq!(c.step.damping, 0.5);
        assert_eq!(c.step.max_iters, 100);
        assert!(matches!(c.problem, ProblemConfig::Mlp { init_scale, .. } if init_scale == 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(ExperimentConfig::from_toml("nonsense = 1").is_err());
        let c = ExperimentConfig {
            method: "bfgs".into(),
            ..ExperimentConfig::default()
        };
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("gd, cauchy, newton, partitioned"), "{msg}");
        let c = ExperimentConfig {
            partition: "blocks".into(),
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
        let c = ExperimentConfig {
            partition: "file:/nonexistent/p.json".into(),
            ..ExperimentConfig::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn overrides_win() {
        let mut c = ExperimentConfig::default();
        c.apply(&Overrides {
            out: Some("x".into()),
            seed: Some(9),
            method: Some("gd".into()),
            partition: Some("discrete".into()),
        });
        assert_eq!(c.output.dir, PathBuf::from("x"));
        assert_eq!((c.seed, c.method.as_str(), c.partition.as_str()), (9, "gd", "discrete"));
    }
}
