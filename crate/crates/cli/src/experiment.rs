//! Builds the objective, start point and partition a config describes.

use std::collections::BTreeMap;

use groupnewton::problems::{
    load_csv, make_rosenbrock, synth_dataset_with_noise, CsvSchema, Dataset, Mlp, MlpSpec,
    QuadraticProblem, QuadraticSpec,
};
use groupnewton::{Expr, ParamVector, Partition};

use crate::config::{DatasetConfig, ExperimentConfig, PartitionChoice, ProblemConfig};
use crate::error::CliError;
use crate::manifest::sha256_hex;

pub struct Experiment {
    pub objective: Expr<f64>,
    pub theta0: ParamVector<f64>,
    pub partition: Partition,
    /// Input name to content hash, for the manifest.
    pub inputs: BTreeMap<String, String>,
    minibatch: Option<(Mlp, Dataset, usize)>,
}

fn config_err(e: groupnewton::Error) -> CliError {
    CliError::Config(e.to_string())
}

impl Experiment {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let mut inputs = BTreeMap::new();
        let mut minibatch = None;
        let (objective, theta0) = match &cfg.problem {
            ProblemConfig::Quadratic { dim, eig_min, eig_max, start } => {
                let q = QuadraticProblem::<f64>::generate(&QuadraticSpec {
                    dim: *dim,
                    eig_min: *eig_min,
                    eig_max: *eig_max,
                    seed: cfg.seed,
                })
                .map_err(config_err)?;
                let x = q
                    .point(start.clone().unwrap_or_else(|| vec![0.0; *dim]))
                    .map_err(config_err)?;
                (q.expr(), x)
            }
            ProblemConfig::Rosenbrock { start } => {
                let (layout, f) = make_rosenbrock::<f64>();
                (f, ParamVector::new(layout, start.to_vec()).map_err(config_err)?)
            }
            ProblemConfig::Mlp {
                widths,
                activation,
                loss,
                init_scale,
                batch_size,
                dataset,
            } => {
                let data = match dataset {
                    DatasetConfig::Synthetic { kind, n, noise } => synth_dataset_with_noise(
                        *kind,
                        *n,
                        cfg.seed,
                        noise.unwrap_or(kind.default_noise()),
                    ),
                    DatasetConfig::Csv { path, label_column, features, task } => load_csv(
                        path,
                        &CsvSchema {
                            label_column: label_column.clone(),
                            features: features.clone(),
                            task: task.clone(),
                        },
                    ),
                }
                .map_err(config_err)?;
                inputs.insert("dataset".into(), data.content_hash().map_err(config_err)?);
                let mlp = Mlp::new(MlpSpec {
                    widths: widths.clone(),
                    activation: *activation,
                    loss: *loss,
                    seed: cfg.seed,
                    init_scale: *init_scale,
                })
                .map_err(config_err)?;
                let f = mlp.loss(&data).map_err(config_err)?;
                let x = mlp.init();
                if let Some(b) = batch_size {
                    minibatch = Some((mlp, data, *b));
                }
                (f, x)
            }
        };

        let p = theta0.len();
        let partition = match cfg.partition_choice()? {
            PartitionChoice::Trivial => Partition::trivial(p),
            PartitionChoice::Discrete => Partition::discrete(p),
            PartitionChoice::Canonical => Partition::canonical(theta0.layout()),
            PartitionChoice::File(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read {}: {e}", path.display()))
                })?;
                inputs.insert("partition".into(), sha256_hex(text.as_bytes()));
                Partition::from_json(&text, p)
            }
        }
        .map_err(config_err)?;

        Ok(Experiment {
            objective,
            theta0,
            partition,
            inputs,
            minibatch,
        })
    }

    /// Objective used at iteration `iter`: the full loss, or the minibatch
    /// of `batch_size` rows starting at `iter * batch_size`, wrapping.
    pub fn objective_at(&self, iter: usize) -> Expr<f64> {
        match &self.minibatch {
            None => self.objective.clone(),
            Some((mlp, data, b)) => {
                let n = data.len();
                let idx: Vec<usize> = (0..*b).map(|k| (iter * b + k) % n).collect();
                mlp.minibatch_loss(data, &idx)
                    .expect("minibatch indices are in range")
            }
        }
    }
}
