//! Test problems: seeded quadratics, Rosenbrock, and smooth MLPs on
//! synthetic or CSV data.

mod dataset;
mod mlp;
mod quadratic;
mod rosenbrock;

pub use dataset::{
    load_csv, synth_dataset, synth_dataset_with_noise, CsvSchema, Dataset, Provenance, SynthKind,
    Targets, Task,
};
pub use mlp::{make_mlp, Activation, LossKind, Mlp, MlpSpec};
pub use quadratic::{make_quadratic, QuadraticProblem, QuadraticSpec};
pub use rosenbrock::make_rosenbrock;
