use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Targets};
use crate::autodiff::{Expr, Layout, ParamVector};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Softplus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `1/N sum ||out - y||^2`, classes one-hot encoded.
    Mse,
    /// Mean softmax cross-entropy; needs class targets.
    SoftmaxCe,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            _ => Err(Error::InvalidArgument(format!(
                "unknown activation `{s}`; valid: tanh, softplus"
            ))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::SoftmaxCe => "softmax-ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "softmax-ce" => Ok(LossKind::SoftmaxCe),
            _ => Err(Error::InvalidArgument(format!(
                "unknown loss `{s}`; valid: mse, softmax-ce"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub loss: LossKind,
    pub seed: u64,
    /// Weights and biases start uniform in `[-a, a]`, `a = init_scale / sqrt(fan_in)`.
    pub init_scale: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            widths: vec![2, 8, 2],
            activation: Activation::Tanh,
            loss: LossKind::SoftmaxCe,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "an MLP needs input, at least one hidden and an output width; got {:?}",
                self.widths
            )));
        }
        if self.widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "layer widths must be >= 1, got {:?}",
                self.widths
            )));
        }
        if !self.init_scale.is_finite() || self.init_scale < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "init_scale must be finite and nonnegative, got {}",
                self.init_scale
            )));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `layer{l}/weight` of shape `[in, out]` then `layer{l}/bias` of shape
    /// `[out]`, for `l = 1..L`.
    pub fn layout(&self) -> Result<Arc<Layout>> {
        self.validate()?;
        let mut shapes = Vec::new();
        let mut labels = Vec::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            shapes.push(vec![w[0], w[1]]);
            labels.push(format!("layer{}/weight", l + 1));
            shapes.push(vec![w[1]]);
            labels.push(format!("layer{}/bias", l + 1));
        }
        Layout::with_labels(shapes, labels)
    }
}

/// A network definition with its parameter layout.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Arc<Layout>,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        let layout = spec.layout()?;
        Ok(Mlp { spec, layout })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    /// Seeded initial parameters.
    pub fn init<T: Scalar>(&self) -> ParamVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        let mut values = Vec::with_capacity(self.layout.len());
        for w in self.spec.widths.windows(2) {
            let a = self.spec.init_scale / (w[0] as f64).sqrt();
            let mut draw = |n: usize| {
                for _ in 0..n {
                    let u: f64 = if a > 0.0 { rng.random_range(-a..=a) } else { 0.0 };
                    values.push(T::lit(u));
                }
            };
            draw(w[0] * w[1]);
            draw(w[1]);
        }
        ParamVector::new(self.layout.clone(), values).expect("layout length")
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        let input = self.spec.widths[0];
        let output = *self.spec.widths.last().expect("validated");
        if data.num_features() != input {
            return Err(Error::Length {
                what: "input width vs dataset features",
                expected: data.num_features(),
                got: input,
            });
        }
        if data.targets().width() != output {
            return Err(Error::Length {
                what: "output width vs targets",
                expected: data.targets().width(),
                got: output,
            });
        }
        if self.spec.loss == LossKind::SoftmaxCe && !matches!(data.targets(), Targets::Classes { .. }) {
            return Err(Error::InvalidArgument(
                "softmax cross-entropy needs class targets".into(),
            ));
        }
        Ok(())
    }

    /// Network output on `x`, one row per sample.
    pub fn forward<T: Scalar>(&self, x: &Array2<f64>) -> Expr<T> {
        let params = Expr::params(&self.layout);
        let n = x.nrows();
        let mut h = Expr::constant(x.mapv(T::lit));
        let layers = self.spec.num_layers();
        for l in 0..layers {
            let (w, b) = (&params[2 * l], &params[2 * l + 1]);
            let z = h.matmul(w) + b.broadcast_to(n, self.spec.widths[l + 1]);
            h = if l + 1 == layers {
                z
            } else {
                match self.spec.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Softplus => z.softplus(),
                }
            };
        }
        h
    }

    /// Mean loss over the whole dataset.
    pub fn loss<T: Scalar>(&self, data: &Dataset) -> Result<Expr<T>> {
        self.check(data)?;
        let out = self.forward::<T>(data.features());
        let n = T::lit(data.len() as f64);
        let expr = match (self.spec.loss, data.targets()) {
            (LossKind::Mse, targets) => {
                let y = Expr::constant(target_matrix::<T>(targets));
                (out - y).square().sum() / Expr::scalar(n)
            }
            (LossKind::SoftmaxCe, Targets::Classes { .. }) => {
                let onehot = Expr::constant(target_matrix::<T>(data.targets()));
                let picked = (&out * &onehot).row_sum();
                (out.log_sum_exp_rows() - picked).sum() / Expr::scalar(n)
            }
            (LossKind::SoftmaxCe, Targets::Values(_)) => unreachable!("rejected by check"),
        };
        Ok(expr)
    }

    /// Mean loss over the rows in `indices`.
    pub fn minibatch_loss<T: Scalar>(&self, data: &Dataset, indices: &[usize]) -> Result<Expr<T>> {
        self.loss(&data.subset(indices)?)
    }

    /// Fraction of rows whose largest output matches the class.
    pub fn accuracy<T: Scalar>(&self, data: &Dataset, theta: &ParamVector<T>) -> Result<f64> {
        let Targets::Classes { labels, .. } = data.targets() else {
            return Err(Error::InvalidArgument("accuracy needs class targets".into()));
        };
        let out = self.forward::<T>(data.features()).evaluate_matrix(theta)?;
        let hits = out
            .rows()
            .into_iter()
            .zip(labels)
            .filter(|(row, &l)| {
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                    .0;
                best == l
            })
            .count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn target_matrix<T: Scalar>(targets: &Targets) -> Array2<T> {
    match targets {
        Targets::Classes {
            labels,
            num_classes,
        } => Array2::from_shape_fn((labels.len(), *num_classes), |(r, c)| {
            if labels[r] == c {
                T::one()
            } else {
                T::zero()
            }
        }),
        Targets::Values(v) => v.mapv(T::lit),
    }
}

/// Full-batch loss over the canonical layout, with the seeded initial point.
pub fn make_mlp<T: Scalar>(spec: &MlpSpec, data: &Dataset) -> Result<(Expr<T>, ParamVector<T>)> {
    let mlp = Mlp::new(spec.clone())?;
    Ok((mlp.loss(data)?, mlp.init()))
}
