use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Two Gaussian blobs centred at `(-1.5, -1.5)` and `(1.5, 1.5)`.
    Blobs,
    /// Two interleaving half circles.
    Moons,
}

impl SynthKind {
    pub fn default_noise(self) -> f64 {
        match self {
            SynthKind::Blobs => 0.5,
            SynthKind::Moons => 0.05,
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::Blobs => "blobs",
            SynthKind::Moons => "moons",
        })
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SynthKind::Blobs),
            "moons" => Ok(SynthKind::Moons),
            _ => Err(Error::InvalidArgument(format!(
                "unknown dataset kind `{s}`; valid kinds: blobs, moons"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, num_classes: usize },
    /// One row per sample.
    Values(Array2<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(v) => v.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Output width a model needs.
    pub fn width(&self) -> usize {
        match self {
            Targets::Classes { num_classes, .. } => *num_classes,
            Targets::Values(v) => v.ncols(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Provenance {
    Synthetic {
        kind: SynthKind,
        n: usize,
        seed: u64,
        noise: f64,
    },
    File {
        path: PathBuf,
        sha256: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

/// Which columns of a CSV file hold what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    /// Feature columns in order; every other column when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    pub task: Task,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    feature_names: Vec<String>,
    label_name: String,
    targets: Targets,
    provenance: Provenance,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Targets,
        provenance: Provenance,
    ) -> Result<Self> {
        let names = (1..=features.ncols()).map(|k| format!("x{k}")).collect();
        Self::with_names(features, names, "label".into(), targets, provenance)
    }

    fn with_names(
        features: Array2<f64>,
        feature_names: Vec<String>,
        label_name: String,
        targets: Targets,
        provenance: Provenance,
    ) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(Error::data("dataset has no rows"));
        }
        if targets.len() != features.nrows() {
            return Err(Error::Length {
                what: "targets",
                expected: features.nrows(),
                got: targets.len(),
            });
        }
        if let Some(((r, c), _)) = features.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data {
                row: Some(r + 1),
                column: feature_names.get(c).cloned(),
                message: "non-finite feature".into(),
            });
        }
        match &targets {
            Targets::Classes {
                labels,
                num_classes,
            } => {
                if let Some(r) = labels.iter().position(|&l| l >= *num_classes) {
                    return Err(Error::Data {
                        row: Some(r + 1),
                        column: Some(label_name),
                        message: format!("class {} out of range 0..{num_classes}", labels[r]),
                    });
                }
            }
            Targets::Values(v) => {
                if let Some(((r, _), _)) = v.indexed_iter().find(|(_, x)| !x.is_finite()) {
                    return Err(Error::Data {
                        row: Some(r + 1),
                        column: Some(label_name),
                        message: "non-finite target".into(),
                    });
                }
            }
        }
        Ok(Dataset {
            features,
            feature_names,
            label_name,
            targets,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "row {bad} out of range for {} rows",
                self.len()
            )));
        }
        let features = self.features.select(ndarray::Axis(0), indices);
        let targets = match &self.targets {
            Targets::Classes {
                labels,
                num_classes,
            } => Targets::Classes {
                labels: indices.iter().map(|&i| labels[i]).collect(),
                num_classes: *num_classes,
            },
            Targets::Values(v) => Targets::Values(v.select(ndarray::Axis(0), indices)),
        };
        Dataset::with_names(
            features,
            self.feature_names.clone(),
            self.label_name.clone(),
            targets,
            self.provenance.clone(),
        )
    }

    /// Header row of feature names then the label column; regression
    /// targets with several columns get `label_1, label_2, ...`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.feature_names.clone();
        match &self.targets {
            Targets::Values(v) if v.ncols() > 1 => {
                header.extend((1..=v.ncols()).map(|k| format!("{}_{k}", self.label_name)))
            }
            _ => header.push(self.label_name.clone()),
        }
        w.write_record(&header)?;
        for r in 0..self.len() {
            let mut row: Vec<String> = self.features.row(r).iter().map(f64::to_string).collect();
            match &self.targets {
                Targets::Classes { labels, .. } => row.push(labels[r].to_string()),
                Targets::Values(v) => row.extend(v.row(r).iter().map(f64::to_string)),
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    /// SHA-256 of the CSV export.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_csv()?.as_bytes())))
    }
}

/// Two balanced classes (`i % 2`), deterministic for a fixed seed.
pub fn synth_dataset(kind: SynthKind, n: usize, seed: u64) -> Result<Dataset> {
    synth_dataset_with_noise(kind, n, seed, kind.default_noise())
}

pub fn synth_dataset_with_noise(kind: SynthKind, n: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let normal = Normal::new(0.0, noise)
        .map_err(|e| Error::InvalidArgument(format!("invalid noise level {noise}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let (x, y) = match kind {
            SynthKind::Blobs => {
                let c = if class == 0 { -1.5 } else { 1.5 };
                (c, c)
            }
            SynthKind::Moons => {
                let t = rng.random_range(0.0..std::f64::consts::PI);
                if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                }
            }
        };
        features[[i, 0]] = x + normal.sample(&mut rng);
        features[[i, 1]] = y + normal.sample(&mut rng);
        labels.push(class);
    }
    Dataset::new(
        features,
        Targets::Classes {
            labels,
            num_classes: 2,
        },
        Provenance::Synthetic {
            kind,
            n,
            seed,
            noise,
        },
    )
}

/// Reads a comma-separated file with a header row.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let sha256 = hex::encode(Sha256::digest(&bytes));
    let mut dataset = parse_csv(&bytes, schema)?;
    dataset.provenance = Provenance::File {
        path: path.to_path_buf(),
        sha256,
    };
    Ok(dataset)
}

fn parse_csv(bytes: &[u8], schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::data("empty file: no header row"));
    }
    let find = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Data {
            row: None,
            column: Some(name.to_string()),
            message: format!("column not found; header is [{}]", header.join(", ")),
        })
    };
    let label_idx = find(&schema.label_column)?;
    let feature_names: Vec<String> = match &schema.features {
        Some(f) => f.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != label_idx)
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if feature_names.is_empty() {
        return Err(Error::data("no feature columns"));
    }
    let feature_idx: Vec<usize> = feature_names.iter().map(|n| find(n)).collect::<Result<_>>()?;

    let mut flat = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let cell = |i: usize| -> Result<f64> {
            let text = record.get(i).map(str::trim).unwrap_or("");
            let v: f64 = text.parse().map_err(|_| Error::Data {
                row: Some(row),
                column: Some(header[i].clone()),
                message: format!("`{text}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row: Some(row),
                    column: Some(header[i].clone()),
                    message: format!("non-finite value `{text}`"),
                });
            }
            Ok(v)
        };
        for &i in &feature_idx {
            flat.push(cell(i)?);
        }
        raw_labels.push((row, cell(label_idx)?));
    }
    if raw_labels.is_empty() {
        return Err(Error::data("empty file: no data rows"));
    }
    let n = raw_labels.len();
    let features = Array2::from_shape_vec((n, feature_idx.len()), flat).expect("shape");
    let targets = match schema.task {
        Task::Regression => {
            Targets::Values(Array2::from_shape_fn((n, 1), |(r, _)| raw_labels[r].1))
        }
        Task::Classification => {
            let mut labels = Vec::with_capacity(n);
            for &(row, v) in &raw_labels {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Data {
                        row: Some(row),
                        column: Some(schema.label_column.clone()),
                        message: format!("class label {v} is not a non-negative integer"),
                    });
                }
                labels.push(v as usize);
            }
            let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
            Targets::Classes {
                labels,
                num_classes,
            }
        }
    };
    Dataset::with_names(
        features,
        feature_names,
        schema.label_column.clone(),
        targets,
        Provenance::File {
            path: PathBuf::new(),
            sha256: String::new(),
        },
    )
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema {
            label_column: "y".into(),
            features: None,
            task: Task::Classification,
        }
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn synthetic_is_deterministic_and_balanced() {
        let a = synth_dataset(SynthKind::Blobs, 100, 7).unwrap();
        let b = synth_dataset(SynthKind::Blobs, 100, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        assert_ne!(a, synth_dataset(SynthKind::Blobs, 100, 8).unwrap());

        for n in [2, 7, 101] {
            let m = synth_dataset(SynthKind::Moons, n, 3).unwrap();
            let Targets::Classes { labels, .. } = m.targets() else {
                panic!("classes expected")
            };
            assert!(labels.iter().all(|&l| l < 2));
            let ones = labels.iter().filter(|&&l| l == 1).count();
            assert!((n - ones).abs_diff(ones) <= 1);
        }
        assert!(synth_dataset(SynthKind::Moons, 1, 0).is_err());
        assert!("spirals".parse::<SynthKind>().is_err());
    }

    #[test]
    fn well_formed_file() {
        let f = write("a,b,y\n1.0,2.0,0\n3.5,-1,1\n0,0,1\n");
        let d = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_features(), 2);
        assert_eq!(d.features()[[1, 0]], 3.5);
        match d.provenance() {
            Provenance::File { sha256, .. } => assert_eq!(sha256.len(), 64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nan_cell_names_the_row() {
        let f = write("a,b,y\n1.0,2.0,0\n3.5,NaN,1\n");
        match load_csv(f.path(), &schema()) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, Some(2));
                assert_eq!(column.as_deref(), Some("b"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_label_column() {
        let f = write("a,b,c\n1,2,3\n");
        let err = load_csv(f.path(), &schema()).unwrap_err();
        assert!(matches!(err, Error::Data { row: None, column: Some(ref c), .. } if c == "y"));
    }

    #[test]
    fn non_numeric_and_empty() {
        let f = write("a,y\nhello,1\n");
        let err = load_csv(f.path(), &schema()).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("`a`"), "{err}");

        let f = write("");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Data { .. })));
        let f = write("a,y\n");
        assert!(matches!(load_csv(f.path(), &schema()), Err(Error::Data { .. })));
    }

    #[test]
    fn export_round_trips() {
        let d = synth_dataset(SynthKind::Moons, 20, 1).unwrap();
        let text = d.to_csv().unwrap();
        let f = write(&text);
        let schema = CsvSchema {
            label_column: "label".into(),
            features: None,
            task: Task::Classification,
        };
        let back = load_csv(f.path(), &schema).unwrap();
        assert_eq!(back.features(), d.features());
        assert_eq!(back.targets(), d.targets());
        assert_eq!(back.to_csv().unwrap(), text);
    }

    #[test]
    fn regression_targets() {
        let f = write("x,t\n1,0.5\n2,-0.25\n");
        let d = load_csv(
            f.path(),
            &CsvSchema {
                label_column: "t".into(),
                features: Some(vec!["x".into()]),
                task: Task::Regression,
            },
        )
        .unwrap();
        assert_eq!(d.targets(), &Targets::Values(ndarray::array![[0.5], [-0.25]]));
    }
}
