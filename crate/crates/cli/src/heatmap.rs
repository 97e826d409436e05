//! Heatmap data for the pseudo-Hessian and its inverse, with
//! weight-weight, bias-bias and weight-bias block views.
//!
//! Nothing is rendered. Each export carries raw values and a symmetric color
//! scale `max |value|` for a diverging palette.

use groupnewton::linalg::{symmetric_pseudo_inverse, SymmetricFactor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Relative eigenvalue cutoff deciding rank deficiency.
const RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKind {
    Weight,
    Bias,
}

impl GroupKind {
    /// Groups whose label ends in `bias` are biases; everything else counts
    /// as a weight group.
    pub fn of(label: &str) -> Self {
        if label.ends_with("bias") {
            GroupKind::Bias
        } else {
            GroupKind::Weight
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockView {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl BlockView {
    fn extract(m: &Array2<f64>, labels: &[String], rows: &[usize], cols: &[usize]) -> Self {
        BlockView {
            rows: rows.iter().map(|&i| labels[i].clone()).collect(),
            cols: cols.iter().map(|&j| labels[j].clone()).collect(),
            values: rows
                .iter()
                .map(|&i| cols.iter().map(|&j| m[[i, j]]).collect())
                .collect(),
        }
    }

    /// Header row of column labels behind an empty corner cell, then one
    /// labeled row per block row.
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| CliError::runtime(e);
        let mut header = vec![String::new()];
        header.extend(self.cols.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (label, row) in self.rows.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::runtime(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blocks {
    pub ww: BlockView,
    pub bb: BlockView,
    pub wb: BlockView,
}

impl Blocks {
    pub fn new(m: &Array2<f64>, labels: &[String]) -> Self {
        let (w, b): (Vec<usize>, Vec<usize>) =
            (0..labels.len()).partition(|&i| GroupKind::of(&labels[i]) == GroupKind::Weight);
        Blocks {
            ww: BlockView::extract(m, labels, &w, &w),
            bb: BlockView::extract(m, labels, &b, &b),
            wb: BlockView::extract(m, labels, &w, &b),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &BlockView)> {
        [("ww", &self.ww), ("bb", &self.bb), ("wb", &self.wb)].into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapExport {
    /// `hbar` or `hbar_inv`.
    pub matrix: String,
    /// `init` or `checkpoint`.
    pub at: String,
    /// Optimizer steps taken before the point was reached.
    pub step: usize,
    pub labels: Vec<String>,
    pub kinds: Vec<GroupKind>,
    /// Absent when the matrix could not be produced.
    pub values: Option<Vec<Vec<f64>>>,
    pub color_scale: f64,
    /// `max |M - M'|`.
    pub symmetry_defect: f64,
    /// Set when `values` is a Moore-Penrose pseudo-inverse.
    pub pseudo_inverse: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Blocks>,
}

pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

impl HeatmapExport {
    pub fn from_matrix(matrix: &str, at: &str, step: usize, labels: &[String], m: &Array2<f64>) -> Self {
        HeatmapExport {
            matrix: matrix.into(),
            at: at.into(),
            step,
            labels: labels.to_vec(),
            kinds: labels.iter().map(|l| GroupKind::of(l)).collect(),
            values: Some(m.rows().into_iter().map(|r| r.to_vec()).collect()),
            color_scale: max_abs(m),
            symmetry_defect: asymmetry(m),
            pseudo_inverse: false,
            rank: None,
            warning: None,
            blocks: Some(Blocks::new(m, labels)),
        }
    }

    /// An export that only records why no matrix is present.
    pub fn missing(matrix: &str, at: &str, step: usize, labels: &[String], warning: String) -> Self {
        HeatmapExport {
            matrix: matrix.into(),
            at: at.into(),
            step,
            labels: labels.to_vec(),
            kinds: labels.iter().map(|l| GroupKind::of(l)).collect(),
            values: None,
            color_scale: 0.0,
            symmetry_defect: 0.0,
            pseudo_inverse: false,
            rank: None,
            warning: Some(warning),
            blocks: None,
        }
    }

    pub fn matrix_values(&self) -> Option<Array2<f64>> {
        let v = self.values.as_ref()?;
        let n = v.len();
        Array2::from_shape_vec((n, n), v.iter().flatten().copied().collect()).ok()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("export serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let e: HeatmapExport =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("heatmap json: {e}")))?;
        if let Some(v) = &e.values {
            let n = e.labels.len();
            if v.len() != n || v.iter().any(|r| r.len() != n) {
                return Err(CliError::Config(format!("heatmap matrix is not {n}x{n}")));
            }
        }
        Ok(e)
    }
}

#[derive(Debug, Clone)]
pub enum Inversion {
    Exact(Array2<f64>),
    Pseudo { inverse: Array2<f64>, rank: usize },
    Failed(String),
}

/// Exact inverse when the matrix has full numerical rank, the pseudo-inverse
/// otherwise, and a failure when entries are not finite.
pub fn invert(m: &Array2<f64>) -> Inversion {
    if m.iter().any(|v| !v.is_finite()) {
        return Inversion::Failed("matrix has non-finite entries; inverse not exported".into());
    }
    let n = m.nrows();
    let (pinv, rank) = symmetric_pseudo_inverse(m, RCOND);
    if rank < n {
        return Inversion::Pseudo { inverse: pinv, rank };
    }
    match SymmetricFactor::new(m).and_then(|f| f.inverse()) {
        Ok(inv) if inv.iter().all(|v| v.is_finite()) => {
            // Symmetrize the round-off.
            let sym = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (inv[[i, j]] + inv[[j, i]]));
            Inversion::Exact(sym)
        }
        _ => Inversion::Pseudo { inverse: pinv, rank },
    }
}

pub fn inverse_export(at: &str, step: usize, labels: &[String], m: &Array2<f64>) -> HeatmapExport {
    match invert(m) {
        Inversion::Exact(inv) => {
            let mut e = HeatmapExport::from_matrix("hbar_inv", at, step, labels, &inv);
            e.rank = Some(labels.len());
            e
        }
        Inversion::Pseudo { inverse, rank } => {
            let mut e = HeatmapExport::from_matrix("hbar_inv", at, step, labels, &inverse);
            e.pseudo_inverse = true;
            e.rank = Some(rank);
            e.warning = Some(format!(
                "matrix has rank {rank} of {}; exported the pseudo-inverse",
                labels.len()
            ));
            e
        }
        Inversion::Failed(w) => HeatmapExport::missing("hbar_inv", at, step, labels, w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn labels(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn blocks_split_by_label() {
        let l = labels(&["layer1/weight", "layer1/bias", "layer2/weight", "layer2/bias"]);
        let m = Array2::from_shape_fn((4, 4), |(i, j)| (10 * i + j) as f64);
        let b = Blocks::new(&m, &l);
        assert_eq!(b.ww.values, vec![vec![0.0, 2.0], vec![20.0, 22.0]]);
        assert_eq!(b.bb.values, vec![vec![11.0, 13.0], vec![31.0, 33.0]]);
        assert_eq!(b.wb.values, vec![vec![1.0, 3.0], vec![21.0, 23.0]]);
        assert_eq!(b.wb.rows, labels(&["layer1/weight", "layer2/weight"]));
        assert_eq!(b.wb.cols, labels(&["layer1/bias", "layer2/bias"]));
    }

    #[test]
    fn unlabeled_groups_are_weights() {
        let b = Blocks::new(&array![[2.0]], &labels(&["theta"]));
        assert_eq!(b.ww.values, vec![vec![2.0]]);
        assert!(b.bb.values.is_empty());
        assert_eq!(b.bb.to_csv().unwrap(), "\"\"\n");
    }

    #[test]
    fn csv_layout() {
        let b = Blocks::new(&array![[1.0, 0.5], [0.5, 2.0]], &labels(&["w", "bias"]));
        assert_eq!(b.wb.to_csv().unwrap(), ",bias\nw,0.5\n");
    }

    #[test]
    fn json_round_trip_is_idempotent() {
        let m = array![[4.0, 0.0009458149035725321], [0.0009458149035725321, 1e-17]];
        let e = HeatmapExport::from_matrix("hbar", "init", 0, &labels(&["a/weight", "a/bias"]), &m);
        let text = e.to_json();
        let back = HeatmapExport::from_json(&text).unwrap();
        assert_eq!(back, e);
        assert_eq!(back.to_json(), text);
        assert_eq!(back.color_scale, 4.0);
        assert_eq!(back.matrix_values().unwrap(), m);
    }

    #[test]
    fn inverse_policies() {
        match invert(&array![[2.0, 0.0], [0.0, 4.0]]) {
            Inversion::Exact(inv) => assert_eq!(inv, array![[0.5, 0.0], [0.0, 0.25]]),
            other => panic!("{other:?}"),
        }
        match invert(&array![[2.0, 0.0], [0.0, 0.0]]) {
            Inversion::Pseudo { inverse, rank } => {
                assert_eq!(rank, 1);
                assert!((inverse[[0, 0]] - 0.5).abs() < 1e-15);
                assert_eq!(inverse[[1, 1]], 0.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(invert(&array![[f64::NAN]]), Inversion::Failed(_)));
        let e = inverse_export("init", 0, &labels(&["x"]), &array![[f64::INFINITY]]);
        assert!(e.values.is_none() && e.warning.is_some());
    }
}
