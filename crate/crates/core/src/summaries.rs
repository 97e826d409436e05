//! Grouped summaries of higher-order derivatives.
//!
//! For a direction `u` and a partition into S groups, the order-`d` summary
//! tensor has entry `(s_1, ..., s_d)` equal to the `d`-th derivative of the
//! loss applied to `u` masked to groups `s_1, ..., s_d`. Its entries sum to
//! the scalar Taylor term `d^d L [u, ..., u]`. At order two with `u = g`
//! it is the pseudo-Hessian `I_{S:P} G H G I_{P:S}`, and at order one the
//! pseudo-gradient (per-group squared gradient norms).
//!
//! Cost: a Taylor term is one gradient of a `(d-1)`-fold directional
//! derivative. A summary tensor takes one such gradient per non-decreasing
//! index prefix `(s_1 <= ... <= s_{d-1})`, at most `S^(d-1)` of them; the
//! remaining entries are filled from symmetry.

use std::collections::HashMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{passes, Expr, ParamVector, PassCount};
use crate::error::{Error, Result};
use crate::partition::Partition;
use crate::scalar::{dot, Scalar};

/// Short content hash of a vector, for provenance.
pub fn fingerprint<T: Scalar>(v: &[T]) -> String {
    let mut h = Sha256::new();
    for x in v {
        h.update(x.to_f64_lossy().to_le_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Runs `f` over `items`, in parallel when `parallel`, merging pass counts
/// into the caller's thread. Output order follows `items`.
pub(crate) fn par_map<I, R, F>(items: &[I], parallel: bool, f: F) -> Result<Vec<R>>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> Result<R> + Sync + Send,
{
    let run = |it: &I| passes::isolated(|| f(it));
    let out: Vec<(Result<R>, PassCount)> = if parallel && items.len() > 1 {
        items.par_iter().map(run).collect()
    } else {
        items.iter().map(run).collect()
    };
    let mut results = Vec::with_capacity(out.len());
    let mut total = PassCount::default();
    for (r, c) in out {
        total += c;
        results.push(r);
    }
    passes::record(total);
    results.into_iter().collect()
}

fn check_point<T: Scalar>(theta: &ParamVector<T>, part: &Partition) -> Result<()> {
    if part.num_params() != theta.len() {
        return Err(Error::Length {
            what: "partition size",
            expected: theta.len(),
            got: part.num_params(),
        });
    }
    Ok(())
}

/// `d^d L(theta) [u, ..., u]` for `d >= 1`.
pub fn taylor_term<T: Scalar>(f: &Expr<T>, theta: &ParamVector<T>, u: &[T], d: usize) -> Result<T> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "taylor_term needs order >= 1; use evaluate for order 0".into(),
        ));
    }
    let dirs = vec![u; d - 1];
    let inner = f.nested_directional(&dirs)?;
    if u.len() != theta.len() {
        return Err(Error::Length {
            what: "direction",
            expected: theta.len(),
            got: u.len(),
        });
    }
    let g = inner.gradient(theta)?;
    Ok(dot(&g, u))
}

/// Order-`d` tensor of size `S` in every dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTensor<T> {
    order: usize,
    size: usize,
    entries: Vec<T>,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct SummaryJson<T> {
    order: usize,
    size: usize,
    entries: Vec<T>,
}

impl<T: Scalar> SummaryTensor<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Fingerprint of the direction the tensor was built from.
    pub fn direction_fingerprint(&self) -> &str {
        &self.fingerprint
    }

    fn flat(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.order, "index arity");
        idx.iter().fold(0, |acc, &i| {
            assert!(i < self.size, "index {i} out of range");
            acc * self.size + i
        })
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.entries[self.flat(idx)]
    }

    /// Sum of all entries; equals the Taylor term.
    pub fn total(&self) -> T {
        self.entries.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn max_abs(&self) -> T {
        self.entries.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    /// Order-2 tensors as an `S x S` matrix.
    pub fn to_matrix(&self) -> Option<Array2<T>> {
        (self.order == 2).then(|| {
            Array2::from_shape_vec((self.size, self.size), self.entries.clone()).expect("shape")
        })
    }

    /// Largest absolute difference between an entry and any of its index
    /// permutations.
    pub fn symmetry_defect(&self) -> T {
        let mut worst = T::zero();
        for flat in 0..self.entries.len() {
            let idx = unflatten(flat, self.order, self.size);
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            let v = self.entries[self.flat(&sorted)];
            worst = worst.max((self.entries[flat] - v).abs());
        }
        worst
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&SummaryJson {
            order: self.order,
            size: self.size,
            entries: self.entries.clone(),
        })
        .expect("summary tensor serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: SummaryJson<T> = serde_json::from_str(text)?;
        let expected = j.size.checked_pow(j.order as u32).unwrap_or(usize::MAX);
        if j.entries.len() != expected {
            return Err(Error::Length {
                what: "summary tensor entries",
                expected,
                got: j.entries.len(),
            });
        }
        Ok(SummaryTensor {
            order: j.order,
            size: j.size,
            entries: j.entries,
            fingerprint: String::new(),
        })
    }
}

fn unflatten(mut flat: usize, order: usize, size: usize) -> Vec<usize> {
    let mut idx = vec![0; order];
    for k in (0..order).rev() {
        idx[k] = flat % size;
        flat /= size;
    }
    idx
}

/// Non-decreasing sequences of length `len` over `0..size`.
fn multisets(len: usize, size: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        let mut next = Vec::new();
        for prefix in &out {
            let start = prefix.last().copied().unwrap_or(0);
            for s in start..size {
                let mut p = prefix.clone();
                p.push(s);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummaryOptions {
    /// Maximum number of entries `S^d`.
    pub budget: usize,
    /// Compute only sorted index prefixes and fill the rest by permutation.
    /// When false, every entry is computed independently.
    pub exploit_symmetry: bool,
    pub parallel: bool,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            budget: 1_000_000,
            exploit_symmetry: true,
            parallel: true,
        }
    }
}

/// Summary tensor with default options.
pub fn summary_tensor<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    u: &[T],
    part: &Partition,
    d: usize,
) -> Result<SummaryTensor<T>> {
    summary_tensor_with(f, theta, u, part, d, &SummaryOptions::default())
}

pub fn summary_tensor_with<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    u: &[T],
    part: &Partition,
    d: usize,
    opts: &SummaryOptions,
) -> Result<SummaryTensor<T>> {
    if d == 0 {
        return Err(Error::InvalidArgument("summary tensor order must be >= 1".into()));
    }
    check_point(theta, part)?;
    if u.len() != theta.len() {
        return Err(Error::Length {
            what: "direction",
            expected: theta.len(),
            got: u.len(),
        });
    }
    let s = part.len();
    let n_entries = s
        .checked_pow(d as u32)
        .filter(|&n| n <= opts.budget)
        .ok_or_else(|| {
            Error::Budget(format!(
                "an order-{d} summary over {s} groups exceeds {} entries; use a coarser partition",
                opts.budget
            ))
        })?;

    let masks: Vec<Vec<T>> = (0..s).map(|k| part.mask(u, k)).collect::<Result<_>>()?;
    let prefixes: Vec<Vec<usize>> = if opts.exploit_symmetry {
        multisets(d - 1, s)
    } else {
        (0..s.pow(d as u32 - 1))
            .map(|flat| unflatten(flat, d - 1, s))
            .collect()
    };

    let rows = par_map(&prefixes, opts.parallel, |prefix| {
        let dirs: Vec<&[T]> = prefix.iter().map(|&k| masks[k].as_slice()).collect();
        let grad = f.nested_directional(&dirs)?.gradient(theta)?;
        Ok(part
            .groups()
            .iter()
            .map(|grp| grp.iter().fold(T::zero(), |acc, &p| acc + grad[p] * u[p]))
            .collect::<Vec<T>>())
    })?;

    let mut entries = vec![T::zero(); n_entries];
    if opts.exploit_symmetry {
        let row_of: HashMap<&[usize], usize> = prefixes
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_slice(), i))
            .collect();
        for (flat, e) in entries.iter_mut().enumerate() {
            let mut idx = unflatten(flat, d, s);
            idx.sort_unstable();
            let last = idx[d - 1];
            *e = rows[row_of[&idx[..d - 1]]][last];
        }
    } else {
        for (r, row) in rows.iter().enumerate() {
            entries[r * s..(r + 1) * s].copy_from_slice(row);
        }
    }
    Ok(SummaryTensor {
        order: d,
        size: s,
        entries,
        fingerprint: fingerprint(u),
    })
}

/// Per-group squared gradient norms `I_{S:P} G g`.
pub fn pseudo_gradient<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
) -> Result<Vec<T>> {
    check_point(theta, part)?;
    let g = f.gradient(theta)?;
    let sq: Vec<T> = g.iter().map(|&x| x * x).collect();
    part.group_sum(&sq)
}

/// Pseudo-Hessian, pseudo-gradient and the data they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSystem<T> {
    pub hbar: Array2<T>,
    pub gbar: Vec<T>,
    pub labels: Vec<String>,
    /// Gradient at the point (empty when parsed from JSON).
    pub gradient: Vec<T>,
    /// Loss at the point (NaN when parsed from JSON).
    pub loss: T,
    pub point_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct PseudoSystemJson<T> {
    hbar: Vec<Vec<T>>,
    gbar: Vec<T>,
    labels: Vec<String>,
}

impl<T: Scalar> PseudoSystem<T> {
    pub fn size(&self) -> usize {
        self.gbar.len()
    }

    /// `1^T hbar 1 = g^T H g`.
    pub fn total_curvature(&self) -> T {
        self.hbar.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// `1^T gbar = g^T g`.
    pub fn total_gradient(&self) -> T {
        self.gbar.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PseudoSystemJson {
            hbar: self.hbar.rows().into_iter().map(|r| r.to_vec()).collect(),
            gbar: self.gbar.clone(),
            labels: self.labels.clone(),
        })
        .expect("pseudo system serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: PseudoSystemJson<T> = serde_json::from_str(text)?;
        let s = j.gbar.len();
        if j.hbar.len() != s || j.hbar.iter().any(|r| r.len() != s) {
            return Err(Error::Length {
                what: "pseudo-Hessian rows",
                expected: s,
                got: j.hbar.len(),
            });
        }
        let flat: Vec<T> = j.hbar.into_iter().flatten().collect();
        Ok(PseudoSystem {
            hbar: Array2::from_shape_vec((s, s), flat).expect("shape"),
            gbar: j.gbar,
            labels: j.labels,
            gradient: Vec::new(),
            loss: T::nan(),
            point_fingerprint: String::new(),
        })
    }
}

/// Builds `hbar = I_{S:P} G H G I_{P:S}` and `gbar = I_{S:P} G g` from one
/// gradient and S Hessian-vector products along the masked gradients,
/// without forming H.
pub fn pseudo_hessian<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
) -> Result<PseudoSystem<T>> {
    pseudo_hessian_with(f, theta, part, true)
}

pub fn pseudo_hessian_with<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
    parallel: bool,
) -> Result<PseudoSystem<T>> {
    check_point(theta, part)?;
    let (loss, g) = f.value_and_gradient(theta)?;
    pseudo_hessian_from(f, theta, part, loss, g, parallel)
}

/// Same as [`pseudo_hessian_with`] with the loss and gradient already known;
/// costs S passes.
pub(crate) fn pseudo_hessian_from<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
    loss: T,
    g: Vec<T>,
    parallel: bool,
) -> Result<PseudoSystem<T>> {
    check_point(theta, part)?;
    let s = part.len();
    let masks: Vec<Vec<T>> = (0..s).map(|k| part.mask(&g, k)).collect::<Result<_>>()?;
    let hv = par_map(&masks, parallel, |m| f.hvp(theta, m))?;

    let mut raw = Array2::zeros((s, s));
    for a in 0..s {
        for b in 0..s {
            raw[[a, b]] = part
                .group(a)
                .iter()
                .fold(T::zero(), |acc, &p| acc + g[p] * hv[b][p]);
        }
    }
    let half = T::lit(0.5);
    let hbar = Array2::from_shape_fn((s, s), |(a, b)| half * (raw[[a, b]] + raw[[b, a]]));
    let sq: Vec<T> = g.iter().map(|&x| x * x).collect();
    let gbar = part.group_sum(&sq)?;
    Ok(PseudoSystem {
        hbar,
        gbar,
        labels: part.labels().to_vec(),
        gradient: g,
        loss,
        point_fingerprint: fingerprint(theta.values()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum RegularizationMode {
    /// Enumerate every index triple inside each group; groups larger than
    /// `max_group` are rejected.
    Exact { max_group: usize },
    /// Max over `samples` random triples per group: a lower bound.
    Sampled { samples: usize, seed: u64 },
}

impl Default for RegularizationMode {
    fn default() -> Self {
        RegularizationMode::Exact { max_group: 64 }
    }
}

impl RegularizationMode {
    pub fn sampled_default(seed: u64) -> Self {
        RegularizationMode::Sampled { samples: 256, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationVector<T> {
    /// `r_s = (max |d^3 L / dT_s^3|)^(2/3)`.
    pub values: Vec<T>,
    pub mode: RegularizationMode,
    /// True in sampled mode: `values` under-estimate the exact vector.
    pub lower_bound: bool,
}

fn basis<T: Scalar>(p: usize, i: usize) -> Vec<T> {
    let mut e = vec![T::zero(); p];
    e[i] = T::one();
    e
}

/// Third-order regularization vector over the diagonal blocks of the
/// third-derivative tensor, one entry per group.
pub fn regularization_vector<T: Scalar>(
    f: &Expr<T>,
    theta: &ParamVector<T>,
    part: &Partition,
    mode: RegularizationMode,
) -> Result<RegularizationVector<T>> {
    check_point(theta, part)?;
    let p = theta.len();
    let two_thirds = T::lit(2.0 / 3.0);
    let mut values = Vec::with_capacity(part.len());
    match mode {
        RegularizationMode::Exact { max_group } => {
            for (s, grp) in part.groups().iter().enumerate() {
                if grp.len() > max_group {
                    return Err(Error::Budget(format!(
                        "group `{}` has {} parameters, above the exact-mode limit {max_group}; \
                         use sampled mode",
                        part.labels()[s],
                        grp.len()
                    )));
                }
                let pairs: Vec<(usize, usize)> = grp
                    .iter()
                    .enumerate()
                    .flat_map(|(a, &i)| grp[a..].iter().map(move |&j| (i, j)))
                    .collect();
                let maxima = par_map(&pairs, true, |&(i, j)| {
                    let (ei, ej) = (basis::<T>(p, i), basis::<T>(p, j));
                    let g = f.nested_directional(&[&ei, &ej])?.gradient(theta)?;
                    Ok(grp.iter().fold(T::zero(), |m, &k| m.max(g[k].abs())))
                })?;
                let m = maxima.into_iter().fold(T::zero(), T::max);
                values.push(m.powf(two_thirds));
            }
        }
        RegularizationMode::Sampled { samples, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for grp in part.groups() {
                let triples: Vec<[usize; 3]> = (0..samples)
                    .map(|_| {
                        let mut pick = || grp[rng.random_range(0..grp.len())];
                        [pick(), pick(), pick()]
                    })
                    .collect();
                let vals = par_map(&triples, true, |t| {
                    let (a, b, c) = (basis::<T>(p, t[0]), basis::<T>(p, t[1]), basis::<T>(p, t[2]));
                    Ok(f.nested_directional(&[&a, &b, &c])?.evaluate(theta)?.abs())
                })?;
                let m = vals.into_iter().fold(T::zero(), T::max);
                values.push(m.powf(two_thirds));
            }
        }
    }
    Ok(RegularizationVector {
        values,
        mode,
        lower_bound: matches!(mode, RegularizationMode::Sampled { .. }),
    })
}

#[cfg(test)]
mod tests;
