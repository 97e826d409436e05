//! Partitions of parameter indices into groups, and the linear maps induced
//! by the 0/1 partition matrix (`group_sum`) and its transpose (`broadcast`).
//!
//! Indices and group numbers are 0-based in the Rust API and 1-based in the
//! JSON form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Layout;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionKind {
    /// One group holding every index.
    Trivial,
    /// One singleton group per index.
    Discrete,
    /// One group per tensor of the parameter layout.
    Canonical,
    Custom,
}

impl fmt::Display for PartitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionKind::Trivial => "trivial",
            PartitionKind::Discrete => "discrete",
            PartitionKind::Canonical => "canonical",
            PartitionKind::Custom => "custom",
        })
    }
}

impl FromStr for PartitionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trivial" => Ok(PartitionKind::Trivial),
            "discrete" => Ok(PartitionKind::Discrete),
            "canonical" => Ok(PartitionKind::Canonical),
            "custom" => Ok(PartitionKind::Custom),
            other => Err(Error::Partition(format!(
                "unknown partition kind `{other}` (expected trivial, discrete, canonical or custom)"
            ))),
        }
    }
}

/// Disjoint, non-empty groups covering `0..P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    num_params: usize,
    groups: Vec<Vec<usize>>,
    labels: Vec<String>,
    kind: PartitionKind,
    group_of: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PartitionJson {
    kind: String,
    groups: Vec<Vec<usize>>,
    #[serde(default)]
    labels: Vec<String>,
}

impl Partition {
    /// Validates and builds a partition of `0..num_params`. Empty `labels`
    /// yields `g1, g2, ...`.
    pub fn from_groups(
        num_params: usize,
        groups: Vec<Vec<usize>>,
        labels: Vec<String>,
        kind: PartitionKind,
    ) -> Result<Self> {
        if num_params == 0 {
            return Err(Error::Partition("cannot partition zero parameters".into()));
        }
        if groups.is_empty() {
            return Err(Error::Partition("no groups given".into()));
        }
        let labels = if labels.is_empty() {
            (1..=groups.len()).map(|s| format!("g{s}")).collect()
        } else if labels.len() == groups.len() {
            labels
        } else {
            return Err(Error::Partition(format!(
                "{} labels for {} groups",
                labels.len(),
                groups.len()
            )));
        };
        const UNSET: usize = usize::MAX;
        let mut group_of = vec![UNSET; num_params];
        for (s, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Partition(format!("group {} is empty", s + 1)));
            }
            for &p in g {
                if p >= num_params {
                    return Err(Error::Partition(format!(
                        "index {} in group {} exceeds P = {num_params}",
                        p + 1,
                        s + 1
                    )));
                }
                if group_of[p] != UNSET {
                    return Err(Error::Partition(format!(
                        "index {} appears in groups {} and {}",
                        p + 1,
                        group_of[p] + 1,
                        s + 1
                    )));
                }
                group_of[p] = s;
            }
        }
        if let Some(p) = group_of.iter().position(|&s| s == UNSET) {
            return Err(Error::Partition(format!(
                "index {} is not covered by any group",
                p + 1
            )));
        }
        Ok(Partition {
            num_params,
            groups,
            labels,
            kind,
            group_of,
        })
    }

    pub fn trivial(num_params: usize) -> Result<Self> {
        if num_params == 0 {
            return Err(Error::Partition("cannot partition zero parameters".into()));
        }
        Partition::from_groups(
            num_params,
            vec![(0..num_params).collect()],
            vec!["all".into()],
            PartitionKind::Trivial,
        )
    }

    pub fn discrete(num_params: usize) -> Result<Self> {
        if num_params == 0 {
            return Err(Error::Partition("cannot partition zero parameters".into()));
        }
        Partition::from_groups(
            num_params,
            (0..num_params).map(|p| vec![p]).collect(),
            (1..=num_params).map(|p| format!("p{p}")).collect(),
            PartitionKind::Discrete,
        )
    }

    /// One group per tensor, labeled with the layout's tensor labels.
    pub fn canonical(layout: &Layout) -> Result<Self> {
        let groups = (0..layout.num_tensors())
            .map(|k| layout.range(k).collect())
            .collect();
        Partition::from_groups(
            layout.len(),
            groups,
            layout.labels().to_vec(),
            PartitionKind::Canonical,
        )
    }

    /// Groups consecutive tensors into blocks of the given tensor counts,
    /// e.g. to merge tensors of the same kind in a large model.
    pub fn merge_tensors(layout: &Layout, blocks: &[Vec<usize>]) -> Result<Self> {
        let mut groups = Vec::with_capacity(blocks.len());
        let mut labels = Vec::with_capacity(blocks.len());
        for b in blocks {
            let mut g = Vec::new();
            let mut names = Vec::new();
            for &k in b {
                if k >= layout.num_tensors() {
                    return Err(Error::Partition(format!("tensor index {} out of range", k + 1)));
                }
                g.extend(layout.range(k));
                names.push(layout.labels()[k].clone());
            }
            groups.push(g);
            labels.push(names.join("+"));
        }
        Partition::from_groups(layout.len(), groups, labels, PartitionKind::Custom)
    }

    /// Number of groups S.
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Number of parameters P.
    pub fn num_params(&self) -> usize {
        self.num_params
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group(&self, s: usize) -> &[usize] {
        &self.groups[s]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    /// Group containing parameter `p`.
    pub fn group_of(&self, p: usize) -> usize {
        self.group_of[p]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    fn check_p(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.num_params {
            return Err(Error::Length {
                what,
                expected: self.num_params,
                got,
            });
        }
        Ok(())
    }

    /// `out_s = sum_{p in I_s} v_p`.
    pub fn group_sum<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        self.check_p("group_sum input", v.len())?;
        Ok(self
            .groups
            .iter()
            .map(|g| g.iter().fold(T::zero(), |acc, &p| acc + v[p]))
            .collect())
    }

    /// `out_p = eta_s` for `p in I_s`.
    pub fn broadcast<T: Scalar>(&self, eta: &[T]) -> Result<Vec<T>> {
        if eta.len() != self.len() {
            return Err(Error::Length {
                what: "broadcast input",
                expected: self.len(),
                got: eta.len(),
            });
        }
        Ok(self.group_of.iter().map(|&s| eta[s]).collect())
    }

    /// Copy of `v` zeroed outside group `s`.
    pub fn mask<T: Scalar>(&self, v: &[T], s: usize) -> Result<Vec<T>> {
        self.check_p("mask input", v.len())?;
        if s >= self.len() {
            return Err(Error::Partition(format!(
                "group {} out of range (S = {})",
                s + 1,
                self.len()
            )));
        }
        let mut out = vec![T::zero(); v.len()];
        for &p in &self.groups[s] {
            out[p] = v[p];
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let j = PartitionJson {
            kind: self.kind.to_string(),
            groups: self
                .groups
                .iter()
                .map(|g| g.iter().map(|p| p + 1).collect())
                .collect(),
            labels: self.labels.clone(),
        };
        serde_json::to_string_pretty(&j).expect("partition serializes")
    }

    /// Parses the JSON form (1-based indices) for a model with `num_params`
    /// parameters.
    pub fn from_json(text: &str, num_params: usize) -> Result<Self> {
        let j: PartitionJson = serde_json::from_str(text)?;
        let kind: PartitionKind = j.kind.parse()?;
        let mut groups = Vec::with_capacity(j.groups.len());
        for (s, g) in j.groups.into_iter().enumerate() {
            let mut out = Vec::with_capacity(g.len());
            for p in g {
                if p == 0 {
                    return Err(Error::Partition(format!(
                        "group {} uses index 0; indices are 1-based",
                        s + 1
                    )));
                }
                out.push(p - 1);
            }
            groups.push(out);
        }
        Partition::from_groups(num_params, groups, j.labels, kind)
    }
}

pub fn trivial_partition(num_params: usize) -> Result<Partition> {
    Partition::trivial(num_params)
}

pub fn discrete_partition(num_params: usize) -> Result<Partition> {
    Partition::discrete(num_params)
}

pub fn canonical_partition(layout: &Layout) -> Result<Partition> {
    Partition::canonical(layout)
}
