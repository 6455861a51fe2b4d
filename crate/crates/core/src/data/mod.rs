//! Grouped datasets, the synthetic content/style generator, stratified
//! splitting and the CSV/JSON on-disk formats.

mod csv;
mod generate;
mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use self::csv::{load, save, Sidecar};
pub(crate) use self::csv::fmt_real;
pub use generate::{generate, leaky_tanh, GenerativeSpec, LabelRule, Mixing};
pub use split::{split, Fractions, Splits};

/// Binary class set used throughout.
pub const CLASSES: [u8; 2] = [0, 1];

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: u8,
    pub group: usize,
    pub gt_content: Option<Vec<f64>>,
    pub gt_style: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

/// Samples with labels and observed group attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedDataset {
    samples: Vec<Sample>,
    num_groups: usize,
    split: SplitTag,
}

impl GroupedDataset {
    /// Validates that `x` dimensions agree, labels are binary, group ids are
    /// in range and every group occurs.
    pub fn new(samples: Vec<Sample>, num_groups: usize, split: SplitTag) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("dataset has no samples"));
        }
        let dim = samples[0].x.len();
        let has_gt = samples[0].gt_content.is_some();
        let mut seen = vec![false; num_groups];
        for (i, s) in samples.iter().enumerate() {
            if s.x.len() != dim {
                return Err(Error::contract(format!("sample {i} has {} inputs, expected {dim}", s.x.len())));
            }
            if s.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::contract(format!("sample {i} has a non-finite input")));
            }
            if s.y > 1 {
                return Err(Error::contract(format!("sample {i} has non-binary label {}", s.y)));
            }
            if s.group >= num_groups {
                return Err(Error::contract(format!(
                    "sample {i} has group {} outside [0, {num_groups})",
                    s.group
                )));
            }
            if s.gt_content.is_some() != has_gt || s.gt_style.is_some() != has_gt {
                return Err(Error::contract(format!("sample {i}: ground truth present on some samples only")));
            }
            seen[s.group] = true;
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(Error::contract(format!("group {k} has no samples")));
        }
        Ok(GroupedDataset {
            samples,
            num_groups,
            split,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn split_tag(&self) -> SplitTag {
        self.split
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn has_ground_truth(&self) -> bool {
        self.samples[0].gt_content.is_some()
    }

    pub fn content_dim(&self) -> usize {
        self.samples[0].gt_content.as_ref().map_or(0, Vec::len)
    }

    pub fn style_dim(&self) -> usize {
        self.samples[0].gt_style.as_ref().map_or(0, Vec::len)
    }

    /// Observations for the given rows as a `len × D` matrix.
    pub fn x_matrix(&self, idx: &[usize]) -> Matrix {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            data.extend_from_slice(&self.samples[i].x);
        }
        Matrix::from_vec(idx.len(), d, data).expect("consistent dims")
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }

    pub fn labels(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.samples[i].y).collect()
    }

    pub fn groups(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.samples[i].group).collect()
    }

    /// Ground-truth content rows, if the dataset is synthetic.
    pub fn content_matrix(&self, idx: &[usize]) -> Option<Matrix> {
        gt_matrix(idx.iter().map(|&i| self.samples[i].gt_content.as_deref()))
    }

    pub fn style_matrix(&self, idx: &[usize]) -> Option<Matrix> {
        gt_matrix(idx.iter().map(|&i| self.samples[i].gt_style.as_deref()))
    }

    /// New dataset made of the given rows.
    pub fn subset(&self, idx: &[usize], split: SplitTag) -> Result<Self> {
        let samples = idx.iter().map(|&i| self.samples[i].clone()).collect();
        GroupedDataset::new(samples, self.num_groups, split)
    }

    /// Keep only samples whose group is in `keep`, renumbering those groups
    /// to `0..keep.len()` in the given order.
    pub fn restrict_groups(&self, keep: &[usize], split: SplitTag) -> Result<Self> {
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter_map(|s| {
                keep.iter().position(|&k| k == s.group).map(|new| Sample {
                    group: new,
                    ..s.clone()
                })
            })
            .collect();
        GroupedDataset::new(samples, keep.len(), split)
    }

    pub fn with_split(mut self, split: SplitTag) -> Self {
        self.split = split;
        self
    }
}

fn gt_matrix<'a>(rows: impl Iterator<Item = Option<&'a [f64]>>) -> Option<Matrix> {
    let mut data = Vec::new();
    let mut n = 0;
    let mut cols = 0;
    for r in rows {
        let r = r?;
        cols = r.len();
        data.extend_from_slice(r);
        n += 1;
    }
    if cols == 0 {
        return None;
    }
    Matrix::from_vec(n, cols, data).ok()
}
