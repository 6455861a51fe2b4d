//! Synthetic content/style process.
//!
//! Content `c ~ N(0, I)` is shared by all groups and alone determines the
//! label through a hyperplane. Style `s ~ N(μ_k, diag σ_k²)` depends on the
//! group. The observation is `x = g([c; s])`, where `g` stacks square
//! well-conditioned linear maps, each followed by a leaky tanh.

use serde::{Deserialize, Serialize};

use crate::data::{GroupedDataset, Sample, SplitTag};
use crate::error::{Error, Result};
use crate::numerics::linalg::condition_number;
use crate::numerics::{Matrix, Rng, Stream};

/// Mixing blocks are redrawn until their condition number is below this.
pub const MAX_CONDITION: f64 = 25.0;
/// Redraw budget for degenerate label balance or missing groups.
const MAX_REDRAWS: usize = 16;
/// Accepted range for the empirical share of either class.
const MIN_CLASS_SHARE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerativeSpec {
    pub content_dims: usize,
    pub style_dims: usize,
    pub groups: usize,
    pub group_style_means: Vec<Vec<f64>>,
    pub group_style_scales: Vec<Vec<f64>>,
    pub label_rule: LabelRule,
    pub mixing_depth: usize,
    pub mixing_seed: u64,
    /// Probability that a sample's group is tied to its label (`y mod K`)
    /// instead of drawn uniformly. Zero keeps group and label independent.
    #[serde(default)]
    pub group_label_correlation: f64,
}

impl Default for GenerativeSpec {
    fn default() -> Self {
        GenerativeSpec {
            content_dims: 2,
            style_dims: 2,
            groups: 2,
            group_style_means: vec![vec![-2.5, -2.5], vec![2.5, 2.5]],
            group_style_scales: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            label_rule: LabelRule {
                weights: vec![1.0, 1.0],
                bias: 0.0,
            },
            mixing_depth: 1,
            mixing_seed: 11,
            group_label_correlation: 0.0,
        }
    }
}

impl GenerativeSpec {
    pub fn observation_dim(&self) -> usize {
        self.content_dims + self.style_dims
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |field: &str, msg: String| Err(Error::config(field, msg));
        if self.content_dims < 1 {
            return cfg("content_dims", "must be at least 1".into());
        }
        if self.groups < 1 {
            return cfg("groups", "must be at least 1".into());
        }
        if self.group_style_means.len() != self.groups {
            return cfg(
                "group_style_means",
                format!("expected {} groups, got {}", self.groups, self.group_style_means.len()),
            );
        }
        if self.group_style_scales.len() != self.groups {
            return cfg(
                "group_style_scales",
                format!("expected {} groups, got {}", self.groups, self.group_style_scales.len()),
            );
        }
        for (k, (mu, sd)) in self.group_style_means.iter().zip(&self.group_style_scales).enumerate() {
            if mu.len() != self.style_dims || mu.iter().any(|v| !v.is_finite()) {
                return cfg("group_style_means", format!("group {k}: need {} finite values", self.style_dims));
            }
            if sd.len() != self.style_dims || sd.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return cfg(
                    "group_style_scales",
                    format!("group {k}: need {} positive values", self.style_dims),
                );
            }
        }
        if self.label_rule.weights.len() != self.content_dims {
            return cfg(
                "label_rule.weights",
                format!("expected {} weights", self.content_dims),
            );
        }
        if self.label_rule.weights.iter().all(|w| *w == 0.0) || !self.label_rule.bias.is_finite() {
            return cfg("label_rule", "hyperplane must have a nonzero normal".into());
        }
        if !(0.0..=1.0).contains(&self.group_label_correlation) {
            return cfg("group_label_correlation", "must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// The fixed observation map `g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mixing {
    layers: Vec<Matrix>,
}

pub fn leaky_tanh(u: f64) -> f64 {
    u.tanh() + 0.1 * u
}

impl Mixing {
    pub fn from_spec(spec: &GenerativeSpec) -> Self {
        let d = spec.observation_dim();
        let mut rng = Rng::stream(spec.mixing_seed, Stream::Mixing);
        let layers = (0..spec.mixing_depth)
            .map(|_| loop {
                let scale = 1.0 / (d as f64).sqrt();
                let mut m = Matrix::zeros(d, d);
                for v in m.as_mut_slice() {
                    *v = rng.normal() * scale;
                }
                if condition_number(&m) < MAX_CONDITION {
                    break m;
                }
            })
            .collect();
        Mixing { layers }
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn apply(&self, latent: &[f64]) -> Vec<f64> {
        let mut h = latent.to_vec();
        for w in &self.layers {
            h = (0..w.rows())
                .map(|i| leaky_tanh(w.row(i).iter().zip(&h).map(|(a, b)| a * b).sum()))
                .collect();
        }
        h
    }
}

/// Draw `n` samples from the process described by `spec`.
pub fn generate(spec: &GenerativeSpec, n: usize, rng: &mut Rng) -> Result<GroupedDataset> {
    spec.validate()?;
    if n < spec.groups * 2 {
        return Err(Error::contract(format!(
            "need at least {} samples for {} groups, got {n}",
            spec.groups * 2,
            spec.groups
        )));
    }
    let mixing = Mixing::from_spec(spec);

    for _attempt in 0..MAX_REDRAWS {
        let samples: Vec<Sample> = (0..n).map(|_| draw_one(spec, &mixing, rng)).collect();
        let positives = samples.iter().filter(|s| s.y == 1).count() as f64 / n as f64;
        let balanced = (MIN_CLASS_SHARE..=1.0 - MIN_CLASS_SHARE).contains(&positives);
        let mut seen = vec![false; spec.groups];
        for s in &samples {
            seen[s.group] = true;
        }
        if balanced && seen.iter().all(|&s| s) {
            return GroupedDataset::new(samples, spec.groups, SplitTag::Full);
        }
    }
    Err(Error::Generation(format!(
        "label rule {:?} / group draw stayed degenerate after {MAX_REDRAWS} redraws \
         (each class must hold at least {MIN_CLASS_SHARE} of the samples and every group must appear)",
        spec.label_rule
    )))
}

fn draw_one(spec: &GenerativeSpec, mixing: &Mixing, rng: &mut Rng) -> Sample {
    let content: Vec<f64> = (0..spec.content_dims).map(|_| rng.normal()).collect();
    let score: f64 = content
        .iter()
        .zip(&spec.label_rule.weights)
        .map(|(c, w)| c * w)
        .sum::<f64>()
        + spec.label_rule.bias;
    let y = u8::from(score > 0.0);

    let tie = spec.group_label_correlation > 0.0 && rng.uniform() < spec.group_label_correlation;
    let group = if tie {
        y as usize % spec.groups
    } else {
        rng.index(spec.groups)
    };

    let style: Vec<f64> = spec.group_style_means[group]
        .iter()
        .zip(&spec.group_style_scales[group])
        .map(|(mu, sd)| mu + sd * rng.normal())
        .collect();

    let mut latent = content.clone();
    latent.extend_from_slice(&style);
    let x = mixing.apply(&latent);
    Sample {
        x,
        y,
        group,
        gt_content: Some(content),
        gt_style: Some(style),
    }
}
