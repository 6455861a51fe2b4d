//! Invariance loss (cross-group similarity plus a uniformity penalty),
//! binary cross-entropy with logits, and the routed total objective.
//!
//! The uniformity term stands in for the negative entropy of the batch of
//! representations: `ln mean_{i≠j} exp(−t‖z_i − z_j‖²)`. It is `≤ 0`, equals
//! zero only when every row coincides, and decreases as the rows spread out.
//!
//! Routing: when enabled, ψ sees a detached copy of `z`, so classification
//! gradients never reach φ and invariance gradients never reach ψ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{phi_forward, psi_logit, ModelParams, ModelVars};
use crate::numerics::{check_gradients, GradCheckReport, Matrix, Tape, Var};

/// Representations with their group ids and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentBatch {
    pub z: Matrix,
    pub group_ids: Vec<usize>,
    pub labels: Vec<u8>,
}

impl LatentBatch {
    pub fn new(z: Matrix, group_ids: Vec<usize>, labels: Vec<u8>) -> Result<Self> {
        if z.rows() != group_ids.len() || z.rows() != labels.len() {
            return Err(Error::Shape {
                op: "latent_batch",
                left: z.shape(),
                right: (group_ids.len(), labels.len()),
            });
        }
        Ok(LatentBatch { z, group_ids, labels })
    }
}

/// Which row pairs the similarity term compares.
#[derive(Clone, Debug, PartialEq)]
pub enum Pairing {
    /// Explicit `(sample, reference)` row pairs from the sampling chain,
    /// summed and divided by the number of sampling rounds they came from.
    Chain { pairs: Vec<(usize, usize)>, rounds: usize },
    /// For every group pair `k < k'`, the mean squared distance over all row
    /// pairs drawn from those two groups that share a label; summed over
    /// group pairs.
    AllPairs,
}

impl Pairing {
    /// A single-round chain.
    pub fn chain(pairs: Vec<(usize, usize)>) -> Self {
        Pairing::Chain { pairs, rounds: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingMode {
    Chain,
    AllPairs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub similarity: f64,
    pub uniformity: f64,
    pub bce: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub uniformity_weight: f64,
    /// Kernel temperature `t` of the uniformity term.
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            uniformity_weight: 0.3,
            temperature: 5.0,
        }
    }
}

/// Row pairs and their weights for [`Pairing::AllPairs`].
fn all_pairs_weights(groups: &[usize], labels: &[u8]) -> Vec<(usize, usize, f64)> {
    use std::collections::BTreeMap;
    let mut buckets: BTreeMap<(usize, usize), Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..groups.len() {
        for j in 0..groups.len() {
            if groups[i] < groups[j] && labels[i] == labels[j] {
                buckets.entry((groups[i], groups[j])).or_default().push((i, j));
            }
        }
    }
    buckets
        .into_values()
        .flat_map(|pairs| {
            let w = 1.0 / pairs.len() as f64;
            pairs.into_iter().map(move |(i, j)| (i, j, w))
        })
        .collect()
}

/// Similarity term on the tape.
pub fn similarity_on_tape(
    tape: &mut Tape,
    z: Var,
    pairing: &Pairing,
    groups: &[usize],
    labels: &[u8],
) -> Result<Var> {
    let b = tape.value(z).rows();
    if b < 2 {
        return Err(Error::contract(format!("similarity needs at least 2 rows, got {b}")));
    }
    match pairing {
        Pairing::Chain { pairs, rounds } => {
            if pairs.is_empty() || *rounds == 0 {
                return Err(Error::contract("chain pairing needs at least one pair and one round"));
            }
            let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let l = tape.select_rows(z, &left)?;
            let r = tape.select_rows(z, &right)?;
            let d = tape.sub(l, r)?;
            let sq = tape.square(d);
            let s = tape.sum(sq);
            Ok(tape.scale(s, 1.0 / *rounds as f64))
        }
        Pairing::AllPairs => {
            if groups.len() != b || labels.len() != b {
                return Err(Error::Shape {
                    op: "similarity",
                    left: (b, 0),
                    right: (groups.len(), labels.len()),
                });
            }
            let mut w = Matrix::zeros(b, b);
            for (i, j, wt) in all_pairs_weights(groups, labels) {
                w[(i, j)] = wt;
            }
            let d = tape.pairwise_sq_dist(z);
            let wv = tape.constant(w);
            let weighted = tape.mul(d, wv)?;
            Ok(tape.sum(weighted))
        }
    }
}

/// Uniformity term on the tape.
pub fn uniformity_on_tape(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var> {
    let b = tape.value(z).rows();
    if b < 2 {
        return Err(Error::contract(format!("uniformity needs at least 2 rows, got {b}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {temperature}")));
    }
    let d = tape.pairwise_sq_dist(z);
    let a = tape.scale(d, -temperature);
    tape.log_mean_exp_offdiag(a)
}

pub fn similarity_loss(batch: &LatentBatch, pairing: &Pairing) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(batch.z.clone());
    let s = similarity_on_tape(&mut tape, z, pairing, &batch.group_ids, &batch.labels)?;
    Ok(tape.value(s).item())
}

pub fn uniformity_loss(batch: &LatentBatch, temperature: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.constant(batch.z.clone());
    let u = uniformity_on_tape(&mut tape, z, temperature)?;
    Ok(tape.value(u).item())
}

fn labels_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&y| y as f64).collect()
}

/// Mean binary cross-entropy of `logits` against 0/1 `labels`.
pub fn bce_with_logits(labels: &[u8], logits: &[f64]) -> Result<f64> {
    if labels.len() != logits.len() {
        return Err(Error::Shape {
            op: "bce_with_logits",
            left: (labels.len(), 1),
            right: (logits.len(), 1),
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::contract(format!("non-binary label {bad}")));
    }
    let mut tape = Tape::new();
    let l = tape.constant(Matrix::column(logits));
    let v = tape.bce_with_logits(l, &labels_f64(labels))?;
    Ok(tape.value(v).item())
}

/// Metadata for one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMeta {
    pub labels: Vec<u8>,
    pub groups: Vec<usize>,
    pub pairing: Pairing,
}

/// Handles of the loss graph built by [`build_invariant_loss`].
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub z: Var,
    pub similarity: Var,
    pub uniformity: Var,
    pub invariance: Var,
    pub bce: Var,
    pub total: Var,
}

impl LossGraph {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            similarity: tape.value(self.similarity).item(),
            uniformity: tape.value(self.uniformity).item(),
            bce: tape.value(self.bce).item(),
            total: tape.value(self.total).item(),
        }
    }
}

/// `total = (similarity + w·uniformity) + bce`, with ψ fed a detached `z`
/// when `routing` is set.
pub fn build_invariant_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    x: Var,
    meta: &BatchMeta,
    cfg: &LossConfig,
    routing: bool,
) -> Result<LossGraph> {
    let z = phi_forward(tape, vars, x)?;
    let similarity = similarity_on_tape(tape, z, &meta.pairing, &meta.groups, &meta.labels)?;
    let uniformity = uniformity_on_tape(tape, z, cfg.temperature)?;
    let weighted = tape.scale(uniformity, cfg.uniformity_weight);
    let invariance = tape.add(similarity, weighted)?;
    let head_input = if routing { tape.detach(z) } else { z };
    let logits = psi_logit(tape, vars, head_input)?;
    let bce = tape.bce_with_logits(logits, &labels_f64(&meta.labels))?;
    let total = tape.add(invariance, bce)?;
    Ok(LossGraph {
        z,
        similarity,
        uniformity,
        invariance,
        bce,
        total,
    })
}

/// Gradients split by destination.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutedGradients {
    pub phi: Vec<Matrix>,
    pub psi: Vec<Matrix>,
}

/// Result of the per-step routing audit.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingAudit {
    /// max |∂L_BCE/∂θ_φ|
    pub bce_on_phi: f64,
    /// max |∂L_INV/∂θ_ψ|
    pub inv_on_psi: f64,
}

impl RoutingAudit {
    pub fn holds(&self) -> bool {
        self.bce_on_phi == 0.0 && self.inv_on_psi == 0.0
    }
}

fn max_abs(ms: &[Matrix]) -> f64 {
    ms.iter().map(Matrix::max_abs).fold(0.0, f64::max)
}

/// Evaluate the invariant objective for `model` on inputs `x` and return the
/// breakdown, gradients (φ from L_INV, ψ from L_BCE) and the routing audit.
///
/// With `routing = false` the gradients are those of L_Total with respect to
/// every parameter.
pub fn total_loss(
    model: &ModelParams,
    x: &Matrix,
    meta: &BatchMeta,
    cfg: &LossConfig,
    routing: bool,
) -> Result<(LossBreakdown, RoutedGradients, RoutingAudit)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let xv = tape.constant(x.clone());
    let graph = build_invariant_loss(&mut tape, &vars, xv, meta, cfg, routing)?;
    let breakdown = graph.breakdown(&tape);

    if routing {
        let g_inv = tape.backward(graph.invariance)?;
        let g_bce = tape.backward(graph.bce)?;
        let audit = RoutingAudit {
            bce_on_phi: max_abs(&vars.phi_grads(&g_bce)),
            inv_on_psi: max_abs(&vars.psi_grads(&g_inv)),
        };
        let grads = RoutedGradients {
            phi: vars.phi_grads(&g_inv),
            psi: vars.psi_grads(&g_bce),
        };
        Ok((breakdown, grads, audit))
    } else {
        let g = tape.backward(graph.total)?;
        let grads = RoutedGradients {
            phi: vars.phi_grads(&g),
            psi: vars.psi_grads(&g),
        };
        let audit = RoutingAudit {
            bce_on_phi: f64::NAN,
            inv_on_psi: f64::NAN,
        };
        Ok((breakdown, grads, audit))
    }
}

/// Finite-difference check of L_Total (no routing) with respect to every
/// model parameter on one batch.
pub fn check_total_gradients(
    model: &ModelParams,
    x: &Matrix,
    meta: &BatchMeta,
    cfg: &LossConfig,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    let params: Vec<Matrix> = model.flat_params().into_iter().cloned().collect();
    check_gradients(
        |tape, vars| {
            let mv = ModelVars::from_flat(vars)?;
            let xv = tape.constant(x.clone());
            Ok(build_invariant_loss(tape, &mv, xv, meta, cfg, false)?.total)
        },
        &params,
        h,
        tol,
    )
}
