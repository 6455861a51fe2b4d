//! Training loop, model selection, and multi-seed orchestration.
//!
//! Invariant mode draws batches from the grouped sampler and applies the
//! routed objective: φ follows the invariance gradient with `lr_phi`, ψ
//! follows the classification gradient with `lr_psi`. Baseline mode draws
//! IID batches and trains both parts on BCE alone.
//!
//! One epoch is `⌈n_train / batch_size⌉` optimizer steps in either mode.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{GroupedDataset, Splits};
use crate::error::{Error, Result};
use crate::losses::{total_loss, BatchMeta, LossConfig, Pairing, PairingMode};
use crate::metrics::{self, classification_metrics, EvalConfig, MetricsReport, PairwiseMcc};
use crate::model::{self, phi_forward, psi_logit, save_checkpoint, Architecture, ModelParams};
use crate::numerics::{adam_step, AdamConfig, AdamState, Matrix, Rng, Stream, Tape};
use crate::sampler::{draw_grouped_batch, partition_groups, GroupDraw, IidSampler, SamplerConfig, SamplerMode};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Invariant,
    Baseline,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Invariant => "invariant",
            Mode::Baseline => "baseline",
        }
    }
}

/// Which epoch's parameters a run keeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    LowestValBce,
    /// The rule as literally worded in the method description.
    HighestValBce,
    HighestValAuroc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Set per run by the caller; not part of the JSON form.
    #[serde(skip)]
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_phi: f64,
    pub lr_psi: f64,
    /// Samples per grouped-sampling iteration.
    pub samples_per_iteration: usize,
    pub group_draw: GroupDraw,
    pub uniformity_weight: f64,
    /// Uniformity kernel temperature.
    pub temperature: f64,
    pub pairing: PairingMode,
    pub seeds: Vec<u64>,
    pub selection: Selection,
    /// Hidden widths of φ.
    pub hidden: Vec<usize>,
    /// Representation dimension N.
    pub latent_dim: usize,
    /// Keep the `m` runs with the highest validation AUROC before
    /// aggregating.
    pub top_m: Option<usize>,
    /// Test-set evaluation; configured separately in the JSON form.
    #[serde(skip)]
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let loss = LossConfig::default();
        TrainConfig {
            mode: Mode::Invariant,
            epochs: 20,
            batch_size: 32,
            lr_phi: 1e-3,
            lr_psi: 1e-4,
            samples_per_iteration: 2,
            group_draw: GroupDraw::Distinct,
            uniformity_weight: loss.uniformity_weight,
            temperature: loss.temperature,
            pairing: PairingMode::Chain,
            seeds: vec![0, 1, 2, 3, 4],
            selection: Selection::LowestValBce,
            hidden: vec![64, 64],
            latent_dim: 8,
            top_m: None,
            eval: EvalConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_mode(&self, mode: Mode) -> Self {
        TrainConfig { mode, ..self.clone() }
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            uniformity_weight: self.uniformity_weight,
            temperature: self.temperature,
        }
    }

    pub fn arch(&self, input_dim: usize) -> Architecture {
        let mut widths = vec![input_dim];
        widths.extend(&self.hidden);
        widths.push(self.latent_dim);
        Architecture(widths)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("lr_phi", self.lr_phi)?;
        positive("lr_psi", self.lr_psi)?;
        positive("temperature", self.temperature)?;
        if !(self.uniformity_weight >= 0.0) || !self.uniformity_weight.is_finite() {
            return Err(Error::config("uniformity_weight", "must be non-negative and finite"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.samples_per_iteration < 2 {
            return Err(Error::config("samples_per_iteration", "must be at least 2"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.top_m == Some(0) {
            return Err(Error::config("top_m", "must be at least 1 when set"));
        }
        self.eval.validate()?;
        self.arch(1).validate()
    }
}

/// Mean training losses over one epoch, plus validation numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_similarity: Option<f64>,
    pub train_uniformity: Option<f64>,
    pub train_bce: f64,
    pub train_total: f64,
    pub val_bce: f64,
    pub val_auroc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub mode: Mode,
    /// 1-based epoch of `best_checkpoint`.
    pub best_epoch: usize,
    pub best_checkpoint: ModelParams,
    pub history: Vec<EpochRecord>,
    pub val_auroc: f64,
    pub val_bce: f64,
    pub test_metrics: MetricsReport,
    pub steps: usize,
    /// Steps on which the routing audit ran (every step in invariant mode).
    pub routing_checks: usize,
}

/// Observer for per-step events; the default does nothing.
pub trait StepHook: Sync {
    fn routing(&self, _epoch: usize, _batch: usize, _bce_on_phi: f64, _inv_on_psi: f64) {}
}

pub struct NoHook;
impl StepHook for NoHook {}

fn non_finite(epoch: usize, batch: usize, what: &str, model: &ModelParams) -> Error {
    let params = if model.is_finite() { "finite" } else { "non-finite" };
    Error::NonFinite {
        epoch,
        batch,
        detail: format!("{what} is not finite; parameters are {params}"),
    }
}

/// BCE-only step for baseline mode: gradients for φ and ψ.
fn baseline_grads(model: &ModelParams, x: &Matrix, labels: &[u8]) -> Result<(f64, Vec<Matrix>, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let vars = model.register(&mut tape);
    let xv = tape.constant(x.clone());
    let z = phi_forward(&mut tape, &vars, xv)?;
    let l = psi_logit(&mut tape, &vars, z)?;
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let bce = tape.bce_with_logits(l, &y)?;
    let g = tape.backward(bce)?;
    Ok((tape.value(bce).item(), vars.phi_grads(&g), vars.psi_grads(&g)))
}

fn better(sel: Selection, cand: (f64, f64), best: (f64, f64)) -> bool {
    // (val_bce, val_auroc); ties keep the earlier epoch
    match sel {
        Selection::LowestValBce => cand.0 < best.0,
        Selection::HighestValBce => cand.0 > best.0,
        Selection::HighestValAuroc => cand.1 > best.1,
    }
}

/// Train one seed. `hook` observes every routing audit.
pub fn train_run_with(cfg: &TrainConfig, splits: &Splits, seed: u64, hook: &dyn StepHook) -> Result<RunResult> {
    cfg.validate()?;
    let train = &splits.train;
    let arch = cfg.arch(train.input_dim());
    let mut model = model::init(&arch, &mut Rng::stream(seed, Stream::Init))?;
    let mut sample_rng = Rng::stream(seed, Stream::Sampling);
    let phi_opt = AdamConfig::with_lr(cfg.lr_phi);
    let psi_opt = AdamConfig::with_lr(cfg.lr_psi);
    let mut phi_state = AdamState::for_params(&model.phi_params());
    let mut psi_state = AdamState::for_params(&model.psi_params());
    let loss_cfg = cfg.loss();
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);

    let sampler_cfg = SamplerConfig {
        samples_per_iteration: cfg.samples_per_iteration,
        mode: match cfg.mode {
            Mode::Invariant => SamplerMode::Invariant,
            Mode::Baseline => SamplerMode::Iid,
        },
        group_draw: cfg.group_draw,
    };
    let cells = partition_groups(train);
    let mut iid = None;
    match cfg.mode {
        Mode::Invariant => cells.require_complete()?,
        Mode::Baseline => {
            iid = Some(IidSampler::new(train.len(), cfg.batch_size.min(train.len()), sample_rng.clone())?);
        }
    }

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, ModelParams, f64, f64)> = None;
    let mut steps = 0usize;
    let mut routing_checks = 0usize;

    for epoch in 1..=cfg.epochs {
        let (mut s_sim, mut s_unif, mut s_bce, mut s_total) = (0.0, 0.0, 0.0, 0.0);
        let batches: Vec<Option<Vec<usize>>> = match iid.as_mut() {
            Some(s) => s.epoch().into_iter().map(Some).collect(),
            None => vec![None; steps_per_epoch],
        };
        let n_batches = batches.len();
        for (b, rows) in batches.into_iter().enumerate() {
            let batch_no = b + 1;
            match rows {
                None => {
                    let gb = draw_grouped_batch(&sampler_cfg, &cells, cfg.batch_size, &mut sample_rng)?;
                    let x = train.x_matrix(&gb.rows);
                    let meta = BatchMeta {
                        labels: gb.labels,
                        groups: gb.groups,
                        pairing: match cfg.pairing {
                            PairingMode::Chain => gb.pairing,
                            PairingMode::AllPairs => Pairing::AllPairs,
                        },
                    };
                    let (lb, grads, audit) = total_loss(&model, &x, &meta, &loss_cfg, true)?;
                    hook.routing(epoch, batch_no, audit.bce_on_phi, audit.inv_on_psi);
                    routing_checks += 1;
                    if !audit.holds() {
                        return Err(Error::contract(format!(
                            "gradient routing violated at epoch {epoch}, batch {batch_no}: \
                             |dBCE/dphi| = {:e}, |dINV/dpsi| = {:e}",
                            audit.bce_on_phi, audit.inv_on_psi
                        )));
                    }
                    if !lb.total.is_finite() {
                        return Err(non_finite(epoch, batch_no, "L_Total", &model));
                    }
                    adam_step(&mut model.phi_params_mut(), &grads.phi, &mut phi_state, &phi_opt)?;
                    adam_step(&mut model.psi_params_mut(), &grads.psi, &mut psi_state, &psi_opt)?;
                    s_sim += lb.similarity;
                    s_unif += lb.uniformity;
                    s_bce += lb.bce;
                    s_total += lb.total;
                }
                Some(rows) => {
                    let x = train.x_matrix(&rows);
                    let (bce, g_phi, g_psi) = baseline_grads(&model, &x, &train.labels(&rows))?;
                    if !bce.is_finite() {
                        return Err(non_finite(epoch, batch_no, "L_BCE", &model));
                    }
                    adam_step(&mut model.phi_params_mut(), &g_phi, &mut phi_state, &phi_opt)?;
                    adam_step(&mut model.psi_params_mut(), &g_psi, &mut psi_state, &psi_opt)?;
                    s_bce += bce;
                    s_total += bce;
                }
            }
            steps += 1;
            if !model.is_finite() {
                return Err(non_finite(epoch, batch_no, "a parameter update", &model));
            }
        }

        let (val_auroc, val_bce) = classification_metrics(&model, &splits.val)
            .map_err(|e| if model.is_finite() { e } else { non_finite(epoch, n_batches, "validation", &model) })?;
        if !val_bce.is_finite() {
            return Err(non_finite(epoch, n_batches, "validation L_BCE", &model));
        }
        let nb = n_batches as f64;
        let invariant = cfg.mode == Mode::Invariant;
        history.push(EpochRecord {
            epoch,
            train_similarity: invariant.then_some(s_sim / nb),
            train_uniformity: invariant.then_some(s_unif / nb),
            train_bce: s_bce / nb,
            train_total: s_total / nb,
            val_bce,
            val_auroc,
        });
        let replace = match &best {
            None => true,
            Some((_, _, bb, ba)) => better(cfg.selection, (val_bce, val_auroc), (*bb, *ba)),
        };
        if replace {
            best = Some((epoch, model.clone(), val_bce, val_auroc));
        }
    }

    let (best_epoch, best_checkpoint, val_bce, val_auroc) = best.expect("epochs ≥ 1");
    let test_metrics = metrics::evaluate(&best_checkpoint, &splits.test, &cfg.eval)?;
    Ok(RunResult {
        seed,
        mode: cfg.mode,
        best_epoch,
        best_checkpoint,
        history,
        val_auroc,
        val_bce,
        test_metrics,
        steps,
        routing_checks,
    })
}

pub fn train_run(cfg: &TrainConfig, splits: &Splits, seed: u64) -> Result<RunResult> {
    train_run_with(cfg, splits, seed, &NoHook)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: f64::NAN, std: f64::NAN };
    }
    // offset by the first value so a constant input returns itself exactly
    let first = values[0];
    let mean = first + values.iter().map(|v| v - first).sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mode: Mode,
    pub n_runs: usize,
    pub seeds: Vec<u64>,
    /// Set when only one run was aggregated, so every std is 0.
    pub degenerate: bool,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Named scalar metrics of a run, as aggregated and tabulated.
pub fn run_scalars(r: &RunResult) -> BTreeMap<String, f64> {
    scalars(&r.test_metrics, r.val_auroc)
}

pub fn scalars(m: &MetricsReport, val_auroc: f64) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("auroc".into(), m.auroc);
    out.insert("delta".into(), m.delta);
    out.insert("val_auroc".into(), val_auroc);
    out.insert("test_bce".into(), m.bce);
    for (k, v) in [
        ("mcc_strong", m.mcc_strong),
        ("mcc_weak", m.mcc_weak),
        ("mcc_weak_style", m.mcc_weak_style),
        ("group_probe_acc", m.group_probe_acc),
    ] {
        if let Some(v) = v {
            out.insert(k.into(), v);
        }
    }
    out
}

pub fn aggregate(mode: Mode, runs: &[&RunResult]) -> Result<Aggregate> {
    let rows: Vec<(u64, BTreeMap<String, f64>)> = runs.iter().map(|r| (r.seed, run_scalars(r))).collect();
    aggregate_rows(mode, &rows)
}

/// Mean and sample std of each named scalar over `(seed, scalars)` rows.
pub fn aggregate_rows(mode: Mode, rows: &[(u64, BTreeMap<String, f64>)]) -> Result<Aggregate> {
    if rows.is_empty() {
        return Err(Error::contract("aggregate needs at least one run"));
    }
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (_, row) in rows {
        for (k, v) in row {
            columns.entry(k.clone()).or_default().push(*v);
        }
    }
    Ok(Aggregate {
        mode,
        n_runs: rows.len(),
        seeds: rows.iter().map(|(s, _)| *s).collect(),
        degenerate: rows.len() == 1,
        metrics: columns.into_iter().map(|(k, v)| (k, mean_std(&v))).collect(),
    })
}

/// Indices of the `m` runs with the highest validation AUROC, in run order.
pub fn top_m_by_val_auroc(runs: &[RunResult], m: usize) -> Vec<usize> {
    top_m(&runs.iter().map(|r| r.val_auroc).collect::<Vec<_>>(), m)
}

/// Indices of the `m` largest values, in input order; ties keep the earlier
/// index.
pub fn top_m(values: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    order
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub runs: Vec<RunResult>,
    /// Indices into `runs` that entered the aggregate.
    pub selected: Vec<usize>,
    pub aggregate: Aggregate,
}

/// Train every seed (up to `jobs` at once) and aggregate.
pub fn run_experiment(cfg: &TrainConfig, splits: &Splits, jobs: usize) -> Result<Experiment> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunResult>> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| train_run(cfg, splits, s)).collect());
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let selected = match cfg.top_m {
        Some(m) => top_m_by_val_auroc(&runs, m),
        None => (0..runs.len()).collect(),
    };
    let chosen: Vec<&RunResult> = selected.iter().map(|&i| &runs[i]).collect();
    let aggregate = aggregate(cfg.mode, &chosen)?;
    Ok(Experiment {
        runs,
        selected,
        aggregate,
    })
}

/// Pairwise MCC between runs' φ outputs on a common evaluation set.
pub fn cross_seed_mcc(models: &[&ModelParams], ds: &GroupedDataset, n_eval: usize, eval_seed: u64) -> Result<PairwiseMcc> {
    let idx = metrics::eval_indices(ds, n_eval, eval_seed);
    let x = ds.x_matrix(&idx);
    let z = models.iter().map(|m| m.embed(&x)).collect::<Result<Vec<_>>>()?;
    metrics::pairwise_mcc(&z)
}

/// Lowercase hex SHA-256 of the compact JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Per-run JSON written as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetricsFile {
    pub seed: u64,
    pub mode: Mode,
    pub best_epoch: usize,
    pub val_auroc: f64,
    pub val_bce: f64,
    pub steps: usize,
    pub routing_checks: usize,
    pub test: MetricsReport,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Complete,
    Aborted,
}

/// `manifest.json` of a run directory. Paths are relative to the run
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub artifacts: Vec<String>,
    pub diagnostics: Option<String>,
}

pub const CHECKPOINT_STEM: &str = "checkpoint";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";

pub fn run_dir_name(mode: Mode, seed: u64) -> String {
    format!("{}-seed{seed}", mode.name())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write checkpoint, metrics, embeddings of the evaluation set, and the
/// manifest into `dir`.
pub fn write_run(run: &RunResult, test: &GroupedDataset, cfg: &TrainConfig, hash: &str, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(&run.best_checkpoint, run.seed, run.best_epoch, dir, CHECKPOINT_STEM)?;
    write_json(
        &dir.join("metrics.json"),
        &RunMetricsFile {
            seed: run.seed,
            mode: run.mode,
            best_epoch: run.best_epoch,
            val_auroc: run.val_auroc,
            val_bce: run.val_bce,
            steps: run.steps,
            routing_checks: run.routing_checks,
            test: run.test_metrics.clone(),
            history: run.history.clone(),
        },
    )?;
    let idx = metrics::eval_indices(test, cfg.eval.n_eval, cfg.eval.eval_seed);
    let emb = metrics::Embeddings {
        z: run.best_checkpoint.embed(&test.x_matrix(&idx))?,
        labels: test.labels(&idx),
        groups: test.groups(&idx),
    };
    metrics::save_embeddings(&emb, &dir.join(EMBEDDINGS_FILE))?;
    let manifest = RunManifest {
        status: RunStatus::Complete,
        config_hash: hash.to_string(),
        seed: run.seed,
        mode: run.mode,
        artifacts: vec![
            format!("{CHECKPOINT_STEM}.json"),
            format!("{CHECKPOINT_STEM}.bin"),
            "metrics.json".into(),
            EMBEDDINGS_FILE.into(),
        ],
        diagnostics: None,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Manifest for a run that stopped on an error.
pub fn write_aborted(mode: Mode, seed: u64, hash: &str, err: &Error, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(
        &dir.join("manifest.json"),
        &RunManifest {
            status: RunStatus::Aborted,
            config_hash: hash.to_string(),
            seed,
            mode,
            artifacts: Vec::new(),
            diagnostics: Some(err.to_string()),
        },
    )
}
