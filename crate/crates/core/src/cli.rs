//! Command-line surface: `gen-data`, `train`, `eval`, `mcc`, `report`,
//! `plot`.
//!
//! Every path is relative to `output_dir`:
//!
//! ```text
//! data/{train,val,test}.csv, data/spec.json
//! runs/<mode>-seed<s>/{checkpoint.json,checkpoint.bin,metrics.json,embeddings.csv,manifest.json}
//! runs/aggregate-<mode>.json
//! eval/<run>.json
//! mcc/<mode>/{mcc_strong.csv,mcc_weak.csv,mcc.json}
//! report/{report.md,report.csv,report.json}
//! plots/<run>/{class.svg,group.svg,plot.json}
//! ```
//!
//! Exit codes: 0 success, 2 config, 3 numerical abort, 4 missing artifact,
//! 1 anything else.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, Fractions, GenerativeSpec, Sidecar, Splits};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalConfig, MetricsReport};
use crate::model;
use crate::numerics::{Matrix, Rng, Stream};
use crate::plot::{self, Attribute};
use crate::train::{self, write_json, Aggregate, Mode, RunManifest, RunMetricsFile, RunStatus, TrainConfig};

pub const OUTPUT_DIR_ENV: &str = "CRL_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub spec: GenerativeSpec,
    /// Samples generated before splitting.
    pub n_samples: usize,
    pub fractions: Fractions,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            spec: GenerativeSpec::default(),
            n_samples: 8334,
            fractions: Fractions::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotConfig {
    pub kde_grid: usize,
    /// Fixed KDE bandwidth on the scaled axis; Silverman's rule when absent.
    pub bandwidth: Option<f64>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            kde_grid: 256,
            bandwidth: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    /// Hyperparameters shared by every mode.
    pub train: TrainConfig,
    /// Modes trained by `train`, in order.
    pub modes: Vec<Mode>,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataConfig::default(),
            train: TrainConfig::default(),
            modes: vec![Mode::Invariant, Mode::Baseline],
            eval: EvalConfig::default(),
            plot: PlotConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Parse JSON text. Unknown keys are rejected with the key named.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            let field = msg
                .strip_prefix("unknown field `")
                .and_then(|r| r.split('`').next())
                .unwrap_or("config")
                .to_string();
            Error::config(field, msg)
        })
    }

    /// Read `path` (defaults when `None`), apply the output-dir environment
    /// override, and validate.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            None => ExperimentConfig::default(),
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", p.display())))?;
                ExperimentConfig::from_json(&text)?
            }
        };
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.spec.validate()?;
        self.data.fractions.validate()?;
        if self.data.n_samples < 12 * self.data.spec.groups {
            return Err(Error::config(
                "data.n_samples",
                format!("{} is too small for {} groups", self.data.n_samples, self.data.spec.groups),
            ));
        }
        self.train_config(Mode::Invariant).validate()?;
        if self.modes.is_empty() {
            return Err(Error::config("modes", "at least one mode is required"));
        }
        let mut seen = self.modes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modes.len() {
            return Err(Error::config("modes", "modes must be distinct"));
        }
        self.eval.validate()?;
        if self.plot.kde_grid < 2 {
            return Err(Error::config("plot.kde_grid", "must be at least 2"));
        }
        if let Some(h) = self.plot.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("plot.bandwidth", format!("must be positive, got {h}")));
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        Ok(())
    }

    /// Training configuration for one mode, with the evaluation settings
    /// attached.
    pub fn train_config(&self, mode: Mode) -> TrainConfig {
        TrainConfig {
            mode,
            eval: self.eval.clone(),
            ..self.train.clone()
        }
    }

    pub fn layout(&self) -> Layout {
        Layout {
            root: self.output_dir.clone(),
        }
    }
}

/// Paths under `output_dir`.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn run(&self, name: &str) -> PathBuf {
        self.runs().join(name)
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn mcc(&self) -> PathBuf {
        self.root.join("mcc")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

/// Command-line arguments.
#[derive(Debug, Parser)]
#[command(name = "crl", version, about = "Group-invariant representation learning on synthetic data")]
pub struct Cli {
    /// JSON experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Data seed for `gen-data`; single run seed for `train`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Concurrent runs.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its splits.
    GenData,
    /// Train every configured mode and seed.
    Train,
    /// Re-evaluate saved checkpoints on the test split.
    Eval {
        /// Run directory names under runs/; all completed runs when empty.
        runs: Vec<String>,
    },
    /// Pairwise cross-run MCC of φ outputs.
    Mcc {
        /// Run directory names compared as one set; per mode when empty.
        runs: Vec<String>,
    },
    /// Mean ± std tables per mode.
    Report,
    /// PC1 density plots per class and group.
    Plot {
        #[arg(long, value_enum)]
        attribute: Option<Attribute>,
        /// Run directory names under runs/; all completed runs when empty.
        runs: Vec<String>,
    },
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Execute a parsed command; returns the text printed on success.
pub fn run(cli: &Cli) -> Result<String> {
    let mut cfg = ExperimentConfig::load(cli.config.as_deref())?;
    let jobs = match cli.jobs {
        Some(0) => return Err(Error::config("--jobs", "must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    match &cli.command {
        Command::GenData => {
            if let Some(s) = cli.seed {
                cfg.data.seed = s;
            }
            cmd_gen_data(&cfg, cli.force)
        }
        Command::Train => {
            if let Some(s) = cli.seed {
                cfg.train.seeds = vec![s];
            }
            cmd_train(&cfg, jobs, cli.force)
        }
        Command::Eval { runs } => cmd_eval(&cfg, runs, cli.force),
        Command::Mcc { runs } => cmd_mcc(&cfg, runs, cli.force),
        Command::Report => cmd_report(&cfg, cli.force),
        Command::Plot { attribute, runs } => cmd_plot(&cfg, runs, *attribute, cli.force),
    }
}

/// Create `dir`, refusing if it already exists unless `force`, in which case
/// it is emptied first.
fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            return Err(Error::AlreadyExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const SIDECAR_FILE: &str = "spec.json";

/// Generate, split, and write the dataset.
pub fn cmd_gen_data(cfg: &ExperimentConfig, force: bool) -> Result<String> {
    let dir = cfg.layout().data();
    let splits = make_splits(&cfg.data)?;
    fresh_dir(&dir, force)?;
    for (name, ds) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        data::save(ds, &dir.join(format!("{name}.csv")))?;
    }
    write_json(
        &dir.join(SIDECAR_FILE),
        &Sidecar {
            spec: cfg.data.spec.clone(),
            seed: cfg.data.seed,
            n_samples: cfg.data.n_samples,
            fractions: cfg.data.fractions,
        },
    )?;
    Ok(format!(
        "wrote {} (train {}, val {}, test {})\n",
        dir.display(),
        splits.train.len(),
        splits.val.len(),
        splits.test.len()
    ))
}

/// The dataset `gen-data` writes, built in memory.
pub fn make_splits(d: &DataConfig) -> Result<Splits> {
    let ds = data::generate(&d.spec, d.n_samples, &mut Rng::stream(d.seed, Stream::Data))?;
    data::split(&ds, d.fractions, &mut Rng::stream(d.seed, Stream::Split))
}

/// Load the dataset written by `gen-data`, checking it matches the config.
pub fn load_splits(cfg: &ExperimentConfig) -> Result<(Splits, Sidecar)> {
    let dir = cfg.layout().data();
    let sidecar: Sidecar = read_json(&dir.join(SIDECAR_FILE))?;
    if sidecar.spec != cfg.data.spec || sidecar.fractions != cfg.data.fractions || sidecar.n_samples != cfg.data.n_samples {
        return Err(Error::config(
            "data",
            format!("{} was generated from a different data config; rerun gen-data", dir.display()),
        ));
    }
    let load = |name: &str| data::load(&dir.join(format!("{name}.csv")));
    Ok((
        Splits {
            train: load("train")?,
            val: load("val")?,
            test: load("test")?,
        },
        sidecar,
    ))
}

#[derive(Serialize)]
struct HashInput<'a> {
    data: &'a Sidecar,
    mode: Mode,
    train: &'a TrainConfig,
    eval: &'a EvalConfig,
}

/// Train all configured modes and seeds; each run writes its own directory.
/// A numerical abort leaves an `aborted` manifest and exits with code 3 once
/// the remaining runs finish.
pub fn cmd_train(cfg: &ExperimentConfig, jobs: usize, force: bool) -> Result<String> {
    let (splits, sidecar) = load_splits(cfg)?;
    let layout = cfg.layout();
    let tasks: Vec<(Mode, u64)> = cfg
        .modes
        .iter()
        .flat_map(|&m| cfg.train.seeds.iter().map(move |&s| (m, s)))
        .collect();
    for &(m, s) in &tasks {
        let dir = layout.run(&train::run_dir_name(m, s));
        if dir.exists() && !force {
            return Err(Error::AlreadyExists(dir));
        }
    }
    for &(m, s) in &tasks {
        let dir = layout.run(&train::run_dir_name(m, s));
        fresh_dir(&dir, true)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<Option<train::RunResult>>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mode, seed)| {
                let tc = cfg.train_config(mode);
                let hash = train::config_hash(&HashInput {
                    data: &sidecar,
                    mode,
                    train: &tc,
                    eval: &cfg.eval,
                })?;
                let dir = layout.run(&train::run_dir_name(mode, seed));
                match train::train_run(&tc, &splits, seed) {
                    Ok(run) => {
                        train::write_run(&run, &splits.test, &tc, &hash, &dir)?;
                        Ok(Some(run))
                    }
                    Err(e) => {
                        train::write_aborted(mode, seed, &hash, &e, &dir)?;
                        Err(e)
                    }
                }
            })
            .collect()
    });

    let mut out = String::new();
    let mut first_err = None;
    let mut done: Vec<train::RunResult> = Vec::new();
    for (&(mode, seed), r) in tasks.iter().zip(outcomes) {
        match r {
            Ok(Some(run)) => {
                let _ = writeln!(
                    out,
                    "{}: best epoch {}, test AUROC {:.4}, delta {:.4}",
                    train::run_dir_name(mode, seed),
                    run.best_epoch,
                    run.test_metrics.auroc,
                    run.test_metrics.delta
                );
                done.push(run);
            }
            Ok(None) => {}
            Err(e) => {
                let _ = writeln!(out, "{}: aborted: {e}", train::run_dir_name(mode, seed));
                first_err.get_or_insert(e);
            }
        }
    }
    for &mode in &cfg.modes {
        let runs: Vec<&train::RunResult> = done.iter().filter(|r| r.mode == mode).collect();
        if runs.is_empty() {
            continue;
        }
        let vals: Vec<f64> = runs.iter().map(|r| r.val_auroc).collect();
        let keep: Vec<&train::RunResult> = match cfg.train.top_m {
            Some(m) => train::top_m(&vals, m).into_iter().map(|i| runs[i]).collect(),
            None => runs,
        };
        let agg = train::aggregate(mode, &keep)?;
        write_json(&layout.runs().join(format!("aggregate-{}.json", mode.name())), &agg)?;
    }
    match first_err {
        Some(e) => {
            eprint!("{out}");
            Err(e)
        }
        None => Ok(out),
    }
}

/// A completed run directory.
#[derive(Clone, Debug)]
pub struct RunRef {
    pub name: String,
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

/// Completed runs under `runs/`, ordered by mode then seed.
pub fn completed_runs(layout: &Layout) -> Result<Vec<RunRef>> {
    let root = layout.runs();
    if !root.is_dir() {
        return Err(Error::MissingArtifact(root));
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(&root).map_err(|e| Error::io(&root, e))? {
        let entry = entry.map_err(|e| Error::io(&root, e))?;
        let dir = entry.path();
        let manifest_path = dir.join("manifest.json");
        if !dir.is_dir() || !manifest_path.exists() {
            continue;
        }
        let manifest: RunManifest = read_json(&manifest_path)?;
        if manifest.status == RunStatus::Complete {
            out.push(RunRef {
                name: entry.file_name().to_string_lossy().into_owned(),
                dir,
                manifest,
            });
        }
    }
    out.sort_by(|a, b| {
        (a.manifest.mode, a.manifest.seed, &a.name).cmp(&(b.manifest.mode, b.manifest.seed, &b.name))
    });
    Ok(out)
}

/// Named runs, or every completed run when `names` is empty.
pub fn select_runs(layout: &Layout, names: &[String]) -> Result<Vec<RunRef>> {
    if names.is_empty() {
        let all = completed_runs(layout)?;
        if all.is_empty() {
            return Err(Error::MissingArtifact(layout.runs()));
        }
        return Ok(all);
    }
    names
        .iter()
        .map(|n| {
            let dir = layout.run(n);
            let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
            if manifest.status != RunStatus::Complete {
                return Err(Error::contract(format!("run {n} did not complete")));
            }
            Ok(RunRef {
                name: n.clone(),
                dir,
                manifest,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct EvalFile<'a> {
    run: &'a str,
    seed: u64,
    mode: Mode,
    /// Whether the recomputed metrics equal those stored at training time.
    matches_training: bool,
    test: &'a MetricsReport,
}

/// Recompute test metrics from each checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, names: &[String], force: bool) -> Result<String> {
    let layout = cfg.layout();
    let runs = select_runs(&layout, names)?;
    let (splits, _) = load_splits(cfg)?;
    let dir = layout.eval();
    fresh_dir(&dir, force)?;
    let mut out = String::new();
    for r in &runs {
        let (params, _) = model::load_checkpoint(&r.dir, train::CHECKPOINT_STEM)?;
        let report = metrics::evaluate(&params, &splits.test, &cfg.eval)?;
        let stored: Option<RunMetricsFile> = read_json(&r.dir.join("metrics.json")).ok();
        let matches = stored.is_some_and(|s| s.test == report);
        write_json(
            &dir.join(format!("{}.json", r.name)),
            &EvalFile {
                run: &r.name,
                seed: r.manifest.seed,
                mode: r.manifest.mode,
                matches_training: matches,
                test: &report,
            },
        )?;
        let _ = writeln!(
            out,
            "{}: AUROC {:.4}, delta {:.4}, probe {}{}",
            r.name,
            report.auroc,
            report.delta,
            report.group_probe_acc.map_or("-".into(), |a| format!("{a:.4}")),
            if matches { "" } else { " (differs from training metrics)" }
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct MccFile<'a> {
    runs: &'a [String],
    n_eval: usize,
    latent_dim: usize,
    strong: &'a [Vec<f64>],
    weak: &'a [Vec<f64>],
    mean_strong: f64,
    mean_weak: f64,
}

fn matrix_csv(names: &[String], m: &[Vec<f64>]) -> String {
    let mut s = String::from("run");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (n, row) in names.iter().zip(m) {
        s.push_str(n);
        for v in row {
            let _ = write!(s, ",{}", data::fmt_real(*v));
        }
        s.push('\n');
    }
    s
}

/// Pairwise strong and weak MCC between runs' φ outputs on the shared
/// evaluation rows of the test split.
pub fn cmd_mcc(cfg: &ExperimentConfig, names: &[String], force: bool) -> Result<String> {
    let layout = cfg.layout();
    let runs = select_runs(&layout, names)?;
    let sets: Vec<(String, Vec<RunRef>)> = if names.is_empty() {
        let mut by_mode: BTreeMap<Mode, Vec<RunRef>> = BTreeMap::new();
        for r in runs {
            by_mode.entry(r.manifest.mode).or_default().push(r);
        }
        by_mode.into_iter().map(|(m, v)| (m.name().to_string(), v)).filter(|(_, v)| v.len() >= 2).collect()
    } else {
        vec![("selected".to_string(), runs)]
    };
    if sets.is_empty() || sets.iter().any(|(_, v)| v.len() < 2) {
        return Err(Error::contract("MCC needs at least 2 completed runs of one mode"));
    }
    let (splits, _) = load_splits(cfg)?;
    let idx = metrics::eval_indices(&splits.test, cfg.eval.n_eval, cfg.eval.eval_seed);
    let x = splits.test.x_matrix(&idx);
    let root = layout.mcc();
    fresh_dir(&root, force)?;
    let mut out = String::new();
    for (set, runs) in &sets {
        let mut z: Vec<Matrix> = Vec::new();
        for r in runs {
            let (params, _) = model::load_checkpoint(&r.dir, train::CHECKPOINT_STEM)?;
            z.push(params.embed(&x)?);
        }
        let n0 = z[0].cols();
        if let Some((r, e)) = runs.iter().zip(&z).find(|(_, e)| e.cols() != n0) {
            return Err(Error::contract(format!(
                "representation dims differ: {} has N={n0}, {} has N={}",
                runs[0].name,
                r.name,
                e.cols()
            )));
        }
        let p = metrics::pairwise_mcc(&z)?;
        let run_names: Vec<String> = runs.iter().map(|r| r.name.clone()).collect();
        let dir = root.join(set);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_text(&dir.join("mcc_strong.csv"), &matrix_csv(&run_names, &p.strong))?;
        write_text(&dir.join("mcc_weak.csv"), &matrix_csv(&run_names, &p.weak))?;
        write_json(
            &dir.join("mcc.json"),
            &MccFile {
                runs: &run_names,
                n_eval: idx.len(),
                latent_dim: n0,
                strong: &p.strong,
                weak: &p.weak,
                mean_strong: p.mean_strong,
                mean_weak: p.mean_weak,
            },
        )?;
        let _ = writeln!(
            out,
            "{set}: {} runs, mean strong MCC {:.4}, mean weak MCC {:.4}",
            runs.len(),
            p.mean_strong,
            p.mean_weak
        );
    }
    Ok(out)
}

fn pm(a: &Aggregate, key: &str) -> String {
    a.metrics.get(key).map_or("-".into(), |m| format!("{:.4} ± {:.4}", m.mean, m.std))
}

fn csv_pair(a: &Aggregate, key: &str) -> String {
    a.metrics
        .get(key)
        .map_or(",".into(), |m| format!("{},{}", data::fmt_real(m.mean), data::fmt_real(m.std)))
}

/// Aggregate completed runs per mode into Markdown, CSV, and JSON tables.
pub fn cmd_report(cfg: &ExperimentConfig, force: bool) -> Result<String> {
    let layout = cfg.layout();
    let runs = completed_runs(&layout)?;
    let mut by_mode: BTreeMap<Mode, Vec<(u64, BTreeMap<String, f64>, f64)>> = BTreeMap::new();
    for r in &runs {
        let m: RunMetricsFile = read_json(&r.dir.join("metrics.json"))?;
        by_mode
            .entry(m.mode)
            .or_default()
            .push((m.seed, train::scalars(&m.test, m.val_auroc), m.val_auroc));
    }
    if by_mode.is_empty() {
        return Err(Error::MissingArtifact(layout.runs()));
    }
    let mut aggs = Vec::new();
    for (mode, rows) in by_mode {
        let keep: Vec<usize> = match cfg.train.top_m {
            Some(m) => train::top_m(&rows.iter().map(|r| r.2).collect::<Vec<_>>(), m),
            None => (0..rows.len()).collect(),
        };
        let chosen: Vec<(u64, BTreeMap<String, f64>)> = keep.iter().map(|&i| (rows[i].0, rows[i].1.clone())).collect();
        aggs.push(train::aggregate_rows(mode, &chosen)?);
    }

    let mut md = String::from("| Mode | Runs | AUROC | δ |\n|---|---|---|---|\n");
    for a in &aggs {
        let flag = if a.degenerate { " (single run, std 0)" } else { "" };
        let _ = writeln!(md, "| {}{flag} | {} | {} | {} |", a.mode.name(), a.n_runs, pm(a, "auroc"), pm(a, "delta"));
    }
    md.push_str("\n| Mode | Weak MCC (content) | Weak MCC (style) | Group probe |\n|---|---|---|---|\n");
    for a in &aggs {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            a.mode.name(),
            pm(a, "mcc_weak"),
            pm(a, "mcc_weak_style"),
            pm(a, "group_probe_acc")
        );
    }
    let mut csv = String::from("mode,n_runs,degenerate,auroc_mean,auroc_std,delta_mean,delta_std\n");
    for a in &aggs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            a.mode.name(),
            a.n_runs,
            a.degenerate,
            csv_pair(a, "auroc"),
            csv_pair(a, "delta")
        );
    }
    let dir = layout.report();
    fresh_dir(&dir, force)?;
    write_text(&dir.join("report.md"), &md)?;
    write_text(&dir.join("report.csv"), &csv)?;
    write_json(&dir.join("report.json"), &aggs)?;
    Ok(md)
}

/// PC1 density SVGs per class and per group for each run.
pub fn cmd_plot(cfg: &ExperimentConfig, names: &[String], attribute: Option<Attribute>, force: bool) -> Result<String> {
    let layout = cfg.layout();
    let runs = select_runs(&layout, names)?;
    let mut out = String::new();
    let mut work = Vec::new();
    for r in &runs {
        let emb = metrics::load_embeddings(&r.dir.join(train::EMBEDDINGS_FILE))?;
        let plots = plot::plot_embeddings(&emb.z, &emb.labels, &emb.groups, cfg.plot.bandwidth, cfg.plot.kde_grid, &r.name)?;
        let dir = layout.plots().join(&r.name);
        if dir.exists() && !force {
            return Err(Error::AlreadyExists(dir));
        }
        work.push((r, dir, plots));
    }
    for (r, dir, plots) in work {
        fresh_dir(&dir, true)?;
        if attribute.is_none_or(|a| a == Attribute::Class) {
            write_text(&dir.join("class.svg"), &plots.class_svg)?;
        }
        if attribute.is_none_or(|a| a == Attribute::Group) {
            write_text(&dir.join("group.svg"), &plots.group_svg)?;
        }
        write_json(&dir.join("plot.json"), &plots.sidecar)?;
        let _ = writeln!(
            out,
            "{}: max group L1 gap {:.4}, max class L1 gap {:.4}",
            r.name, plots.sidecar.max_group_l1_gap, plots.sidecar.max_class_l1_gap
        );
    }
    Ok(out)
}
