//! Acceptance criteria 1-9. Each test writes one `criterion N: PASS|FAIL`
//! line to stdout (uncaptured) and then asserts.

use std::io::Write;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use crl_core::cli::ExperimentConfig;
use crl_core::data::{generate, split, Fractions, GenerativeSpec, SplitTag, Splits};
use crl_core::losses::{check_total_gradients, BatchMeta, LossConfig, Pairing};
use crl_core::metrics::{auroc, eval_indices, group_probe, mcc_strong, pca_pc1, EvalConfig};
use crl_core::model::{init, Architecture};
use crl_core::numerics::{Matrix, Rng, Stream};
use crl_core::sampler::{draw_grouped_batch, partition_groups, SamplerConfig};
use crl_core::train::{self, cross_seed_mcc, mean_std, Experiment, Mode, StepHook, TrainConfig};

mod common;
use common::{brute_force_mcc, jacobi_eigen, naive_covariance, pair_count_auroc, random_matrix};

fn verdict(n: usize, title: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n} ({title}): {word}: {detail}");
    let _ = out.flush();
    assert!(pass, "criterion {n} ({title}) failed: {detail}");
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn mins(d: Duration) -> String {
    format!("{:.1} min", d.as_secs_f64() / 60.0)
}

struct Trained {
    splits: Splits,
    invariant: Experiment,
    baseline: Experiment,
    elapsed: Duration,
}

fn train_both(cfg: &ExperimentConfig, splits: Splits) -> Trained {
    let start = Instant::now();
    let run = |mode| train::run_experiment(&cfg.train_config(mode), &splits, jobs()).unwrap();
    let invariant = run(Mode::Invariant);
    let baseline = run(Mode::Baseline);
    Trained {
        splits,
        invariant,
        baseline,
        elapsed: start.elapsed(),
    }
}

/// Both modes on the built-in default configuration.
fn default_runs() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let splits = crl_core::cli::make_splits(&cfg.data).unwrap();
        train_both(&cfg, splits)
    })
}

fn per_seed(e: &Experiment, f: impl Fn(&crl_core::metrics::MetricsReport) -> f64) -> Vec<f64> {
    e.runs.iter().map(|r| f(&r.test_metrics)).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = Rng::new(101);
    let mut worst = 0.0f64;
    let mut failures = 0;
    for case in 0..100u64 {
        let spec = GenerativeSpec::default();
        let ds = generate(&spec, 200, &mut Rng::stream(case, Stream::Data)).unwrap();
        let cells = partition_groups(&ds);
        let sampler = SamplerConfig {
            samples_per_iteration: 2 + rng.index(3),
            ..SamplerConfig::default()
        };
        let batch = draw_grouped_batch(&sampler, &cells, 4 + rng.index(8), &mut Rng::stream(case, Stream::Sampling)).unwrap();
        let pairing = if case % 2 == 0 { batch.pairing } else { Pairing::AllPairs };
        let meta = BatchMeta {
            labels: batch.labels,
            groups: batch.groups,
            pairing,
        };
        let x = ds.x_matrix(&batch.rows);
        let arch = Architecture(vec![ds.input_dim(), 2 + rng.index(15), 2 + rng.index(15), 2 + rng.index(7)]);
        let model = init(&arch, &mut Rng::stream(case, Stream::Init)).unwrap();
        let loss = LossConfig {
            uniformity_weight: rng.uniform_range(0.1, 3.0),
            temperature: rng.uniform_range(0.2, 3.0),
        };
        let r = check_total_gradients(&model, &x, &meta, &loss, 1e-5, 1e-5).unwrap();
        worst = worst.max(r.max_rel_error);
        failures += usize::from(!r.passed);
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        "gradient correctness",
        failures == 0 && worst <= 1e-5 && elapsed < Duration::from_secs(60),
        &format!("100 instances, max relative error {worst:.2e} (tol 1e-5), {failures} failing, {:.1} s", elapsed.as_secs_f64()),
    );
}

#[derive(Default)]
struct Audit {
    steps: std::sync::atomic::AtomicUsize,
    violations: std::sync::Mutex<Vec<(usize, usize, f64, f64)>>,
}

impl StepHook for Audit {
    fn routing(&self, epoch: usize, batch: usize, bce_on_phi: f64, inv_on_psi: f64) {
        self.steps.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        if bce_on_phi != 0.0 || inv_on_psi != 0.0 {
            self.violations.lock().unwrap().push((epoch, batch, bce_on_phi, inv_on_psi));
        }
    }
}

#[test]
fn criterion_2_routing_holds_on_every_step() {
    let ds = generate(&GenerativeSpec::default(), 1500, &mut Rng::stream(0, Stream::Data)).unwrap();
    let splits = split(&ds, Fractions::default(), &mut Rng::stream(0, Stream::Split)).unwrap();
    let cfg = TrainConfig {
        mode: Mode::Invariant,
        epochs: 2,
        eval: EvalConfig {
            n_eval: 200,
            ..EvalConfig::default()
        },
        ..TrainConfig::default()
    };
    let audit = Audit::default();
    let run = train::train_run_with(&cfg, &splits, 0, &audit).unwrap();
    let seen = audit.steps.load(std::sync::atomic::Ordering::Relaxed);
    let violations = audit.violations.lock().unwrap().len();
    verdict(
        2,
        "gradient routing",
        seen == run.steps && run.routing_checks == run.steps && seen > 0 && violations == 0,
        &format!("{seen} of {} steps audited, {violations} with nonzero cross-gradients", run.steps),
    );
}

#[test]
fn criterion_3_cross_seed_identifiability() {
    let t = default_runs();
    let models: Vec<_> = t.invariant.runs.iter().map(|r| &r.best_checkpoint).collect();
    let p = cross_seed_mcc(&models, &t.splits.test, 1000, EvalConfig::default().eval_seed).unwrap();
    verdict(
        3,
        "cross-seed identifiability",
        p.mean_strong >= 0.95 && t.elapsed < Duration::from_secs(15 * 60),
        &format!(
            "mean pairwise strong MCC {:.4} (>= 0.95) over {} seeds, train size {}, both modes trained in {}",
            p.mean_strong,
            models.len(),
            t.splits.train.len(),
            mins(t.elapsed)
        ),
    );
}

#[test]
fn criterion_4_content_recovery() {
    let t = default_runs();
    let content = mean(&per_seed(&t.invariant, |m| m.mcc_weak.unwrap()));
    let style_inv = mean(&per_seed(&t.invariant, |m| m.mcc_weak_style.unwrap()));
    let style_base = mean(&per_seed(&t.baseline, |m| m.mcc_weak_style.unwrap()));
    verdict(
        4,
        "content recovery",
        content >= 0.80 && style_base - style_inv >= 0.05,
        &format!(
            "invariant content weak MCC {content:.4} (>= 0.80); style weak MCC baseline {style_base:.4} vs invariant {style_inv:.4} (gap >= 0.05)"
        ),
    );
}

#[test]
fn criterion_5_invariance_probe() {
    let t = default_runs();
    let test = &t.splits.test;
    let idx = eval_indices(test, 1000, EvalConfig::default().eval_seed);
    let raw = group_probe(&test.x_matrix(&idx), &test.groups(&idx)).unwrap();
    let chance = t.invariant.runs[0].test_metrics.group_probe_chance.unwrap();
    let inv = mean(&per_seed(&t.invariant, |m| m.group_probe_acc.unwrap()));
    let base = mean(&per_seed(&t.baseline, |m| m.group_probe_acc.unwrap()));
    verdict(
        5,
        "invariance probe",
        raw >= 0.9 && inv <= chance + 0.05 && base >= chance + 0.15,
        &format!(
            "raw-x probe {raw:.4} (>= 0.9); chance {chance:.4}; invariant {inv:.4} (<= {:.4}); baseline {base:.4} (>= {:.4})",
            chance + 0.05,
            chance + 0.15
        ),
    );
}

#[test]
fn criterion_6_separation_direction() {
    let t = default_runs();
    let inv = per_seed(&t.invariant, |m| m.delta);
    let base = per_seed(&t.baseline, |m| m.delta);
    let wins = inv.iter().zip(&base).filter(|(a, b)| a > b).count();
    let (si, sb) = (mean_std(&inv).std, mean_std(&base).std);
    verdict(
        6,
        "separation direction",
        wins >= 4 && si <= sb,
        &format!(
            "delta invariant {inv:.3?} vs baseline {base:.3?}: invariant higher in {wins} of {} seeds (>= 4); seed std {si:.4} vs {sb:.4}",
            inv.len()
        ),
    );
}

/// Three-group data: train and validate on groups 0 and 1, test on group 2
/// whose style mean is extrapolated beyond both. Half the samples have their
/// group tied to the label (`y mod 3`, so only groups 0 and 1), which makes
/// style a shortcut in training that no longer holds on group 2.
fn held_out_shift() -> (GenerativeSpec, Splits) {
    let base = GenerativeSpec::default();
    let m = base.group_style_means[1][0];
    let spec = GenerativeSpec {
        groups: 3,
        group_style_means: vec![vec![-m; 2], vec![m; 2], vec![3.0 * m; 2]],
        group_style_scales: vec![base.group_style_scales[0].clone(); 3],
        group_label_correlation: 0.5,
        ..base
    };
    let ds = generate(&spec, 12_500, &mut Rng::stream(0, Stream::Data)).unwrap();
    let seen = split(
        &ds.restrict_groups(&[0, 1], SplitTag::Full).unwrap(),
        Fractions::default(),
        &mut Rng::stream(0, Stream::Split),
    )
    .unwrap();
    let shifted = Splits {
        test: ds.restrict_groups(&[2], SplitTag::Test).unwrap(),
        ..seen
    };
    (spec, shifted)
}

#[test]
fn criterion_7_generalisation_direction() {
    let (spec, splits) = held_out_shift();
    let t = train_both(&ExperimentConfig::default(), splits);
    let inv = per_seed(&t.invariant, |m| m.auroc);
    let base = per_seed(&t.baseline, |m| m.auroc);
    let wins = inv.iter().zip(&base).filter(|(a, b)| a >= b).count();
    verdict(
        7,
        "generalisation direction",
        wins >= 4,
        &format!(
            "held-out group with style mean {:?}: AUROC invariant {inv:.3?} vs baseline {base:.3?}, invariant >= baseline in {wins} of {} seeds (>= 4)",
            spec.group_style_means[2],
            inv.len()
        ),
    );
}

#[test]
fn criterion_8_oracle_equivalence() {
    let mut rng = Rng::new(808);
    let mut auroc_bad = 0;
    for _ in 0..1000 {
        let n = 2 + rng.index(60);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.index(2) as u8).collect();
        labels[0] = 0;
        labels[1] = 1;
        let coarse = rng.index(2) == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| if coarse { rng.index(5) as f64 } else { rng.normal() })
            .collect();
        if auroc(&scores, &labels).unwrap() != pair_count_auroc(&scores, &labels) {
            auroc_bad += 1;
        }
    }

    let mut mcc_worst = 0.0f64;
    for _ in 0..100 {
        let (n, m) = (1 + rng.index(4), 1 + rng.index(4));
        let a = random_matrix(&mut rng, 40, n);
        let b = a
            .matmul(&random_matrix(&mut rng, n, m))
            .unwrap()
            .add(&random_matrix(&mut rng, 40, m).scale(0.7))
            .unwrap();
        mcc_worst = mcc_worst.max((mcc_strong(&a, &b).unwrap() - brute_force_mcc(&a, &b)).abs());
    }

    let mut pca_worst = 0.0f64;
    for _ in 0..100 {
        let d = 2 + rng.index(4);
        let z: Matrix = random_matrix(&mut rng, 30, d).matmul(&random_matrix(&mut rng, d, d)).unwrap();
        let pc = pca_pc1(&z).unwrap();
        let (vals, vecs) = jacobi_eigen(&naive_covariance(&z));
        let top = (0..d).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let dot: f64 = pc.direction.iter().zip(&vecs[top]).map(|(a, b)| a * b).sum();
        let eig_err = (pc.explained_variance - vals[top]).abs() / vals[top].max(1.0);
        pca_worst = pca_worst.max(eig_err).max((dot.abs() - 1.0).abs());
    }

    verdict(
        8,
        "oracle equivalence",
        auroc_bad == 0 && mcc_worst < 1e-12 && pca_worst <= 1e-8,
        &format!(
            "AUROC {auroc_bad} of 1000 differ from pair counting; strong MCC max |diff| {mcc_worst:.1e} vs N! matching (100 cases); PC1 max error {pca_worst:.1e} vs Jacobi (100 cases, tol 1e-8)"
        ),
    );
}

#[test]
fn criterion_9_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let config = r#"{"data": {"n_samples": 1200}, "train": {"epochs": 3, "seeds": [7]}, "eval": {"n_eval": 200}}"#;
    std::fs::write(dir.join("config.json"), config).unwrap();
    let crl = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_crl"))
            .current_dir(dir)
            .env("CRL_OUTPUT_DIR", "out")
            .args(["--config", "config.json", "--jobs", "2"])
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "crl {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    crl(&["gen-data"]);
    let files = ["metrics.json", "checkpoint.json", "checkpoint.bin", "embeddings.csv"];
    let snapshot = || -> Vec<Vec<u8>> {
        ["invariant-seed7", "baseline-seed7"]
            .iter()
            .flat_map(|run| files.iter().map(move |f| dir.join("out/runs").join(run).join(f)))
            .map(|p| std::fs::read(p).unwrap())
            .collect()
    };
    crl(&["train"]);
    let first = snapshot();
    crl(&["train", "--force"]);
    let second = snapshot();
    let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
    verdict(
        9,
        "determinism",
        differing == 0,
        &format!("{} artifacts compared across two train invocations, {differing} differ", first.len()),
    );
}
