//! End-to-end runs of the `crl` binary in scratch directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crl_core::cli::OUTPUT_DIR_ENV;
use crl_core::train::{RunManifest, RunStatus};

const SMOKE: &str = r#"{
  "data": {"n_samples": 600},
  "train": {"epochs": 2, "seeds": [0, 1], "hidden": [16]},
  "eval": {"n_eval": 100},
  "output_dir": "out"
}"#;

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("config.json"), config).unwrap();
        Sandbox { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn crl(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_crl"))
            .current_dir(self.dir.path())
            .env_remove(OUTPUT_DIR_ENV)
            .args(["--config", "config.json", "--jobs", "2"])
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.crl(args);
        assert_eq!(code(&out), 0, "crl {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn trained() -> Sandbox {
    let sb = Sandbox::new(SMOKE);
    sb.ok(&["gen-data"]);
    sb.ok(&["train"]);
    sb
}

#[test]
fn gen_data_writes_deterministic_splits() {
    let a = Sandbox::new(SMOKE);
    let b = Sandbox::new(SMOKE);
    a.ok(&["gen-data"]);
    b.ok(&["gen-data"]);
    for f in ["train.csv", "val.csv", "test.csv", "spec.json"] {
        let rel = format!("out/data/{f}");
        assert_eq!(read(&a.path(&rel)), read(&b.path(&rel)), "{f} differs");
    }
    let header = String::from_utf8(read(&a.path("out/data/train.csv"))).unwrap();
    assert!(header.starts_with("x0,"));
}

#[test]
fn gen_data_seed_flag_changes_the_data() {
    let sb = Sandbox::new(SMOKE);
    sb.ok(&["gen-data"]);
    let first = read(&sb.path("out/data/train.csv"));
    sb.ok(&["gen-data", "--seed", "9", "--force"]);
    assert_ne!(first, read(&sb.path("out/data/train.csv")));
}

#[test]
fn invalid_fractions_exit_with_config_error() {
    let sb = Sandbox::new(r#"{"data": {"fractions": {"train": 0.5, "val": 0.2, "test": 0.2}}}"#);
    let out = sb.crl(&["gen-data"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("fractions"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_named() {
    let sb = Sandbox::new(r#"{"train": {"epochs": 2}, "bogus": 1}"#);
    let out = sb.crl(&["gen-data"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn zero_jobs_is_a_config_error() {
    let sb = Sandbox::new(SMOKE);
    let out = sb.crl(&["gen-data", "--jobs", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_before_gen_data_reports_missing_artifact() {
    let sb = Sandbox::new(SMOKE);
    assert_eq!(code(&sb.crl(&["train"])), 4);
}

#[test]
fn smoke_train_writes_one_directory_per_mode_and_seed() {
    let sb = trained();
    for run in ["invariant-seed0", "invariant-seed1", "baseline-seed0", "baseline-seed1"] {
        let dir = sb.path(&format!("out/runs/{run}"));
        let manifest: RunManifest = serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap();
        assert_eq!(manifest.status, RunStatus::Complete);
        for a in &manifest.artifacts {
            assert!(dir.join(a).exists(), "{run}: missing {a}");
        }
    }
    assert!(sb.path("out/runs/aggregate-invariant.json").exists());
    assert!(sb.path("out/runs/aggregate-baseline.json").exists());

    let out = sb.crl(&["train"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("--force"));
}

#[test]
fn force_reproduces_identical_outputs() {
    let sb = trained();
    let files = [
        "out/runs/invariant-seed0/metrics.json",
        "out/runs/invariant-seed0/checkpoint.bin",
        "out/runs/baseline-seed1/checkpoint.json",
        "out/runs/baseline-seed1/embeddings.csv",
    ];
    let before: Vec<Vec<u8>> = files.iter().map(|f| read(&sb.path(f))).collect();
    sb.ok(&["train", "--force"]);
    for (f, b) in files.iter().zip(&before) {
        assert_eq!(&read(&sb.path(f)), b, "{f} changed");
    }
}

#[test]
fn nonfinite_training_aborts_with_diagnostics() {
    let sb = Sandbox::new(
        r#"{"data": {"n_samples": 600}, "train": {"epochs": 1, "seeds": [0], "hidden": [16], "lr_phi": 1e300, "lr_psi": 1e300}, "modes": ["invariant"], "eval": {"n_eval": 100}, "output_dir": "out"}"#,
    );
    sb.ok(&["gen-data"]);
    let out = sb.crl(&["train"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    let manifest: RunManifest =
        serde_json::from_slice(&read(&sb.path("out/runs/invariant-seed0/manifest.json"))).unwrap();
    assert_eq!(manifest.status, RunStatus::Aborted);
    assert!(manifest.diagnostics.unwrap().contains("non-finite"));
}

#[test]
fn eval_matches_training_metrics() {
    let sb = trained();
    let out = sb.ok(&["eval", "invariant-seed0"]);
    assert!(!out.contains("differs"), "{out}");
    let v: serde_json::Value = serde_json::from_slice(&read(&sb.path("out/eval/invariant-seed0.json"))).unwrap();
    assert_eq!(v["matches_training"], serde_json::Value::Bool(true));
}

#[test]
fn mcc_of_a_copied_checkpoint_is_one() {
    let sb = trained();
    let src = sb.path("out/runs/invariant-seed0");
    let dst = sb.path("out/runs/copy");
    fs::create_dir_all(&dst).unwrap();
    for e in fs::read_dir(&src).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dst.join(e.file_name())).unwrap();
    }
    sb.ok(&["mcc", "invariant-seed0", "copy"]);
    let v: serde_json::Value = serde_json::from_slice(&read(&sb.path("out/mcc/selected/mcc.json"))).unwrap();
    assert!((v["mean_strong"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!((v["mean_weak"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    sb.ok(&["mcc", "--force"]);
    assert!(sb.path("out/mcc/invariant/mcc_strong.csv").exists());
    assert!(sb.path("out/mcc/baseline/mcc_weak.csv").exists());
}

#[test]
fn mcc_rejects_mismatched_latent_dims() {
    let sb = trained();
    let other = Sandbox::new(&SMOKE.replace(r#""hidden": [16]"#, r#""hidden": [16], "latent_dim": 4"#));
    other.ok(&["gen-data"]);
    other.ok(&["train", "--seed", "0"]);
    let dst = sb.path("out/runs/narrow");
    fs::create_dir_all(&dst).unwrap();
    for e in fs::read_dir(other.path("out/runs/invariant-seed0")).unwrap() {
        let e = e.unwrap();
        fs::copy(e.path(), dst.join(e.file_name())).unwrap();
    }
    let out = sb.crl(&["mcc", "invariant-seed0", "narrow"]);
    assert_ne!(code(&out), 0);
    assert!(stderr(&out).contains("narrow"), "{}", stderr(&out));
}

#[test]
fn report_has_a_row_per_mode_and_flags_single_runs() {
    let sb = trained();
    let md = sb.ok(&["report"]);
    let rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| invariant") || l.starts_with("| baseline")).collect();
    assert_eq!(rows.len(), 4, "{md}");
    assert!(!md.contains("single run"));
    let csv = String::from_utf8(read(&sb.path("out/report/report.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let single = Sandbox::new(SMOKE);
    single.ok(&["gen-data"]);
    single.ok(&["train", "--seed", "3"]);
    assert!(single.ok(&["report"]).contains("single run, std 0"));
}

#[test]
fn plot_writes_parseable_svg() {
    let sb = trained();
    sb.ok(&["plot", "invariant-seed0"]);
    for f in ["class.svg", "group.svg"] {
        let text = String::from_utf8(read(&sb.path(&format!("out/plots/invariant-seed0/{f}")))).unwrap();
        let doc = roxmltree::Document::parse(&text).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(doc.descendants().filter(|n| n.has_tag_name("path")).count() >= 2, "{f}");
    }
    sb.ok(&["plot", "--attribute", "group", "--force", "baseline-seed0"]);
    assert!(sb.path("out/plots/baseline-seed0/group.svg").exists());
    assert!(!sb.path("out/plots/baseline-seed0/class.svg").exists());
}

#[test]
fn plot_without_embeddings_reports_missing_artifact() {
    let sb = trained();
    fs::remove_file(sb.path("out/runs/baseline-seed1/embeddings.csv")).unwrap();
    let out = sb.crl(&["plot", "baseline-seed1"]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn output_dir_env_overrides_config() {
    let sb = Sandbox::new(SMOKE);
    let out = Command::new(env!("CARGO_BIN_EXE_crl"))
        .current_dir(sb.dir.path())
        .env(OUTPUT_DIR_ENV, "elsewhere")
        .args(["--config", "config.json", "gen-data"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(sb.path("elsewhere/data/train.csv").exists());
    assert!(!sb.path("out").exists());
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let sb = Sandbox::new(SMOKE);
    assert_eq!(code(&sb.crl(&["frobnicate"])), 2);
}
