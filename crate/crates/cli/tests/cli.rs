use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const MANIFEST: &str = r#"schema_version = 1
seed = 5

[dataset]
manifest = "fleet/manifest.toml"

[features]
set_kinds = ["IV17"]

[deephpm]
layers = 2
neurons = 12
epochs = 100
fine_tune_epochs = 30

[gbt]
n_rounds = 20

[splits]
repeats = 2

[robustness]
noise_seeds = 2

[synth]
cells_per_scenario = 4
sample_period_s = 60.0
n_rpts = 60
"#;

fn battdiag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_battdiag"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = battdiag(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn assert_same_tree(a: &Path, b: &Path) {
    let (fa, fb) = (files(a), files(b));
    assert_eq!(fa, fb);
    for f in &fa {
        assert!(
            std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap(),
            "{} differs",
            f.display()
        );
    }
}

fn project() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.toml"), MANIFEST).unwrap();
    dir
}

#[test]
fn smoke_chain_is_deterministic() {
    let dir = project();
    let d = dir.path();
    let start = Instant::now();
    let m = ["--manifest", "exp.toml"];
    let run = |cmd: &str, out: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&m);
        args.extend_from_slice(&["--out", out]);
        args.extend_from_slice(extra);
        ok(d, &args);
    };
    run("synth-gen", "fleet", &[]);
    assert_eq!(
        std::fs::read_dir(d.join("fleet"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().is_dir())
            .count(),
        12
    );
    run("features-extract", "features", &[]);
    run("knees-label", "knees", &[]);
    run("train", "train", &[]);
    run("finetune", "finetune", &["--bundle", "train/bundle"]);
    run("evaluate", "evaluate", &["--bundle", "train/bundle"]);
    assert!(start.elapsed() < Duration::from_secs(600));

    let train = std::fs::read(d.join("train/bundle_metrics.csv")).unwrap();
    assert_eq!(std::fs::read(d.join("evaluate/bundle_metrics.csv")).unwrap(), train);
    let tuned = std::fs::read(d.join("finetune/bundle_metrics.csv")).unwrap();
    run("evaluate", "evaluate_tuned", &["--bundle", "finetune/bundle"]);
    assert_eq!(
        std::fs::read(d.join("evaluate_tuned/bundle_metrics.csv")).unwrap(),
        tuned
    );

    let freeze = std::fs::read_to_string(d.join("finetune/freeze_audit.toml")).unwrap();
    assert!(freeze.contains("violations = 0"));
    let knees = std::fs::read_to_string(d.join("knees/knees.csv")).unwrap();
    assert!(knees.starts_with("cell_id,b1,b2,phase_at_each_rpt\n"));
    assert_eq!(knees.lines().count(), 13);

    run("train", "train_again", &["--jobs", "2"]);
    assert_same_tree(&d.join("train"), &d.join("train_again"));
    run("finetune", "finetune_again", &["--bundle", "train/bundle"]);
    assert_same_tree(&d.join("finetune"), &d.join("finetune_again"));
    assert_eq!(
        std::fs::read(d.join("train/experiment.toml")).unwrap(),
        MANIFEST.as_bytes()
    );
}

#[test]
fn seed_flag_overrides_manifest() {
    let dir = project();
    let d = dir.path();
    ok(d, &["synth-gen", "--manifest", "exp.toml", "--out", "a"]);
    ok(d, &["synth-gen", "--manifest", "exp.toml", "--out", "b", "--seed", "6"]);
    let resolved = std::fs::read_to_string(d.join("b/resolved.toml")).unwrap();
    assert!(resolved.contains("seed = 6"));
    let la = std::fs::read(d.join("a/labels.csv")).unwrap();
    assert_ne!(la, std::fs::read(d.join("b/labels.csv")).unwrap());
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = project();
    let out = battdiag(
        dir.path(),
        &["train", "--manifest", "exp.toml", "--out", "o", "--bogus"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error_code=usage"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn invalid_manifest_rejected_before_side_effects() {
    let dir = project();
    let d = dir.path();
    std::fs::write(d.join("bad.toml"), MANIFEST.replace("repeats = 2", "repeats = 0")).unwrap();
    let out = battdiag(d, &["train", "--manifest", "bad.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error_code=invalid_config"));
    assert!(!d.join("o").exists());

    std::fs::write(d.join("typo.toml"), MANIFEST.replace("[splits]", "[splitz]")).unwrap();
    let out = battdiag(d, &["knees-label", "--manifest", "typo.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("o").exists());
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = project();
    let out = battdiag(dir.path(), &["knees-label", "--manifest", "exp.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error_code="));
}
