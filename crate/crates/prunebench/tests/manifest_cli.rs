//! Manifest parsing/hashing and the command-line surface.

use std::process::Command;

use prunebench::manifest::{ExperimentManifest, Pipeline};

const MANIFEST: &str = r#"
dataset = "synthetic:classes=4,train=64,test=32,size=6,seed=3"
model = "tiny"
pipeline = "prune-finetune"
seeds = [1, 2]

[scratch]
epochs = 4
init_lr = 0.1
final_lr = 0.01
kind = "step"

[prune]
ratio = 0.5
epoch = 2
criterion = "l1"
criterion_seed = 0

[ft]
init_lr = 0.1
epochs = 2
kind = "step"
"#;

#[test]
fn manifest_roundtrip_and_hash_stability() {
    let m = ExperimentManifest::parse(MANIFEST).unwrap();
    assert_eq!(m.pipeline, Pipeline::PruneFinetune);
    assert_eq!(m.total_epochs(), 4);
    assert_eq!(m.prune_epoch(), 2);
    assert_eq!(m.finetune_epochs(), 2);

    // The hash is a function of canonical content, not formatting.
    let reordered = MANIFEST.replace("seeds = [1, 2]\n", "");
    let reordered = format!("seeds = [1, 2]\n{reordered}");
    let m2 = ExperimentManifest::parse(&reordered).unwrap();
    assert_eq!(m.hash().unwrap(), m2.hash().unwrap());

    // Any semantic change changes the hash.
    let mut m3 = m.clone();
    m3.seeds = vec![1, 2, 3];
    assert_ne!(m.hash().unwrap(), m3.hash().unwrap());
}

#[test]
fn scratch_manifest_defaults() {
    let mut m = ExperimentManifest::parse(MANIFEST).unwrap();
    m.pipeline = Pipeline::Scratch;
    m.prune = None;
    m.ft = None;
    m.validate().unwrap();
    assert_eq!(m.prune_epoch(), 0);
    // A scratch run's "finetune" span is its whole schedule.
    assert_eq!(m.finetune_epochs(), 4);
    assert_eq!(m.total_epochs(), 4);
}

#[test]
fn invalid_manifests_are_rejected() {
    // prune-finetune without a prune section.
    let mut m = ExperimentManifest::parse(MANIFEST).unwrap();
    m.prune = None;
    assert!(m.validate().is_err());
    // Prune epoch beyond the scratch schedule.
    let mut m = ExperimentManifest::parse(MANIFEST).unwrap();
    m.prune.as_mut().unwrap().epoch = 99;
    assert!(m.validate().is_err());
    // No seeds.
    let mut m = ExperimentManifest::parse(MANIFEST).unwrap();
    m.seeds.clear();
    assert!(m.validate().is_err());
}

// ---------- CLI ----------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prunebench"))
}

#[test]
fn plan_subcommand_prints_reference_vector() {
    let out = cli()
        .args(["plan", "--epochs", "90", "--init-lr", "1e-1", "--final-lr", "1e-5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("0:1e-1,30:1e-2,60:1e-3,75:1e-4,83:1e-5"),
        "got: {text}"
    );
}

#[test]
fn classify_self_prints_strictest_setup() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.manifest");
    std::fs::write(&path, MANIFEST).unwrap();
    let out = cli()
        .args(["classify"])
        .arg(&path)
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("S4.2 [SX-A] [SX-B]"), "got: {text}");
}

#[test]
fn flops_resnet50_prune_vector_speedup() {
    let out = cli()
        .args([
            "flops",
            "--model",
            "resnet50-imagenet",
            "--classes",
            "1000",
            "--prune-vector",
            "0,0.6,0.6,0.6,0.21,0",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let k: f64 = text
        .split("speedup ")
        .nth(1)
        .and_then(|s| s.split('x').next())
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| panic!("no speedup in: {text}"));
    assert!((k - 2.31).abs() / 2.31 <= 0.05, "speedup {k}");
}

#[test]
fn unknown_flag_exits_with_usage_code_2() {
    let out = cli().args(["zoo", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn module_error_exits_with_code_1() {
    let out = cli()
        .args(["plan", "--epochs", "2", "--init-lr", "1e-1", "--final-lr", "1e-5"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn scratch_subcommand_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.manifest");
    let scratch = MANIFEST
        .replace("prune-finetune", "scratch")
        .replace("seeds = [1, 2]", "seeds = [1]");
    // Strip prune/ft sections.
    let scratch = scratch.split("[prune]").next().unwrap().to_string();
    std::fs::write(&path, &scratch).unwrap();
    let work = dir.path().join("work");
    let out = cli()
        .args(["scratch", "--manifest"])
        .arg(&path)
        .args(["--workdir"])
        .arg(&work)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(work.join("results.tsv").exists());
}
