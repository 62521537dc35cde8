//! Dataset loading, checkpoints, pipeline orchestration, determinism.

mod common;

use std::io::Write;

use prunebench::manifest::{
    ExperimentManifest, FtSpec, Pipeline, PruneSpec, ScheduleSpec,
};
use prunebench::runner::{self, RunnerConfig, Verdict};
use prunebench::{checkpoint, data, report, zoo, Error};

const TINY_DATA: &str = "synthetic:classes=4,train=64,test=32,size=6,seed=3";

fn tiny_scratch(epochs: usize) -> ExperimentManifest {
    ExperimentManifest {
        dataset: TINY_DATA.into(),
        model: "tiny".into(),
        pipeline: Pipeline::Scratch,
        seeds: vec![1],
        scratch: ScheduleSpec {
            epochs,
            init_lr: 1e-1,
            final_lr: 1e-2,
            kind: "step".into(),
        },
        prune: None,
        ft: None,
        base_checkpoint_hash: None,
    }
}

fn tiny_prune_ft(ratio: f32, ft_lr: f64) -> ExperimentManifest {
    ExperimentManifest {
        dataset: TINY_DATA.into(),
        model: "tiny".into(),
        pipeline: Pipeline::PruneFinetune,
        seeds: vec![1],
        scratch: ScheduleSpec {
            epochs: 4,
            init_lr: 1e-1,
            final_lr: 1e-2,
            kind: "step".into(),
        },
        prune: Some(PruneSpec {
            ratio,
            epoch: 2,
            criterion: "l1".into(),
            criterion_seed: 0,
        }),
        ft: Some(FtSpec {
            init_lr: ft_lr,
            epochs: 2,
            kind: "step".into(),
        }),
        base_checkpoint_hash: None,
    }
}

// ---------- datasets ----------

#[test]
fn cifar_binary_record_layout() {
    // Hand-built single-record file: label byte + 3072 pixel bytes.
    let dir = tempfile::tempdir().unwrap();
    let mut rec = vec![7u8]; // label
    rec.extend((0..3072).map(|i| (i % 251) as u8));
    for name in [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ] {
        std::fs::File::create(dir.path().join(name))
            .unwrap()
            .write_all(&rec)
            .unwrap();
    }
    let ds = data::load(&format!("cifar10:{}", dir.path().display())).unwrap();
    assert_eq!(ds.train.len(), 5);
    assert_eq!(ds.test.len(), 1);
    assert_eq!(ds.train.labels[0], 7);
    assert_eq!(
        (ds.train.channels, ds.train.height, ds.train.width),
        (3, 32, 32)
    );
    // Images are normalized by train statistics, so check test equals train
    // pixel-for-pixel (identical raw bytes, identical normalization).
    assert_eq!(ds.train.images[..3072], ds.test.images[..3072]);
}

#[test]
fn malformed_cifar_record_reports_byte_offset() {
    let dir = tempfile::tempdir().unwrap();
    let mut good = vec![0u8; 3073];
    good.extend([1u8; 100]); // dangling partial record at offset 3073
    for name in [
        "data_batch_1.bin",
        "data_batch_2.bin",
        "data_batch_3.bin",
        "data_batch_4.bin",
        "data_batch_5.bin",
        "test_batch.bin",
    ] {
        std::fs::File::create(dir.path().join(name))
            .unwrap()
            .write_all(&good)
            .unwrap();
    }
    match data::load(&format!("cifar10:{}", dir.path().display())) {
        Err(Error::MalformedRecord { offset, .. }) => assert_eq!(offset, 3073),
        other => panic!("expected malformed record, got {other:?}"),
    }
}

#[test]
fn missing_dataset_path_is_an_error() {
    assert!(data::load("cifar10:/nonexistent/path").is_err());
}

#[test]
fn synthetic_dataset_is_seed_deterministic() {
    let a = data::load(TINY_DATA).unwrap();
    let b = data::load(TINY_DATA).unwrap();
    assert_eq!(a.train.images, b.train.images);
    assert_eq!(a.train.labels, b.train.labels);
    let c = data::load("synthetic:classes=4,train=64,test=32,size=6,seed=4").unwrap();
    assert_ne!(a.train.images, c.train.images);
}

#[test]
fn synthetic_geometry_honors_spec() {
    let ds = data::load("synthetic:classes=7,train=21,test=14,size=10,seed=1").unwrap();
    assert_eq!(ds.num_classes, 7);
    assert_eq!(ds.train.len(), 21);
    assert_eq!(ds.test.len(), 14);
    assert_eq!((ds.train.height, ds.train.width), (10, 10));
    assert!(ds.train.labels.iter().all(|&l| l < 7));
}

// ---------- checkpoints ----------

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let mut m = zoo::build_tiny(4, 8, 8).unwrap();
    prunebench::init::initialize(&mut m, 11);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &m.params).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(m.params.len(), loaded.len());
    for (name, t) in &m.params {
        assert_eq!(t.shape(), loaded[name].shape());
        for (a, b) in t.data().iter().zip(loaded[name].data()) {
            assert_eq!(a.to_bits(), b.to_bits(), "{name}");
        }
    }
    // Content hash is stable across save/load.
    assert_eq!(
        checkpoint::content_hash(&m.params),
        checkpoint::content_hash(&loaded)
    );
}

// ---------- pipelines ----------

#[test]
fn zero_epoch_scratch_reports_chance_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let rec = runner::run_scratch(&tiny_scratch(0), 1, &cfg).unwrap();
    assert!(rec.curve.accuracies.is_empty());
    // 4 classes: random-init accuracy should be loosely near 25%.
    assert!(rec.final_acc >= 0.0 && rec.final_acc <= 70.0);
    assert_eq!(rec.total_epochs, 0);
}

#[test]
fn scratch_training_is_bit_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let m = tiny_scratch(3);
    let a = runner::run_scratch(&m, 5, &cfg).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    let cfg2 = RunnerConfig::new(dir2.path());
    let b = runner::run_scratch(&m, 5, &cfg2).unwrap();
    assert_eq!(a.final_acc.to_bits(), b.final_acc.to_bits());
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.test_acc.to_bits(), rb.test_acc.to_bits());
        assert_eq!(ra.lr.to_bits(), rb.lr.to_bits());
    }
    // Different seed diverges.
    let c = runner::run_scratch(&m, 6, &cfg).unwrap();
    assert_ne!(a.final_acc.to_bits(), c.final_acc.to_bits());
}

#[test]
fn prune_finetune_pipeline_runs_and_caches_base() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let m = tiny_prune_ft(0.5, 1e-1);
    let a = runner::run_prune_finetune(&m, 1, &cfg).unwrap();
    assert_eq!(a.total_epochs, 4); // 2 pretrain + 2 finetune
    assert!(a.base_checkpoint_hash.is_some());
    // Second run reuses the cached base checkpoint and reproduces results.
    let b = runner::run_prune_finetune(&m, 1, &cfg).unwrap();
    assert_eq!(a.final_acc.to_bits(), b.final_acc.to_bits());
    assert_eq!(a.base_checkpoint_hash, b.base_checkpoint_hash);
}

#[test]
fn corrupted_base_checkpoint_hash_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let mut m = tiny_prune_ft(0.5, 1e-1);
    runner::run_prune_finetune(&m, 1, &cfg).unwrap();
    m.base_checkpoint_hash = Some("0".repeat(64));
    match runner::run_prune_finetune(&m, 1, &cfg) {
        Err(Error::HashMismatch { .. }) => {}
        other => panic!("expected hash mismatch, got {other:?}"),
    }
}

#[test]
fn extension_replays_its_prefix_and_adds_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let m = tiny_prune_ft(0.5, 1e-1);
    let base = runner::run_prune_finetune(&m, 1, &cfg).unwrap();
    let ext = runner::extend_finetune(&m, 1, 3, &cfg).unwrap();
    assert_eq!(ext.total_epochs, base.total_epochs + 3);
    // The finetune curve's first epoch is identical: extension only changes
    // where the LR decays, and the first stage replays bit-for-bit.
    assert_eq!(
        base.curve.accuracies[0].to_bits(),
        ext.curve.accuracies[0].to_bits()
    );
    // Zero extension reproduces the original record.
    let same = runner::extend_finetune(&m, 1, 0, &cfg).unwrap();
    assert_eq!(base.final_acc.to_bits(), same.final_acc.to_bits());
}

#[test]
fn cosine_schedules_cannot_be_extended() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let mut m = tiny_prune_ft(0.5, 1e-1);
    m.ft.as_mut().unwrap().kind = "cosine".into();
    assert!(matches!(
        runner::extend_finetune(&m, 1, 3, &cfg),
        Err(Error::InvalidSchedule(_))
    ));
}

#[test]
fn total_macs_bookkeeping_matches_flops_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let m = tiny_prune_ft(0.5, 1e-1);
    let rec = runner::run_prune_finetune(&m, 1, &cfg).unwrap();

    let dense = prunebench::flops::count(&zoo::build_sized("tiny", 4, 6, 6).unwrap())
        .unwrap()
        .total_macs as u128;
    let pruned = prunebench::flops::count(&rec.model).unwrap().total_macs as u128;
    let n = 64u128; // train split size
    let want = dense * 2 * n + pruned * 2 * n; // 2 pretrain + 2 finetune epochs
    assert_eq!(rec.total_macs, want);
}

// ---------- cross-validation ----------

#[test]
fn identical_algorithms_tie() {
    assert_eq!(
        runner::xval_verdict(50.0, 60.0, 50.0, 60.0, 1.0),
        Verdict::Tie
    );
}

#[test]
fn synergy_detected_when_winner_flips_with_recipe() {
    // A wins under its own recipe, loses under B's.
    let v = runner::xval_verdict(70.0, 40.0, 60.0, 55.0, 1.0);
    match v {
        Verdict::Synergy(best) => assert_eq!(best, "A+FT_A"),
        other => panic!("expected synergy, got {other}"),
    }
}

#[test]
fn consistent_winner_detected() {
    let v = runner::xval_verdict(70.0, 65.0, 60.0, 65.0, 1.0);
    match v {
        Verdict::ConsistentWinner { .. } => {}
        other => panic!("expected consistent winner, got {other}"),
    }
}

// ---------- results file and report ----------

#[test]
fn results_rows_are_byte_identical_across_reruns() {
    let m = tiny_scratch(2);
    let render = || -> Vec<u8> {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunnerConfig::new(dir.path());
        let rec = runner::run_scratch(&m, 9, &cfg).unwrap();
        let path = dir.path().join("results.tsv");
        runner::append_record(&path, &rec).unwrap();
        std::fs::read(&path).unwrap()
    };
    let a = render();
    let b = render();
    assert_eq!(a, b, "results rows differ between reruns");
}

#[test]
fn report_renders_mean_std_per_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunnerConfig::new(dir.path());
    let mut m = tiny_scratch(2);
    m.seeds = vec![1, 2, 3];
    let path = dir.path().join("results.tsv");
    for rec in runner::run_manifest(&m, &cfg).unwrap() {
        runner::append_record(&path, &rec).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let table = report::render_report(&text).unwrap();
    assert!(table.contains('±'), "report lacks mean±std: {table}");
    let csv = report::curves_csv(&text, &m.hash().unwrap()[..12]).unwrap();
    assert!(csv.lines().count() > 2, "curve csv too short: {csv}");
}
