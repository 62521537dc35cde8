//! Minimal end-to-end run: train a small ResNet from scratch on a synthetic
//! dataset, then run the full prune-finetune pipeline from a manifest.
//!
//! Run with: cargo run --release --example train_quickstart

use prunebench::manifest::{ExperimentManifest, FtSpec, Pipeline, PruneSpec, ScheduleSpec};
use prunebench::runner::{self, RunnerConfig};

fn main() -> prunebench::Result<()> {
    let workdir = std::env::temp_dir().join("prunebench-quickstart");
    let cfg = RunnerConfig::new(&workdir);

    // Scratch training: 6 epochs, step schedule 1e-1 -> 1e-2.
    let scratch = ExperimentManifest {
        dataset: "synthetic:classes=10,train=400,test=200,size=12,seed=5".into(),
        model: "resnet8".into(),
        pipeline: Pipeline::Scratch,
        seeds: vec![1],
        scratch: ScheduleSpec {
            epochs: 6,
            init_lr: 1e-1,
            final_lr: 1e-2,
            kind: "step".into(),
        },
        prune: None,
        ft: None,
        base_checkpoint_hash: None,
    };
    let rec = runner::run_scratch(&scratch, 1, &cfg)?;
    println!("scratch resnet8:");
    for row in &rec.rows {
        println!(
            "  epoch {:>2} [{}] lr {:<5} test acc {:.2}%",
            row.epoch,
            row.phase,
            prunebench::planner::format_lr(row.lr),
            row.test_acc
        );
    }
    println!("  final {:.2}%  trainability {:.2}%\n", rec.final_acc, rec.trainability);

    // Prune-finetune: pretrain 4 epochs, prune half the internal filters,
    // finetune 4 epochs. The pretrained base model is cached in the workdir
    // and reused by later runs with the same prefix.
    let pipeline = ExperimentManifest {
        pipeline: Pipeline::PruneFinetune,
        prune: Some(PruneSpec {
            ratio: 0.5,
            epoch: 4,
            criterion: "l1".into(),
            criterion_seed: 0,
        }),
        ft: Some(FtSpec {
            init_lr: 1e-1,
            epochs: 4,
            kind: "step".into(),
        }),
        scratch: ScheduleSpec {
            epochs: 8,
            init_lr: 1e-1,
            final_lr: 1e-2,
            kind: "step".into(),
        },
        ..scratch
    };
    let rec = runner::run_prune_finetune(&pipeline, 1, &cfg)?;
    println!("prune-finetune resnet8 (r=0.5 at epoch 4):");
    println!(
        "  final {:.2}%  trainability {:.2}%  total {} epochs, {} MACs",
        rec.final_acc, rec.trainability, rec.total_epochs, rec.total_macs
    );
    println!("  base checkpoint: {}", rec.base_checkpoint_hash.as_deref().unwrap_or("-"));
    Ok(())
}
