//! Cross-validating hyperparameters across pruning criteria: compare L1
//! ranking against random ranking, finetuning each with *both* recipes, so a
//! recipe tuned for one method cannot silently decide the comparison.
//!
//! Run with: cargo run --release --example cross_validate
//! (a couple of minutes on a multicore CPU)

use prunebench::manifest::{ExperimentManifest, FtSpec, Pipeline, PruneSpec, ScheduleSpec};
use prunebench::runner::{self, RunnerConfig};

fn manifest(criterion: &str, ft_lr: f64) -> ExperimentManifest {
    ExperimentManifest {
        dataset: "synthetic:classes=10,train=400,test=200,size=12,seed=9".into(),
        model: "resnet8".into(),
        pipeline: Pipeline::PruneFinetune,
        seeds: vec![1, 2, 3],
        scratch: ScheduleSpec {
            epochs: 10,
            init_lr: 1e-1,
            final_lr: 1e-3,
            kind: "step".into(),
        },
        prune: Some(PruneSpec {
            ratio: 0.6,
            epoch: 5,
            criterion: criterion.into(),
            criterion_seed: 11,
        }),
        ft: Some(FtSpec {
            init_lr: ft_lr,
            epochs: 5,
            kind: "step".into(),
        }),
        base_checkpoint_hash: None,
    }
}

fn main() -> prunebench::Result<()> {
    let workdir = std::env::temp_dir().join("prunebench-xval");
    let cfg = RunnerConfig::new(&workdir);

    // Algorithm A: L1 ranking, its recipe finetunes at 1e-1.
    // Algorithm B: random ranking, its recipe finetunes at 1e-2.
    let a = manifest("l1", 1e-1);
    let b = manifest("random", 1e-2);
    let noise = 1.0; // accuracy differences below 1 point count as ties
    let (verdict, grid) = runner::cross_validate(&a, &b, noise, &cfg)?;
    println!("            FT_A (1e-1)   FT_B (1e-2)");
    println!("L1 rank     {:>8.2}      {:>8.2}", grid[0], grid[1]);
    println!("random      {:>8.2}      {:>8.2}", grid[2], grid[3]);
    println!("\nverdict: {verdict}");
    Ok(())
}
