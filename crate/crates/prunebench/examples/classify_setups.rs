//! The comparison-setup ladder: how strictly do two experiment manifests
//! control their variables against each other?
//!
//! S1  same dataset, network, and speedup
//! S2  + same base (pretrained) model
//! S3.1 + equal finetune epochs     S3.2 + identical finetune LR schedule
//! S4.1 + equal pruning-phase epochs S4.2 + identical pruning-phase schedule
//! Flags: SX-A equal total epochs, SX-B equal total training MACs (±2%).
//!
//! Run with: cargo run --release --example classify_setups

use prunebench::manifest::{ExperimentManifest, FtSpec, Pipeline, PruneSpec, ScheduleSpec};
use prunebench::planner;

fn base() -> ExperimentManifest {
    ExperimentManifest {
        dataset: "synthetic:classes=10,train=256,test=128,size=8,seed=1".into(),
        model: "resnet8".into(),
        pipeline: Pipeline::PruneFinetune,
        seeds: vec![1, 2, 3],
        scratch: ScheduleSpec {
            epochs: 12,
            init_lr: 1e-1,
            final_lr: 1e-4,
            kind: "step".into(),
        },
        prune: Some(PruneSpec {
            ratio: 0.5,
            epoch: 6,
            criterion: "l1".into(),
            criterion_seed: 0,
        }),
        ft: Some(FtSpec {
            init_lr: 1e-1,
            epochs: 6,
            kind: "step".into(),
        }),
        base_checkpoint_hash: None,
    }
}

fn main() -> prunebench::Result<()> {
    let a = base();

    let show = |label: &str, b: &ExperimentManifest| {
        match planner::classify_setup(&a, b) {
            Ok(c) => println!("{label:<42} {c}"),
            Err(e) => println!("{label:<42} error: {e}"),
        }
    };

    show("identical manifests", &a);

    let mut b = base();
    b.ft.as_mut().unwrap().init_lr = 1e-3;
    show("different finetune LR, same length", &b);

    let mut b = base();
    b.ft.as_mut().unwrap().epochs = 4;
    show("shorter finetune", &b);

    let mut b = base();
    b.prune.as_mut().unwrap().epoch = 3;
    b.ft.as_mut().unwrap().epochs = 9;
    show("earlier prune, same total epochs", &b);

    let mut b = base();
    b.base_checkpoint_hash = Some("f00d".into());
    show("different base model", &b);

    let mut b = base();
    b.model = "resnet14".into();
    show("different network", &b);

    let mut b = base();
    b.dataset = "synthetic:classes=10,train=512,test=128,size=8,seed=1".into();
    show("different dataset (incomparable)", &b);

    Ok(())
}
