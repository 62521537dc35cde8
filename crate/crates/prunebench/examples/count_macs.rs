//! MAC accounting and pruning speedups: count a dense network, prune it at
//! several ratios, and report the resulting compute reduction.
//!
//! Run with: cargo run --release --example count_macs

use prunebench::pruner::{Criterion, PruneConfig, RatioSpec};
use prunebench::{flops, pruner, zoo};

fn main() -> prunebench::Result<()> {
    // Uniform layerwise pruning on a large basic-block ResNet.
    let model = zoo::build_static_resnet_imagenet(34)?;
    let dense = flops::count(&model)?;
    println!(
        "resnet34-imagenet dense: {} MACs ({:.2} G)",
        dense.total_macs,
        dense.total_macs as f64 / 1e9
    );
    for ratio in [0.3f32, 0.5, 0.7, 0.9, 0.95] {
        let plan = pruner::plan(&model, &PruneConfig::uniform(ratio))?;
        let small = pruner::rebuild_small_dense(&model, &plan)?;
        let pruned = flops::count(&small)?;
        let k = flops::speedup(&dense, &pruned)?;
        println!(
            "  uniform r={ratio:<4}  ->  {:>13} MACs   speedup {k:.2}x",
            pruned.total_macs
        );
    }

    // Stage-wise ratio vectors on a bottleneck ResNet. The six entries map
    // to [first conv, stage1..stage4, classifier]; the ends must be 0.
    let model = zoo::build_static_resnet_imagenet(50)?;
    let dense = flops::count(&model)?;
    println!(
        "\nresnet50-imagenet dense: {} MACs ({:.2} G)",
        dense.total_macs,
        dense.total_macs as f64 / 1e9
    );
    for vector in [
        [0.0f32, 0.60, 0.60, 0.60, 0.21, 0.0],
        [0.0, 0.74, 0.74, 0.60, 0.21, 0.0],
    ] {
        let cfg = PruneConfig {
            ratios: RatioSpec::StageWise(vector),
            criterion: Criterion::L1,
        };
        let plan = pruner::plan(&model, &cfg)?;
        let small = pruner::rebuild_small_dense(&model, &plan)?;
        let k = flops::speedup(&dense, &flops::count(&small)?)?;
        println!("  stage-wise {vector:?}  ->  speedup {k:.2}x");
    }

    // Per-layer breakdown for a small CIFAR net.
    let model = zoo::build_resnet_cifar(20, 10)?;
    println!("\nresnet20 per-layer accounting:\n{}", flops::count(&model)?.render_table());
    Ok(())
}
