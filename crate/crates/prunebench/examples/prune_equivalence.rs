//! Small-dense vs large-sparse: pruning a network can be realized either by
//! rebuilding smaller dense layers or by zero-masking the original shapes.
//! Both compute the same function; only the rebuild saves MACs.
//!
//! Run with: cargo run --release --example prune_equivalence

use prunebench::pruner::PruneConfig;
use prunebench::{flops, init, nn, pruner, zoo};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> prunebench::Result<()> {
    let mut model = zoo::build_resnet_cifar(20, 10)?;
    init::initialize(&mut model, 42);
    let dense_macs = flops::count(&model)?.total_macs;

    for ratio in [0.25f32, 0.5, 0.75] {
        let plan = pruner::plan(&model, &PruneConfig::uniform(ratio))?;
        let small = pruner::rebuild_small_dense(&model, &plan)?;
        let masked = pruner::apply_mask(&model, &plan)?;

        // Same function...
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..4 * 3 * 32 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = prunebench::tensor::Tensor::new(vec![4, 3, 32, 32], data);
        let a = nn::forward(&small, &x)?;
        let b = nn::forward(&masked, &x)?;
        let diff = a.max_abs_diff(&b);
        assert!(diff < 1e-5, "realizations diverged: {diff}");

        // ...different cost.
        let small_macs = flops::count(&small)?.total_macs;
        let masked_macs = flops::count(&masked)?.total_macs;
        assert_eq!(masked_macs, dense_macs);
        println!(
            "r={ratio:<5} max |logit diff| = {diff:.2e}   rebuilt {small_macs:>10} MACs \
             ({:.2}x speedup)   masked {masked_macs} MACs (unchanged)",
            dense_macs as f64 / small_macs as f64
        );
    }
    Ok(())
}
