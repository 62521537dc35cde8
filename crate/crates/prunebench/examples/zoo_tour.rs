//! Tour of the model zoo: build every registered architecture and print its
//! parameter count and MAC cost at the reference input size.
//!
//! Run with: cargo run --release --example zoo_tour

use prunebench::{flops, zoo};

fn main() -> prunebench::Result<()> {
    println!(
        "{:<20} {:>12} {:>16}  description",
        "model", "params", "MACs"
    );
    for entry in zoo::list() {
        let classes = if entry.name.ends_with("-imagenet") {
            1000
        } else {
            10
        };
        let model = zoo::build(entry.name, classes)?;
        let report = flops::count(&model)?;
        println!(
            "{:<20} {:>12} {:>16}  {}",
            entry.name, report.total_params, report.total_macs, entry.description
        );
        // The registry's reference numbers double as a self-check.
        assert_eq!(report.total_params as usize, entry.expected_params);
        assert_eq!(report.total_macs, entry.expected_macs);
    }

    // Custom depths/configs beyond the registry:
    let deep = zoo::build_resnet_cifar(110, 10)?;
    println!("\nresnet110 (custom): {} params", deep.param_count());
    let vgg16 = zoo::build_vgg_cifar(
        &[64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0],
        10,
    )?;
    println!("vgg16 (custom):     {} params", vgg16.param_count());
    Ok(())
}
