//! Weight initialization. Fan-in-scaled normal init for conv/linear, unit
//! scale / zero shift for batchnorm. Deterministic under a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{LayerKind, ModelGraph};
use crate::tensor::Tensor;

/// Standard normal via Box-Muller on the given RNG.
fn normal(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

/// (Re)initializes every parameter of the model in layer order.
///
/// Init scales depend on the parameter shapes, so a reconstructed small-dense
/// model initialized from scratch differs from a sliced big-model init.
pub fn initialize(model: &mut ModelGraph, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = model.layers.clone();
    for layer in &layers {
        match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                kernel,
                bias,
                ..
            } => {
                let fan_in = (in_channels * kernel * kernel) as f64;
                let std = (2.0 / fan_in).sqrt() as f32;
                fill_normal(model, &format!("{}.weight", layer.name), std, &mut rng);
                if *bias {
                    fill_const(model, &format!("{}.bias", layer.name), 0.0);
                }
            }
            LayerKind::Linear { in_features, .. } => {
                let std = (2.0 / *in_features as f64).sqrt() as f32;
                fill_normal(model, &format!("{}.weight", layer.name), std, &mut rng);
                fill_const(model, &format!("{}.bias", layer.name), 0.0);
            }
            LayerKind::BatchNorm2d { .. } => {
                fill_const(model, &format!("{}.weight", layer.name), 1.0);
                fill_const(model, &format!("{}.bias", layer.name), 0.0);
                fill_const(model, &format!("{}.running_mean", layer.name), 0.0);
                fill_const(model, &format!("{}.running_var", layer.name), 1.0);
            }
            _ => {}
        }
    }
}

fn fill_normal(model: &mut ModelGraph, name: &str, std: f32, rng: &mut ChaCha8Rng) {
    let t: &mut Tensor = model.params.get_mut(name).expect("param exists");
    for v in t.data_mut() {
        *v = normal(rng) * std;
    }
}

fn fill_const(model: &mut ModelGraph, name: &str, value: f32) {
    let t: &mut Tensor = model.params.get_mut(name).expect("param exists");
    for v in t.data_mut() {
        *v = value;
    }
}
