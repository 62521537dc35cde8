//! Shared helpers for integration tests: a tiny graph builder, random
//! tensors, a brute-force direct-convolution oracle, and a finite-difference
//! gradient checker.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prunebench::graph::{ConvRole, InputSpec, Layer, LayerKind, ModelGraph};
use prunebench::nn;
use prunebench::tensor::Tensor;

/// Minimal mirror of the zoo's internal builder for hand-made test graphs.
pub struct TestNet {
    input: InputSpec,
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor>,
}

impl TestNet {
    pub fn new(channels: usize, height: usize, width: usize, num_classes: usize) -> Self {
        TestNet {
            input: InputSpec {
                channels,
                height,
                width,
                num_classes,
            },
            layers: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    fn push(&mut self, name: &str, kind: LayerKind, input: Option<usize>) -> usize {
        self.layers.push(Layer {
            name: name.to_string(),
            kind,
            input,
        });
        self.layers.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        name: &str,
        ic: usize,
        oc: usize,
        k: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        role: ConvRole,
    ) -> usize {
        self.params.insert(
            format!("{name}.weight"),
            Tensor::zeros(vec![oc, ic, k, k]),
        );
        if bias {
            self.params
                .insert(format!("{name}.bias"), Tensor::zeros(vec![oc]));
        }
        self.push(
            name,
            LayerKind::Conv2d {
                in_channels: ic,
                out_channels: oc,
                kernel: k,
                stride,
                padding,
                bias,
                role,
                prunable: role != ConvRole::BlockLast,
            },
            None,
        )
    }

    pub fn bn(&mut self, name: &str, channels: usize) -> usize {
        self.params
            .insert(format!("{name}.weight"), Tensor::filled(vec![channels], 1.0));
        self.params
            .insert(format!("{name}.bias"), Tensor::zeros(vec![channels]));
        self.params.insert(
            format!("{name}.running_mean"),
            Tensor::zeros(vec![channels]),
        );
        self.params.insert(
            format!("{name}.running_var"),
            Tensor::filled(vec![channels], 1.0),
        );
        self.push(name, LayerKind::BatchNorm2d { channels }, None)
    }

    pub fn relu(&mut self, name: &str) -> usize {
        self.push(name, LayerKind::Relu, None)
    }

    pub fn avgpool(&mut self, name: &str, kernel: usize) -> usize {
        self.push(
            name,
            LayerKind::AvgPool {
                kernel,
                stride: kernel,
            },
            None,
        )
    }

    pub fn maxpool(&mut self, name: &str, kernel: usize, stride: usize, padding: usize) -> usize {
        self.push(
            name,
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            },
            None,
        )
    }

    pub fn add(&mut self, name: &str, source: usize) -> usize {
        self.push(name, LayerKind::Add { source }, None)
    }

    pub fn flatten(&mut self, name: &str) -> usize {
        self.push(name, LayerKind::Flatten, None)
    }

    pub fn linear(&mut self, name: &str, in_features: usize, out_features: usize) -> usize {
        self.params.insert(
            format!("{name}.weight"),
            Tensor::zeros(vec![out_features, in_features]),
        );
        self.params
            .insert(format!("{name}.bias"), Tensor::zeros(vec![out_features]));
        self.push(
            name,
            LayerKind::Linear {
                in_features,
                out_features,
            },
            None,
        )
    }

    pub fn finish(self) -> ModelGraph {
        ModelGraph {
            input: self.input,
            layers: self.layers,
            params: self.params,
        }
    }
}

/// Uniform random tensor in [-1, 1], deterministic per seed.
pub fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::new(shape, data)
}

/// Fills every parameter of a model with small uniform random values.
pub fn randomize_params(model: &mut ModelGraph, seed: u64, scale: f32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params.keys().cloned().collect();
    for name in names {
        if name.ends_with(".running_mean") || name.ends_with(".running_var") {
            continue;
        }
        let t = model.params.get_mut(&name).unwrap();
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

/// Brute-force direct convolution: quadruple loop, no im2col, f64 accumulate.
pub fn direct_conv(
    input: &Tensor, // [n, ic, h, w]
    weight: &Tensor, // [oc, ic, k, k]
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Tensor {
    let (n, ic, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let (oc, k) = (weight.shape()[0], weight.shape()[2]);
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0f32; n * oc * oh * ow];
    for b in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0f64;
                    for i in 0..ic {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let iv = input.data()
                                    [((b * ic + i) * h + iy as usize) * w + ix as usize];
                                let wv = weight.data()[((o * ic + i) * k + ky) * k + kx];
                                acc += iv as f64 * wv as f64;
                            }
                        }
                    }
                    if let Some(bias) = bias {
                        acc += bias.data()[o] as f64;
                    }
                    out[((b * oc + o) * oh + oy) * ow + ox] = acc as f32;
                }
            }
        }
    }
    Tensor::new(vec![n, oc, oh, ow], out)
}

/// Central finite-difference check on every trainable parameter of a smooth
/// model (no relu / maxpool). Returns the worst per-tensor relative error
/// ||numeric - analytic|| / max(||numeric||, ||analytic||).
pub fn fd_gradient_check(model: &ModelGraph, batch: &Tensor, labels: &[usize]) -> f64 {
    let (grads, _) = nn::backward(model, batch, labels).expect("backward");
    let eps = 1e-2f32;
    let mut worst = 0f64;
    for name in model.trainable_param_names() {
        let analytic = &grads[&name];
        let len = model.params[&name].len();
        let mut num = vec![0f64; len];
        for i in 0..len {
            let mut plus = model.clone();
            plus.params.get_mut(&name).unwrap().data_mut()[i] += eps;
            let lp = nn::loss_train_mode(&plus, batch, labels).expect("loss+") as f64;
            let mut minus = model.clone();
            minus.params.get_mut(&name).unwrap().data_mut()[i] -= eps;
            let lm = nn::loss_train_mode(&minus, batch, labels).expect("loss-") as f64;
            num[i] = (lp - lm) / (2.0 * eps as f64);
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = num
            .iter()
            .zip(analytic.data())
            .map(|(n, a)| n - *a as f64)
            .collect();
        let denom = norm(&num).max(norm(
            &analytic.data().iter().map(|a| *a as f64).collect::<Vec<_>>(),
        ));
        // Floor the denominator: a bias feeding straight into batchnorm has a
        // true gradient of exactly zero, where a pure ratio is meaningless.
        worst = worst.max(norm(&diff) / denom.max(1e-3));
    }
    worst
}

/// A random smooth model (conv / bn / avgpool / linear / optional residual
/// add): no relu or maxpool, so finite differences are well behaved.
pub fn random_smooth_model(seed: u64) -> (ModelGraph, Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let size = *[6usize, 8].get(rng.gen_range(0..2)).unwrap();
    let c1 = rng.gen_range(2..5usize);
    let classes = rng.gen_range(2..5usize);
    let with_bn = rng.gen_bool(0.5);
    let with_res = rng.gen_bool(0.5);
    let mut b = TestNet::new(2, size, size, classes);
    let pre = b.conv("c0", 2, c1, 3, 1, 1, true, ConvRole::NonBlock);
    if with_bn {
        b.bn("bn0", c1);
    }
    b.conv("c1", c1, c1, 3, 1, 1, false, ConvRole::NonBlock);
    if with_res {
        b.add("add", pre);
    }
    b.avgpool("gap", size);
    b.flatten("flat");
    b.linear("fc", c1, classes);
    let mut model = b.finish();
    randomize_params(&mut model, seed, 0.5);
    let batch = rand_tensor(vec![2, 2, size, size], seed ^ 0xbeef);
    let labels: Vec<usize> = (0..2).map(|_| rng.gen_range(0..classes)).collect();
    (model, batch, labels)
}
