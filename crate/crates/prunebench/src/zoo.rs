//! Benchmark architectures: CIFAR-style residual nets (depth 6n+2), VGG-style
//! plain nets, a tiny net for fast tests, and static ResNet34/50 graphs at
//! 224x224 for MAC accounting only (parameters unmaterialized).

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{ConvRole, InputSpec, Layer, LayerKind, ModelGraph};
use crate::tensor::Tensor;

/// Zoo listing entry with reference counts at the reference input size.
#[derive(Clone, Debug)]
pub struct ZooEntry {
    pub name: &'static str,
    pub description: &'static str,
    /// Expected parameter count at the reference input size.
    pub expected_params: usize,
    /// Expected total MACs at the reference input size.
    pub expected_macs: u64,
}

pub fn list() -> Vec<ZooEntry> {
    vec![
        ZooEntry {
            name: "tiny",
            description: "two-conv test net, 3x32x32 input",
            expected_params: 914,
            expected_macs: 811_088,
        },
        ZooEntry {
            name: "resnet8",
            description: "CIFAR ResNet, depth 8, 3x32x32 input",
            expected_params: 78_042,
            expected_macs: 12_501_632,
        },
        ZooEntry {
            name: "resnet14",
            description: "CIFAR ResNet, depth 14, 3x32x32 input",
            expected_params: 175_258,
            expected_macs: 26_657_408,
        },
        ZooEntry {
            name: "resnet20",
            description: "CIFAR ResNet, depth 20, 3x32x32 input",
            expected_params: 272_474,
            expected_macs: 40_813_184,
        },
        ZooEntry {
            name: "resnet56",
            description: "CIFAR ResNet, depth 56, 3x32x32 input",
            expected_params: 855_770,
            expected_macs: 125_747_840,
        },
        ZooEntry {
            name: "vgg11",
            description: "CIFAR VGG-11, 3x32x32 input",
            expected_params: 9_228_362,
            expected_macs: 152_769_536,
        },
        ZooEntry {
            name: "vgg19",
            description: "CIFAR VGG-19, 3x32x32 input",
            expected_params: 20_035_018,
            expected_macs: 398_136_320,
        },
        ZooEntry {
            name: "resnet34-imagenet",
            description: "static ResNet34, 3x224x224, FLOPs analysis only",
            expected_params: 21_797_672,
            expected_macs: 3_663_761_408,
        },
        ZooEntry {
            name: "resnet50-imagenet",
            description: "static ResNet50, 3x224x224, FLOPs analysis only",
            expected_params: 25_557_032,
            expected_macs: 4_089_184_256,
        },
    ]
}

struct Builder {
    input: InputSpec,
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor>,
    materialize: bool,
}

impl Builder {
    fn new(input: InputSpec, materialize: bool) -> Self {
        Builder {
            input,
            layers: Vec::new(),
            params: BTreeMap::new(),
            materialize,
        }
    }

    fn last(&self) -> usize {
        self.layers.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        role: ConvRole,
        prunable: bool,
        input: Option<usize>,
    ) -> usize {
        if self.materialize {
            self.params.insert(
                format!("{name}.weight"),
                Tensor::zeros(vec![out_ch, in_ch, kernel, kernel]),
            );
        }
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Conv2d {
                in_channels: in_ch,
                out_channels: out_ch,
                kernel,
                stride,
                padding,
                bias: false,
                role,
                prunable,
            },
            input,
        });
        self.last()
    }

    fn bn(&mut self, name: &str, channels: usize) -> usize {
        if self.materialize {
            self.params
                .insert(format!("{name}.weight"), Tensor::zeros(vec![channels]));
            self.params
                .insert(format!("{name}.bias"), Tensor::zeros(vec![channels]));
            self.params.insert(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![channels]),
            );
            self.params
                .insert(format!("{name}.running_var"), Tensor::zeros(vec![channels]));
        }
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::BatchNorm2d { channels },
            input: None,
        });
        self.last()
    }

    fn relu(&mut self, name: &str) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Relu,
            input: None,
        });
        self.last()
    }

    fn add(&mut self, name: &str, source: usize) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Add { source },
            input: None,
        });
        self.last()
    }

    fn avgpool(&mut self, name: &str, kernel: usize) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::AvgPool {
                kernel,
                stride: kernel,
            },
            input: None,
        });
        self.last()
    }

    fn maxpool(&mut self, name: &str, kernel: usize, stride: usize, padding: usize) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            },
            input: None,
        });
        self.last()
    }

    fn flatten(&mut self, name: &str) -> usize {
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Flatten,
            input: None,
        });
        self.last()
    }

    fn linear(&mut self, name: &str, in_f: usize, out_f: usize) -> usize {
        if self.materialize {
            self.params
                .insert(format!("{name}.weight"), Tensor::zeros(vec![out_f, in_f]));
            self.params
                .insert(format!("{name}.bias"), Tensor::zeros(vec![out_f]));
        }
        self.layers.push(Layer {
            name: name.into(),
            kind: LayerKind::Linear {
                in_features: in_f,
                out_features: out_f,
            },
            input: None,
        });
        self.last()
    }

    fn finish(self) -> ModelGraph {
        ModelGraph {
            input: self.input,
            layers: self.layers,
            params: self.params,
        }
    }
}

/// Basic residual block: conv1 (prunable) -> bn -> relu -> conv2 -> bn,
/// plus an identity or 1x1 projection shortcut, then add and relu.
#[allow(clippy::too_many_arguments)]
fn basic_block(
    b: &mut Builder,
    prefix: &str,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
    block_input: usize,
) -> usize {
    b.conv(
        &format!("{prefix}.conv1"),
        in_ch,
        out_ch,
        3,
        stride,
        1,
        ConvRole::BlockInternal,
        true,
        None,
    );
    b.bn(&format!("{prefix}.bn1"), out_ch);
    b.relu(&format!("{prefix}.relu1"));
    b.conv(
        &format!("{prefix}.conv2"),
        out_ch,
        out_ch,
        3,
        1,
        1,
        ConvRole::BlockLast,
        false,
        None,
    );
    let main_end = b.bn(&format!("{prefix}.bn2"), out_ch);
    if in_ch != out_ch || stride != 1 {
        b.conv(
            &format!("{prefix}.ds"),
            in_ch,
            out_ch,
            1,
            stride,
            0,
            ConvRole::NonBlock,
            false,
            Some(block_input),
        );
        b.bn(&format!("{prefix}.ds_bn"), out_ch);
        b.add(&format!("{prefix}.add"), main_end);
    } else {
        b.add(&format!("{prefix}.add"), block_input);
    }
    b.relu(&format!("{prefix}.relu2"))
}

/// Bottleneck block: 1x1 (prunable) -> 3x3 stride (prunable) -> 1x1 expand.
#[allow(clippy::too_many_arguments)]
fn bottleneck_block(
    b: &mut Builder,
    prefix: &str,
    in_ch: usize,
    width: usize,
    stride: usize,
    block_input: usize,
) -> usize {
    let out_ch = width * 4;
    b.conv(
        &format!("{prefix}.conv1"),
        in_ch,
        width,
        1,
        1,
        0,
        ConvRole::BlockInternal,
        true,
        None,
    );
    b.bn(&format!("{prefix}.bn1"), width);
    b.relu(&format!("{prefix}.relu1"));
    b.conv(
        &format!("{prefix}.conv2"),
        width,
        width,
        3,
        stride,
        1,
        ConvRole::BlockInternal,
        true,
        None,
    );
    b.bn(&format!("{prefix}.bn2"), width);
    b.relu(&format!("{prefix}.relu2"));
    b.conv(
        &format!("{prefix}.conv3"),
        width,
        out_ch,
        1,
        1,
        0,
        ConvRole::BlockLast,
        false,
        None,
    );
    let main_end = b.bn(&format!("{prefix}.bn3"), out_ch);
    if in_ch != out_ch || stride != 1 {
        b.conv(
            &format!("{prefix}.ds"),
            in_ch,
            out_ch,
            1,
            stride,
            0,
            ConvRole::NonBlock,
            false,
            Some(block_input),
        );
        b.bn(&format!("{prefix}.ds_bn"), out_ch);
        b.add(&format!("{prefix}.add"), main_end);
    } else {
        b.add(&format!("{prefix}.add"), block_input);
    }
    b.relu(&format!("{prefix}.relu3"))
}

/// CIFAR-style ResNet of depth 6n+2 at an arbitrary square input size.
/// First conv and classifier are spared; each block's first conv is prunable.
pub fn build_resnet_cifar_sized(
    depth: usize,
    num_classes: usize,
    height: usize,
    width: usize,
) -> Result<ModelGraph> {
    if depth < 8 || (depth - 2) % 6 != 0 {
        return Err(Error::InvalidModel(format!(
            "resnet depth must be 6n+2 with n >= 1, got {depth}"
        )));
    }
    if height % 4 != 0 || width % 4 != 0 {
        return Err(Error::InvalidModel(
            "input size must be divisible by 4 (two stride-2 stages)".into(),
        ));
    }
    let n = (depth - 2) / 6;
    let input = InputSpec {
        channels: 3,
        height,
        width,
        num_classes,
    };
    let mut b = Builder::new(input, true);
    b.conv("stem", 3, 16, 3, 1, 1, ConvRole::NonBlock, false, None);
    b.bn("stem_bn", 16);
    let mut cur = b.relu("stem_relu");
    let mut in_ch = 16;
    for (stage, &w) in [16usize, 32, 64].iter().enumerate() {
        for blk in 0..n {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            cur = basic_block(
                &mut b,
                &format!("s{stage}.b{blk}"),
                in_ch,
                w,
                stride,
                cur,
            );
            in_ch = w;
        }
    }
    b.avgpool("pool", height / 4);
    b.flatten("flatten");
    b.linear("fc", 64, num_classes);
    Ok(b.finish())
}

pub fn build_resnet_cifar(depth: usize, num_classes: usize) -> Result<ModelGraph> {
    build_resnet_cifar_sized(depth, num_classes, 32, 32)
}

/// VGG-style plain conv net on 32x32. `config` lists conv widths with `0`
/// marking a 2x2 maxpool. All convs except the first are prunable.
pub fn build_vgg_cifar(config: &[usize], num_classes: usize) -> Result<ModelGraph> {
    if config.iter().all(|&c| c == 0) || config.is_empty() {
        return Err(Error::InvalidModel("empty VGG config".into()));
    }
    let input = InputSpec {
        channels: 3,
        height: 32,
        width: 32,
        num_classes,
    };
    let mut b = Builder::new(input, true);
    let mut in_ch = 3;
    let mut spatial = 32usize;
    let mut conv_idx = 0usize;
    let mut pool_idx = 0usize;
    for &c in config {
        if c == 0 {
            b.maxpool(&format!("pool{pool_idx}"), 2, 2, 0);
            pool_idx += 1;
            spatial /= 2;
        } else {
            let prunable = conv_idx > 0;
            b.conv(
                &format!("conv{conv_idx}"),
                in_ch,
                c,
                3,
                1,
                1,
                ConvRole::NonBlock,
                prunable,
                None,
            );
            b.bn(&format!("bn{conv_idx}"), c);
            b.relu(&format!("relu{conv_idx}"));
            in_ch = c;
            conv_idx += 1;
        }
    }
    if spatial > 1 {
        b.avgpool("gap", spatial);
    }
    b.flatten("flatten");
    b.linear("fc", in_ch, num_classes);
    Ok(b.finish())
}

pub const VGG11_CONFIG: &[usize] = &[64, 0, 128, 0, 256, 256, 0, 512, 512, 0, 512, 512, 0];
pub const VGG19_CONFIG: &[usize] = &[
    64, 64, 0, 128, 128, 0, 256, 256, 256, 256, 0, 512, 512, 512, 512, 0, 512, 512, 512, 512, 0,
];

/// Two-conv test net. The second conv is prunable; first conv and classifier
/// are spared.
pub fn build_tiny(num_classes: usize, height: usize, width: usize) -> Result<ModelGraph> {
    let input = InputSpec {
        channels: 3,
        height,
        width,
        num_classes,
    };
    let mut b = Builder::new(input, true);
    b.conv("conv0", 3, 8, 3, 1, 1, ConvRole::NonBlock, false, None);
    b.bn("bn0", 8);
    b.relu("relu0");
    b.conv("conv1", 8, 8, 3, 1, 1, ConvRole::NonBlock, true, None);
    b.bn("bn1", 8);
    b.relu("relu1");
    b.avgpool("gap", height.min(width));
    b.flatten("flatten");
    b.linear("fc", 8, num_classes);
    Ok(b.finish())
}

/// Static (unmaterialized) ImageNet ResNet for MAC/speedup arithmetic.
/// Supported depths: 34 (basic blocks) and 50 (bottlenecks).
pub fn build_static_resnet_imagenet(depth: usize) -> Result<ModelGraph> {
    let blocks_per_stage = [3usize, 4, 6, 3];
    let bottleneck = match depth {
        34 => false,
        50 => true,
        d => {
            return Err(Error::InvalidModel(format!(
                "unsupported static ImageNet depth {d} (want 34 or 50)"
            )))
        }
    };
    let input = InputSpec {
        channels: 3,
        height: 224,
        width: 224,
        num_classes: 1000,
    };
    let mut b = Builder::new(input, false);
    b.conv("stem", 3, 64, 7, 2, 3, ConvRole::NonBlock, false, None);
    b.bn("stem_bn", 64);
    b.relu("stem_relu");
    let mut cur = b.maxpool("stem_pool", 3, 2, 1);
    let widths = [64usize, 128, 256, 512];
    let mut in_ch = 64;
    for (stage, (&w, &nblocks)) in widths.iter().zip(&blocks_per_stage).enumerate() {
        for blk in 0..nblocks {
            let stride = if stage > 0 && blk == 0 { 2 } else { 1 };
            let prefix = format!("s{}.b{blk}", stage + 1);
            cur = if bottleneck {
                let out = bottleneck_block(&mut b, &prefix, in_ch, w, stride, cur);
                in_ch = w * 4;
                out
            } else {
                let out = basic_block(&mut b, &prefix, in_ch, w, stride, cur);
                in_ch = w;
                out
            };
        }
    }
    b.avgpool("gap", 7);
    b.flatten("flatten");
    b.linear("fc", in_ch, 1000);
    Ok(b.finish())
}

/// Stage index of a layer for stage-wise ratio vectors of length 6:
/// 0 = first conv, 1..=4 = residual stages, 5 = classifier.
pub fn imagenet_stage_of(layer_name: &str) -> Option<usize> {
    if layer_name == "stem" {
        return Some(0);
    }
    if layer_name == "fc" {
        return Some(5);
    }
    let rest = layer_name.strip_prefix('s')?;
    let stage: usize = rest.split('.').next()?.parse().ok()?;
    (1..=4).contains(&stage).then_some(stage)
}

/// Builds a zoo model by name at its reference input size.
pub fn build(name: &str, num_classes: usize) -> Result<ModelGraph> {
    build_sized(name, num_classes, 32, 32)
}

/// Builds a zoo model by name; CIFAR-style nets accept a custom input size.
pub fn build_sized(name: &str, num_classes: usize, height: usize, width: usize) -> Result<ModelGraph> {
    match name {
        "tiny" => build_tiny(num_classes, height, width),
        "vgg11" => build_vgg_cifar(VGG11_CONFIG, num_classes),
        "vgg19" => build_vgg_cifar(VGG19_CONFIG, num_classes),
        "resnet34-imagenet" => build_static_resnet_imagenet(34),
        "resnet50-imagenet" => build_static_resnet_imagenet(50),
        _ => match name.strip_prefix("resnet").and_then(|d| d.parse::<usize>().ok()) {
            Some(depth) => build_resnet_cifar_sized(depth, num_classes, height, width),
            None => Err(Error::InvalidModel(format!("unknown zoo model `{name}`"))),
        },
    }
}
