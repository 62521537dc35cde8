//! Layer graph: an ordered list of layers with optional residual edges.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a conv sits relative to residual blocks. Pruning decisions key off this.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvRole {
    /// First (or internal, for bottlenecks) conv inside a residual block.
    BlockInternal,
    /// Last conv of a residual block; its output feeds the add.
    BlockLast,
    /// Not part of a residual block (stem, plain-net convs, shortcuts).
    NonBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        role: ConvRole,
        prunable: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm2d {
        channels: usize,
    },
    Relu,
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Elementwise add of the previous layer's output and `source`'s output.
    Add {
        source: usize,
    },
    Flatten,
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    /// Index of the layer whose output this layer consumes. `None` means the
    /// previous layer (or the network input for layer 0). Shortcut branches
    /// use an explicit index.
    pub input: Option<usize>,
}

/// Input spec: channels, height, width of one sample plus class count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

/// Ordered layer graph with named parameter tensors.
///
/// Layer `i` consumes the output of layer `i - 1` (layer 0 consumes the
/// network input); `Add` layers additionally consume a named source layer.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub input: InputSpec,
    pub layers: Vec<Layer>,
    pub params: BTreeMap<String, Tensor>,
}

/// Per-layer activation shape (channels, height, width), or a flat feature count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActShape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl ActShape {
    pub fn numel(&self) -> usize {
        match self {
            ActShape::Chw(c, h, w) => c * h * w,
            ActShape::Flat(n) => *n,
        }
    }
}

impl ModelGraph {
    /// Residual edges as (source layer index, add layer index) pairs.
    pub fn residual_edges(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l.kind {
                LayerKind::Add { source } => Some((source, i)),
                _ => None,
            })
            .collect()
    }

    /// Effective input of layer `i`: `Some(j)` for layer `j`'s output, `None`
    /// for the network input.
    pub fn input_of(&self, i: usize) -> Option<usize> {
        match self.layers[i].input {
            Some(j) => Some(j),
            None if i == 0 => None,
            None => Some(i - 1),
        }
    }

    /// Layers that consume the output of layer `j` (including add sources).
    pub fn consumers_of(&self, j: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for i in (j + 1)..self.layers.len() {
            if self.input_of(i) == Some(j) {
                out.push(i);
            } else if let LayerKind::Add { source } = self.layers[i].kind {
                if source == j {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Infers the activation shape after every layer. Errors name the layer.
    pub fn infer_shapes(&self) -> Result<Vec<ActShape>> {
        let mut shapes: Vec<ActShape> = Vec::with_capacity(self.layers.len());
        let input_shape = ActShape::Chw(self.input.channels, self.input.height, self.input.width);
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = match self.input_of(i) {
                None => input_shape,
                Some(j) => shapes[j],
            };
            let cur = match &layer.kind {
                LayerKind::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                    ..
                } => match cur {
                    ActShape::Chw(c, h, w) if c == *in_channels => {
                        if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                            return Err(Error::UnresolvableShape {
                                layer: layer.name.clone(),
                                detail: format!("kernel {kernel} exceeds padded input {h}x{w}"),
                            });
                        }
                        let oh = (h + 2 * padding - kernel) / stride + 1;
                        let ow = (w + 2 * padding - kernel) / stride + 1;
                        ActShape::Chw(*out_channels, oh, ow)
                    }
                    other => {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("expected {} input channels, got {:?}", in_channels, other),
                        })
                    }
                },
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => match cur {
                    ActShape::Flat(n) if n == *in_features => ActShape::Flat(*out_features),
                    other => {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("expected {} features, got {:?}", in_features, other),
                        })
                    }
                },
                LayerKind::BatchNorm2d { channels } => match cur {
                    ActShape::Chw(c, _, _) if c == *channels => cur,
                    other => {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("expected {} channels, got {:?}", channels, other),
                        })
                    }
                },
                LayerKind::Relu => cur,
                LayerKind::AvgPool { kernel, stride } => match cur {
                    ActShape::Chw(c, h, w) if h >= *kernel && w >= *kernel => {
                        ActShape::Chw(c, (h - kernel) / stride + 1, (w - kernel) / stride + 1)
                    }
                    other => {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("avgpool {kernel} on {:?}", other),
                        })
                    }
                },
                LayerKind::MaxPool {
                    kernel,
                    stride,
                    padding,
                } => match cur {
                    ActShape::Chw(c, h, w) if h + 2 * padding >= *kernel => ActShape::Chw(
                        c,
                        (h + 2 * padding - kernel) / stride + 1,
                        (w + 2 * padding - kernel) / stride + 1,
                    ),
                    other => {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("maxpool {kernel} on {:?}", other),
                        })
                    }
                },
                LayerKind::Add { source } => {
                    let src = shapes.get(*source).copied().ok_or_else(|| {
                        Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("add source {source} not before layer {i}"),
                        }
                    })?;
                    if src != cur {
                        return Err(Error::UnresolvableShape {
                            layer: layer.name.clone(),
                            detail: format!("add operands differ: {:?} vs {:?}", src, cur),
                        });
                    }
                    cur
                }
                LayerKind::Flatten => ActShape::Flat(cur.numel()),
            };
            shapes.push(cur);
        }
        Ok(shapes)
    }

    /// Names of trainable parameters (excludes batchnorm running stats).
    pub fn trainable_param_names(&self) -> Vec<String> {
        self.params
            .keys()
            .filter(|n| !n.ends_with(".running_mean") && !n.ends_with(".running_var"))
            .cloned()
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.trainable_param_names()
            .iter()
            .map(|n| self.params[n].len())
            .sum()
    }

    /// Indices of conv layers, in order.
    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.kind, LayerKind::Conv2d { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}
