//! L1-norm structured filter pruning.
//!
//! Ranks filters by L1 norm, selects a keep-set per prunable conv, propagates
//! the induced input slices through dependent layers, and physically rebuilds
//! a small-dense graph. A masked large-sparse variant serves as the
//! function-preservation oracle for the rebuild.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{ActShape, LayerKind, ModelGraph};
use crate::tensor::Tensor;
use crate::zoo::imagenet_stage_of;

/// Filter selection criterion. Random ranking exists for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Criterion {
    L1,
    Random { seed: u64 },
}

/// Pruning ratio specification.
#[derive(Clone, Debug, PartialEq)]
pub enum RatioSpec {
    /// Uniform layerwise ratio over all prunable convs.
    Global(f32),
    /// Stage-wise vector [first conv, stage1..4, classifier] for the static
    /// ImageNet graphs. First and last entries must be zero (spared layers).
    StageWise([f32; 6]),
}

#[derive(Clone, Debug)]
pub struct PruneConfig {
    pub ratios: RatioSpec,
    pub criterion: Criterion,
}

impl PruneConfig {
    pub fn uniform(ratio: f32) -> Self {
        PruneConfig {
            ratios: RatioSpec::Global(ratio),
            criterion: Criterion::L1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |r: f32| -> Result<()> {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidPlan(format!(
                    "pruning ratio must be in [0, 1), got {r}"
                )));
            }
            Ok(())
        };
        match &self.ratios {
            RatioSpec::Global(r) => check(*r)?,
            RatioSpec::StageWise(v) => {
                for r in v {
                    check(*r)?;
                }
                if v[0] != 0.0 || v[5] != 0.0 {
                    return Err(Error::InvalidPlan(
                        "stage vector must spare first conv and classifier (entries 0 and 5)"
                            .into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn ratio_for(&self, layer_name: &str) -> f32 {
        match &self.ratios {
            RatioSpec::Global(r) => *r,
            RatioSpec::StageWise(v) => imagenet_stage_of(
                layer_name
                    .split_once('.')
                    .map(|(s, _)| s)
                    .unwrap_or(layer_name),
            )
            .map(|s| v[s])
            .unwrap_or(0.0),
        }
    }
}

/// Induced input slice for a layer downstream of a pruned conv.
#[derive(Clone, Debug, PartialEq)]
pub enum Induced {
    /// Kept input channel indices (conv / batchnorm).
    Channels(Vec<usize>),
    /// Kept input feature indices (linear after flatten).
    Features(Vec<usize>),
}

/// Per-conv kept output channels plus the induced slices they imply.
#[derive(Clone, Debug, Default)]
pub struct KeepPlan {
    /// Prunable conv name -> sorted kept output-channel indices.
    pub kept_out: BTreeMap<String, Vec<usize>>,
    /// Dependent layer name -> induced kept input indices.
    pub induced: BTreeMap<String, Induced>,
}

/// Keep-count law: kept = max(1, floor((1 - r) * C + 0.5)).
pub fn keep_count(channels: usize, ratio: f32) -> usize {
    (((1.0 - ratio as f64) * channels as f64 + 0.5).floor() as usize).max(1)
}

/// Per-filter L1 norms plus filter indices in descending-norm order
/// (ties broken by lower index first).
pub fn l1_rank(weight: &Tensor) -> (Vec<f32>, Vec<usize>) {
    assert_eq!(weight.shape().len(), 4, "conv weight must have rank 4");
    let filters = weight.shape()[0];
    let per_filter = weight.len() / filters;
    let norms: Vec<f32> = (0..filters)
        .map(|f| {
            // f64 accumulation keeps the ranking stable for large filters
            weight.data()[f * per_filter..(f + 1) * per_filter]
                .iter()
                .map(|v| v.abs() as f64)
                .sum::<f64>() as f32
        })
        .collect();
    let mut order: Vec<usize> = (0..filters).collect();
    order.sort_by(|&a, &b| {
        norms[b]
            .partial_cmp(&norms[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    (norms, order)
}

fn select_kept(
    weight: Option<&Tensor>,
    out_channels: usize,
    ratio: f32,
    criterion: Criterion,
    layer_name: &str,
) -> Vec<usize> {
    let kept_n = keep_count(out_channels, ratio);
    let mut kept: Vec<usize> = match (criterion, weight) {
        (Criterion::L1, Some(w)) => {
            let (_, order) = l1_rank(w);
            order[..kept_n].to_vec()
        }
        (Criterion::Random { seed }, _) => {
            // Stable per-layer seed so plans do not depend on layer order.
            let mut h = 0u64;
            for b in layer_name.bytes() {
                h = h.wrapping_mul(131).wrapping_add(b as u64);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ h);
            let mut idx: Vec<usize> = (0..out_channels).collect();
            idx.shuffle(&mut rng);
            idx[..kept_n].to_vec()
        }
        // Unmaterialized graphs: structural pruning keeps the first channels.
        (Criterion::L1, None) => (0..kept_n).collect(),
    };
    kept.sort_unstable();
    kept
}

/// Computes the keep plan for a model under a prune config.
///
/// Prunable convs keep their top-(1-r) filters; the batchnorm after a pruned
/// conv and the next conv's (or classifier's) input channels are sliced to
/// the kept set. Residual add channel counts are untouched by construction:
/// block-last convs are never prunable.
pub fn plan(model: &ModelGraph, cfg: &PruneConfig) -> Result<KeepPlan> {
    cfg.validate()?;
    let shapes = model.infer_shapes()?;
    let mut plan = KeepPlan::default();
    for ci in model.conv_indices() {
        let layer = &model.layers[ci];
        let (out_channels, prunable) = match layer.kind {
            LayerKind::Conv2d {
                out_channels,
                prunable,
                ..
            } => (out_channels, prunable),
            _ => unreachable!(),
        };
        let ratio = cfg.ratio_for(&layer.name);
        if !prunable || ratio == 0.0 {
            continue;
        }
        let weight = model.params.get(&format!("{}.weight", layer.name));
        let kept = select_kept(weight, out_channels, ratio, cfg.criterion, &layer.name);
        propagate(model, &shapes, ci, &kept, &mut plan)?;
        plan.kept_out.insert(layer.name.clone(), kept);
    }
    Ok(plan)
}

/// Walks consumers of a pruned conv, recording induced input slices.
fn propagate(
    model: &ModelGraph,
    shapes: &[ActShape],
    conv_idx: usize,
    kept: &[usize],
    plan: &mut KeepPlan,
) -> Result<()> {
    let mut frontier = vec![conv_idx];
    while let Some(j) = frontier.pop() {
        for k in model.consumers_of(j) {
            let layer = &model.layers[k];
            match &layer.kind {
                LayerKind::BatchNorm2d { .. } => {
                    plan.induced
                        .insert(layer.name.clone(), Induced::Channels(kept.to_vec()));
                    frontier.push(k);
                }
                LayerKind::Relu | LayerKind::AvgPool { .. } | LayerKind::MaxPool { .. } => {
                    frontier.push(k);
                }
                LayerKind::Conv2d { .. } => {
                    plan.induced
                        .insert(layer.name.clone(), Induced::Channels(kept.to_vec()));
                }
                LayerKind::Flatten => {
                    // Per-channel spatial extent of the flatten input.
                    let hw = match shapes[j] {
                        ActShape::Chw(_, h, w) => h * w,
                        ActShape::Flat(_) => {
                            return Err(Error::InvalidPlan(format!(
                                "flatten `{}` has flat input",
                                layer.name
                            )))
                        }
                    };
                    let features: Vec<usize> = kept
                        .iter()
                        .flat_map(|c| c * hw..(c + 1) * hw)
                        .collect();
                    for m in model.consumers_of(k) {
                        match &model.layers[m].kind {
                            LayerKind::Linear { .. } => {
                                plan.induced.insert(
                                    model.layers[m].name.clone(),
                                    Induced::Features(features.clone()),
                                );
                            }
                            other => {
                                return Err(Error::InvalidPlan(format!(
                                    "unsupported consumer after flatten: {:?}",
                                    other
                                )))
                            }
                        }
                    }
                }
                LayerKind::Linear { .. } => {
                    return Err(Error::InvalidPlan(format!(
                        "linear `{}` directly consumes a pruned conv; expected a flatten",
                        layer.name
                    )));
                }
                LayerKind::Add { .. } => {
                    return Err(Error::InvalidPlan(format!(
                        "pruned conv `{}` feeds residual add `{}`; block-last convs must be spared",
                        model.layers[conv_idx].name, layer.name
                    )));
                }
            }
        }
    }
    Ok(())
}

fn slice_rows(t: &Tensor, kept: &[usize]) -> Tensor {
    let row = t.len() / t.shape()[0];
    let mut shape = t.shape().to_vec();
    shape[0] = kept.len();
    let mut data = Vec::with_capacity(kept.len() * row);
    for &r in kept {
        data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
    }
    Tensor::new(shape, data)
}

fn slice_conv_in(t: &Tensor, kept_in: &[usize]) -> Tensor {
    let (oc, ic, kh, kw) = (t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]);
    let k2 = kh * kw;
    let mut data = Vec::with_capacity(oc * kept_in.len() * k2);
    for o in 0..oc {
        for &c in kept_in {
            let off = (o * ic + c) * k2;
            data.extend_from_slice(&t.data()[off..off + k2]);
        }
    }
    Tensor::new(vec![oc, kept_in.len(), kh, kw], data)
}

fn slice_linear_in(t: &Tensor, kept_features: &[usize]) -> Tensor {
    let (out_f, in_f) = (t.shape()[0], t.shape()[1]);
    let mut data = Vec::with_capacity(out_f * kept_features.len());
    for o in 0..out_f {
        let row = &t.data()[o * in_f..(o + 1) * in_f];
        for &f in kept_features {
            data.push(row[f]);
        }
    }
    Tensor::new(vec![out_f, kept_features.len()], data)
}

/// Physically rebuilds a small-dense graph: reduced channel counts, weights
/// and batchnorm scale/shift/running stats copied through the keep indices.
pub fn rebuild_small_dense(model: &ModelGraph, plan: &KeepPlan) -> Result<ModelGraph> {
    let mut out = model.clone();
    for layer in &mut out.layers {
        let kept_out = plan.kept_out.get(&layer.name);
        let induced = plan.induced.get(&layer.name);
        match &mut layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                bias,
                ..
            } => {
                if let Some(kept) = kept_out {
                    if kept.iter().any(|&c| c >= *out_channels) {
                        return Err(Error::InvalidPlan(format!(
                            "kept index out of range for `{}`",
                            layer.name
                        )));
                    }
                    *out_channels = kept.len();
                    let wname = format!("{}.weight", layer.name);
                    if let Some(w) = out.params.get(&wname) {
                        let sliced = slice_rows(w, kept);
                        out.params.insert(wname, sliced);
                        if *bias {
                            let bname = format!("{}.bias", layer.name);
                            let sliced = slice_rows(&out.params[&bname], kept);
                            out.params.insert(bname, sliced);
                        }
                    }
                }
                if let Some(Induced::Channels(kept_in)) = induced {
                    if kept_in.iter().any(|&c| c >= *in_channels) {
                        return Err(Error::InvalidPlan(format!(
                            "induced input index out of range for `{}`",
                            layer.name
                        )));
                    }
                    *in_channels = kept_in.len();
                    let wname = format!("{}.weight", layer.name);
                    if let Some(w) = out.params.get(&wname) {
                        let sliced = slice_conv_in(w, kept_in);
                        out.params.insert(wname, sliced);
                    }
                }
            }
            LayerKind::BatchNorm2d { channels } => {
                if let Some(Induced::Channels(kept)) = induced {
                    *channels = kept.len();
                    for suffix in [".weight", ".bias", ".running_mean", ".running_var"] {
                        let pname = format!("{}{}", layer.name, suffix);
                        if let Some(t) = out.params.get(&pname) {
                            let sliced = slice_rows(t, kept);
                            out.params.insert(pname, sliced);
                        }
                    }
                }
            }
            LayerKind::Linear { in_features, .. } => {
                if let Some(Induced::Features(kept)) = induced {
                    *in_features = kept.len();
                    let wname = format!("{}.weight", layer.name);
                    if let Some(w) = out.params.get(&wname) {
                        let sliced = slice_linear_in(w, kept);
                        out.params.insert(wname, sliced);
                    }
                }
            }
            _ => {}
        }
    }
    // Consistency check: the rebuilt graph must still shape-infer.
    out.infer_shapes()?;
    Ok(out)
}

/// Large-sparse oracle: zeroes pruned filters, their batchnorm scale/shift,
/// and downstream input slices. Architecture and MAC count are unchanged.
pub fn apply_mask(model: &ModelGraph, plan: &KeepPlan) -> Result<ModelGraph> {
    let mut out = model.clone();
    for layer in &model.layers {
        match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                bias,
                kernel,
                ..
            } => {
                if let Some(kept) = plan.kept_out.get(&layer.name) {
                    let keep: Vec<bool> = {
                        let mut k = vec![false; *out_channels];
                        for &c in kept {
                            k[c] = true;
                        }
                        k
                    };
                    let row = in_channels * kernel * kernel;
                    if let Some(w) = out.params.get_mut(&format!("{}.weight", layer.name)) {
                        for (c, keep_c) in keep.iter().enumerate() {
                            if !keep_c {
                                w.data_mut()[c * row..(c + 1) * row].fill(0.0);
                            }
                        }
                    }
                    if *bias {
                        if let Some(bt) = out.params.get_mut(&format!("{}.bias", layer.name)) {
                            for (c, keep_c) in keep.iter().enumerate() {
                                if !keep_c {
                                    bt.data_mut()[c] = 0.0;
                                }
                            }
                        }
                    }
                }
                if let Some(Induced::Channels(kept_in)) = plan.induced.get(&layer.name) {
                    let keep: Vec<bool> = {
                        let mut k = vec![false; *in_channels];
                        for &c in kept_in {
                            k[c] = true;
                        }
                        k
                    };
                    let k2 = kernel * kernel;
                    if let Some(w) = out.params.get_mut(&format!("{}.weight", layer.name)) {
                        for o in 0..*out_channels {
                            for (c, keep_c) in keep.iter().enumerate() {
                                if !keep_c {
                                    let off = (o * in_channels + c) * k2;
                                    w.data_mut()[off..off + k2].fill(0.0);
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::BatchNorm2d { channels } => {
                if let Some(Induced::Channels(kept)) = plan.induced.get(&layer.name) {
                    let keep: Vec<bool> = {
                        let mut k = vec![false; *channels];
                        for &c in kept {
                            k[c] = true;
                        }
                        k
                    };
                    for suffix in [".weight", ".bias"] {
                        if let Some(t) =
                            out.params.get_mut(&format!("{}{}", layer.name, suffix))
                        {
                            for (c, keep_c) in keep.iter().enumerate() {
                                if !keep_c {
                                    t.data_mut()[c] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::Linear { in_features, out_features } => {
                if let Some(Induced::Features(kept)) = plan.induced.get(&layer.name) {
                    let keep: Vec<bool> = {
                        let mut k = vec![false; *in_features];
                        for &f in kept {
                            k[f] = true;
                        }
                        k
                    };
                    if let Some(w) = out.params.get_mut(&format!("{}.weight", layer.name)) {
                        for o in 0..*out_features {
                            for (f, keep_f) in keep.iter().enumerate() {
                                if !keep_f {
                                    w.data_mut()[o * in_features + f] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
    Ok(out)
}
