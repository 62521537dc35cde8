//! Deterministic training engine: forward/backward for the supported layer
//! set, softmax cross-entropy, and momentum SGD.
//!
//! All math is f32 with a fixed summation order (loss accumulates in f64), so
//! repeated runs with the same weights and inputs are bit-identical.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};
use crate::graph::{ActShape, LayerKind, ModelGraph};
use crate::tensor::Tensor;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batchnorm cache from a train-mode forward.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub batch_mean: Vec<f32>,
    pub batch_var: Vec<f32>, // biased
    pub inv_std: Vec<f32>,
    pub x_hat: Vec<f32>,
}

/// Everything a backward pass needs from the forward pass.
pub struct Trace {
    pub mode: Mode,
    /// Per-layer output tensors, batch-major.
    pub outputs: Vec<Tensor>,
    pub bn: BTreeMap<usize, BnCache>,
    /// Maxpool argmax: flat index into the layer input, one per output element.
    pub argmax: BTreeMap<usize, Vec<u32>>,
    pub shapes: Vec<ActShape>,
}

impl Trace {
    pub fn logits(&self) -> &Tensor {
        self.outputs.last().expect("graph has no layers")
    }
}

fn gemm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], out: &mut [f32], beta: f32) {
    let a = ArrayView2::from_shape((m, k), a).unwrap();
    let b = ArrayView2::from_shape((k, n), b).unwrap();
    let mut c = ArrayViewMut2::from_shape((m, n), out).unwrap();
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

/// Unpacks one sample's (c, h, w) block into (c*k*k, oh*ow) columns.
#[allow(clippy::too_many_arguments)]
fn im2col(
    input: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [f32],
) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let ohow = oh * ow;
    for ch in 0..c {
        let plane = &input[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[(ch * k * k + ky * k + kx) * ohow..][..ohow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        row[oy * ow..(oy + 1) * ow].fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        row[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds (c*k*k, oh*ow) columns back into one sample's (c, h, w) block.
#[allow(clippy::too_many_arguments)]
fn col2im_add(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dinput: &mut [f32],
) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let ohow = oh * ow;
    for ch in 0..c {
        let plane = &mut dinput[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[(ch * k * k + ky * k + kx) * ohow..][..ohow];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Runs the graph and caches per-layer outputs. Pure: running stats are read
/// but never written; use [`update_running_stats`] after a train-mode pass.
pub fn forward_cached(model: &ModelGraph, batch: &Tensor, mode: Mode) -> Result<Trace> {
    let shapes = model.infer_shapes()?;
    let bs = batch.shape();
    if bs.len() != 4
        || bs[1] != model.input.channels
        || bs[2] != model.input.height
        || bs[3] != model.input.width
    {
        return Err(Error::ShapeMismatch {
            layer: "<input>".into(),
            detail: format!(
                "batch shape {:?} does not match input spec {}x{}x{}",
                bs, model.input.channels, model.input.height, model.input.width
            ),
        });
    }
    let b = bs[0];
    let mut outputs: Vec<Tensor> = Vec::with_capacity(model.layers.len());
    let mut bn_caches = BTreeMap::new();
    let mut argmaxes = BTreeMap::new();
    let mut cols = Vec::new();

    for (i, layer) in model.layers.iter().enumerate() {
        let (input, in_shape): (&Tensor, ActShape) = match model.input_of(i) {
            None => (
                batch,
                ActShape::Chw(model.input.channels, model.input.height, model.input.width),
            ),
            Some(j) => (&outputs[j], shapes[j]),
        };
        let out = match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
                ..
            } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let (oc, oh, ow) = match shapes[i] {
                    ActShape::Chw(oc, oh, ow) => (oc, oh, ow),
                    _ => unreachable!(),
                };
                let weight = &model.params[&format!("{}.weight", layer.name)];
                let k2 = kernel * kernel;
                cols.resize(in_channels * k2 * oh * ow, 0.0);
                let mut out = Tensor::zeros(vec![b, oc, oh, ow]);
                for s in 0..b {
                    im2col(
                        &input.data()[s * c * h * w..(s + 1) * c * h * w],
                        c,
                        h,
                        w,
                        *kernel,
                        *stride,
                        *padding,
                        &mut cols,
                    );
                    gemm(
                        *out_channels,
                        in_channels * k2,
                        oh * ow,
                        weight.data(),
                        &cols,
                        &mut out.data_mut()[s * oc * oh * ow..(s + 1) * oc * oh * ow],
                        0.0,
                    );
                }
                if *bias {
                    let bvec = &model.params[&format!("{}.bias", layer.name)];
                    for s in 0..b {
                        for ch in 0..oc {
                            let off = (s * oc + ch) * oh * ow;
                            let bv = bvec.data()[ch];
                            for v in &mut out.data_mut()[off..off + oh * ow] {
                                *v += bv;
                            }
                        }
                    }
                }
                out
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                let weight = &model.params[&format!("{}.weight", layer.name)];
                let bias = &model.params[&format!("{}.bias", layer.name)];
                let mut out = Tensor::zeros(vec![b, *out_features]);
                // out[s, o] = sum_i x[s, i] * w[o, i] + b[o]
                for s in 0..b {
                    let x = &input.data()[s * in_features..(s + 1) * in_features];
                    let row = &mut out.data_mut()[s * out_features..(s + 1) * out_features];
                    for (o, r) in row.iter_mut().enumerate() {
                        let wrow = &weight.data()[o * in_features..(o + 1) * in_features];
                        let mut acc = bias.data()[o];
                        for (xv, wv) in x.iter().zip(wrow) {
                            acc += xv * wv;
                        }
                        *r = acc;
                    }
                }
                out
            }
            LayerKind::BatchNorm2d { channels } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                debug_assert_eq!(c, *channels);
                let gamma = &model.params[&format!("{}.weight", layer.name)];
                let beta = &model.params[&format!("{}.bias", layer.name)];
                let hw = h * w;
                let mut out = Tensor::zeros(vec![b, c, h, w]);
                match mode {
                    Mode::Train => {
                        let n = (b * hw) as f64;
                        let mut mean = vec![0.0f32; c];
                        let mut var = vec![0.0f32; c];
                        for ch in 0..c {
                            let mut acc = 0.0f64;
                            for s in 0..b {
                                let off = (s * c + ch) * hw;
                                for v in &input.data()[off..off + hw] {
                                    acc += *v as f64;
                                }
                            }
                            mean[ch] = (acc / n) as f32;
                            let mut vacc = 0.0f64;
                            for s in 0..b {
                                let off = (s * c + ch) * hw;
                                for v in &input.data()[off..off + hw] {
                                    let d = *v as f64 - mean[ch] as f64;
                                    vacc += d * d;
                                }
                            }
                            var[ch] = (vacc / n) as f32;
                        }
                        let inv_std: Vec<f32> =
                            var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                        let mut x_hat = vec![0.0f32; b * c * hw];
                        for s in 0..b {
                            for ch in 0..c {
                                let off = (s * c + ch) * hw;
                                for j in 0..hw {
                                    let xh = (input.data()[off + j] - mean[ch]) * inv_std[ch];
                                    x_hat[off + j] = xh;
                                    out.data_mut()[off + j] =
                                        gamma.data()[ch] * xh + beta.data()[ch];
                                }
                            }
                        }
                        bn_caches.insert(
                            i,
                            BnCache {
                                batch_mean: mean,
                                batch_var: var,
                                inv_std,
                                x_hat,
                            },
                        );
                    }
                    Mode::Eval => {
                        let rm = &model.params[&format!("{}.running_mean", layer.name)];
                        let rv = &model.params[&format!("{}.running_var", layer.name)];
                        for ch in 0..c {
                            let scale = gamma.data()[ch] / (rv.data()[ch] + BN_EPS).sqrt();
                            let shift = beta.data()[ch] - scale * rm.data()[ch];
                            for s in 0..b {
                                let off = (s * c + ch) * hw;
                                for j in 0..hw {
                                    out.data_mut()[off + j] = scale * input.data()[off + j] + shift;
                                }
                            }
                        }
                    }
                }
                out
            }
            LayerKind::Relu => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            LayerKind::AvgPool { kernel, stride } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let (_, oh, ow) = match shapes[i] {
                    ActShape::Chw(c, oh, ow) => (c, oh, ow),
                    _ => unreachable!(),
                };
                let inv = 1.0 / ((kernel * kernel) as f32);
                let mut out = Tensor::zeros(vec![b, c, oh, ow]);
                for s in 0..b {
                    for ch in 0..c {
                        let plane = &input.data()[(s * c + ch) * h * w..][..h * w];
                        let oplane = &mut out.data_mut()[(s * c + ch) * oh * ow..][..oh * ow];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = 0.0f32;
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        acc += plane[(oy * stride + ky) * w + ox * stride + kx];
                                    }
                                }
                                oplane[oy * ow + ox] = acc * inv;
                            }
                        }
                    }
                }
                out
            }
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let (_, oh, ow) = match shapes[i] {
                    ActShape::Chw(c, oh, ow) => (c, oh, ow),
                    _ => unreachable!(),
                };
                let mut out = Tensor::zeros(vec![b, c, oh, ow]);
                let mut amax = vec![0u32; b * c * oh * ow];
                for s in 0..b {
                    for ch in 0..c {
                        let base = (s * c + ch) * h * w;
                        let plane = &input.data()[base..base + h * w];
                        let obase = (s * c + ch) * oh * ow;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut best = f32::NEG_INFINITY;
                                let mut best_idx = 0usize;
                                for ky in 0..*kernel {
                                    let iy = (oy * stride + ky) as isize - *padding as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for kx in 0..*kernel {
                                        let ix = (ox * stride + kx) as isize - *padding as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let idx = iy as usize * w + ix as usize;
                                        if plane[idx] > best {
                                            best = plane[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                out.data_mut()[obase + oy * ow + ox] = best;
                                amax[obase + oy * ow + ox] = (base + best_idx) as u32;
                            }
                        }
                    }
                }
                argmaxes.insert(i, amax);
                out
            }
            LayerKind::Add { source } => {
                let src = &outputs[*source];
                let mut out = input.clone();
                for (o, s) in out.data_mut().iter_mut().zip(src.data()) {
                    *o += s;
                }
                out
            }
            LayerKind::Flatten => input.clone().reshaped(vec![b, in_shape.numel()]),
        };
        outputs.push(out);
    }
    Ok(Trace {
        mode,
        outputs,
        bn: bn_caches,
        argmax: argmaxes,
        shapes,
    })
}

/// Eval-mode forward; returns logits of shape (batch, num_classes).
pub fn forward(model: &ModelGraph, batch: &Tensor) -> Result<Tensor> {
    let trace = forward_cached(model, batch, Mode::Eval)?;
    Ok(trace.outputs.into_iter().last().unwrap())
}

/// Folds the batch statistics cached by a train-mode forward into the
/// model's running stats (momentum update, unbiased variance).
pub fn update_running_stats(model: &mut ModelGraph, trace: &Trace, batch_size: usize) {
    for (idx, cache) in &trace.bn {
        // Per-channel sample count for this layer: batch × spatial extent.
        let n = match trace.shapes[*idx] {
            ActShape::Chw(_, h, w) => (batch_size * h * w) as f32,
            ActShape::Flat(_) => batch_size as f32,
        };
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let name = model.layers[*idx].name.clone();
        let rm = model
            .params
            .get_mut(&format!("{name}.running_mean"))
            .expect("running_mean present");
        for (r, m) in rm.data_mut().iter_mut().zip(&cache.batch_mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = model
            .params
            .get_mut(&format!("{name}.running_var"))
            .expect("running_var present");
        for (r, v) in rv.data_mut().iter_mut().zip(&cache.batch_var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * (v * unbias);
        }
    }
}

/// Mean softmax cross-entropy over the batch, accumulated in f64.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f32, Tensor)> {
    let b = logits.shape()[0];
    let k = logits.shape()[1];
    assert_eq!(labels.len(), b, "one label per sample");
    let mut dlogits = Tensor::zeros(vec![b, k]);
    let mut loss = 0.0f64;
    for s in 0..b {
        let row = &logits.data()[s * k..(s + 1) * k];
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteLoss { batch_index: s });
        }
        let maxv = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let mut denom = 0.0f64;
        for v in row {
            denom += ((*v as f64) - maxv).exp();
        }
        let label = labels[s];
        assert!(label < k, "label out of range");
        let logp = (row[label] as f64 - maxv) - denom.ln();
        loss -= logp;
        let drow = &mut dlogits.data_mut()[s * k..(s + 1) * k];
        for (j, v) in row.iter().enumerate() {
            let p = ((*v as f64 - maxv).exp() / denom) as f32;
            drow[j] = (p - if j == label { 1.0 } else { 0.0 }) / b as f32;
        }
    }
    let loss = (loss / b as f64) as f32;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { batch_index: 0 });
    }
    Ok((loss, dlogits))
}

/// Backpropagates through a cached forward trace. Returns one gradient per
/// trainable parameter, keyed by parameter name.
pub fn backward_from_trace(
    model: &ModelGraph,
    batch: &Tensor,
    trace: &Trace,
    dlogits: Tensor,
) -> Result<BTreeMap<String, Tensor>> {
    assert_eq!(trace.mode, Mode::Train, "backward requires a train-mode trace");
    let n_layers = model.layers.len();
    let b = batch.shape()[0];
    let mut grads: BTreeMap<String, Tensor> = BTreeMap::new();
    // dout[i]: gradient wrt the output of layer i.
    let mut dout: Vec<Option<Tensor>> = vec![None; n_layers];
    dout[n_layers - 1] = Some(dlogits);
    let mut cols = Vec::new();
    let mut dcols = Vec::new();

    for i in (0..n_layers).rev() {
        let dy = match dout[i].take() {
            Some(t) => t,
            None => continue, // output unused (cannot happen in well-formed graphs)
        };
        let layer = &model.layers[i];
        let in_idx = model.input_of(i);
        let (input, in_shape): (&Tensor, ActShape) = match in_idx {
            None => (
                batch,
                ActShape::Chw(model.input.channels, model.input.height, model.input.width),
            ),
            Some(j) => (&trace.outputs[j], trace.shapes[j]),
        };
        let push_dx = |dout: &mut Vec<Option<Tensor>>, dx: Tensor, target: usize| {
            match &mut dout[target] {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(dx.data()) {
                        *e += v;
                    }
                }
                slot @ None => *slot = Some(dx),
            }
        };
        match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                bias,
                ..
            } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let (oc, oh, ow) = match trace.shapes[i] {
                    ActShape::Chw(oc, oh, ow) => (oc, oh, ow),
                    _ => unreachable!(),
                };
                let k2 = kernel * kernel;
                let wname = format!("{}.weight", layer.name);
                let weight = &model.params[&wname];
                let mut dw = Tensor::zeros(weight.shape().to_vec());
                let mut dx = Tensor::zeros(vec![b, c, h, w]);
                cols.resize(in_channels * k2 * oh * ow, 0.0);
                dcols.resize(in_channels * k2 * oh * ow, 0.0);
                for s in 0..b {
                    im2col(
                        &input.data()[s * c * h * w..(s + 1) * c * h * w],
                        c,
                        h,
                        w,
                        *kernel,
                        *stride,
                        *padding,
                        &mut cols,
                    );
                    let dys = &dy.data()[s * oc * oh * ow..(s + 1) * oc * oh * ow];
                    // dW += dY (oc, ohow) x cols^T (ohow, c*k2)
                    {
                        let a = ArrayView2::from_shape((oc, oh * ow), dys).unwrap();
                        let bm = ArrayView2::from_shape((in_channels * k2, oh * ow), &cols[..])
                            .unwrap();
                        let mut cview =
                            ArrayViewMut2::from_shape((oc, in_channels * k2), dw.data_mut())
                                .unwrap();
                        general_mat_mul(1.0, &a, &bm.t(), 1.0, &mut cview);
                    }
                    // dcols = W^T (c*k2, oc) x dY (oc, ohow)
                    {
                        let wv = ArrayView2::from_shape((oc, in_channels * k2), weight.data())
                            .unwrap();
                        let a = ArrayView2::from_shape((oc, oh * ow), dys).unwrap();
                        let mut cview =
                            ArrayViewMut2::from_shape((in_channels * k2, oh * ow), &mut dcols[..])
                                .unwrap();
                        general_mat_mul(1.0, &wv.t(), &a, 0.0, &mut cview);
                    }
                    col2im_add(
                        &dcols,
                        c,
                        h,
                        w,
                        *kernel,
                        *stride,
                        *padding,
                        &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w],
                    );
                }
                grads.insert(wname, dw);
                if *bias {
                    let mut db = Tensor::zeros(vec![*out_channels]);
                    for s in 0..b {
                        for ch in 0..oc {
                            let off = (s * oc + ch) * oh * ow;
                            let mut acc = 0.0f32;
                            for v in &dy.data()[off..off + oh * ow] {
                                acc += v;
                            }
                            db.data_mut()[ch] += acc;
                        }
                    }
                    grads.insert(format!("{}.bias", layer.name), db);
                }
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => {
                let wname = format!("{}.weight", layer.name);
                let weight = &model.params[&wname];
                let mut dw = Tensor::zeros(vec![*out_features, *in_features]);
                let mut db = Tensor::zeros(vec![*out_features]);
                let mut dx = Tensor::zeros(vec![b, *in_features]);
                // dW = dY^T X ; dX = dY W
                gemm_t_a(b, *out_features, *in_features, dy.data(), input.data(), dw.data_mut());
                gemm(b, *out_features, *in_features, dy.data(), weight.data(), dx.data_mut(), 0.0);
                for s in 0..b {
                    for o in 0..*out_features {
                        db.data_mut()[o] += dy.data()[s * out_features + o];
                    }
                }
                grads.insert(wname, dw);
                grads.insert(format!("{}.bias", layer.name), db);
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::BatchNorm2d { channels } => {
                let cache = &trace.bn[&i];
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                debug_assert_eq!(c, *channels);
                let hw = h * w;
                let n = (b * hw) as f32;
                let gamma = &model.params[&format!("{}.weight", layer.name)];
                let mut dgamma = Tensor::zeros(vec![c]);
                let mut dbeta = Tensor::zeros(vec![c]);
                let mut sum_dy = vec![0.0f32; c];
                let mut sum_dy_xhat = vec![0.0f32; c];
                for s in 0..b {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        for j in 0..hw {
                            let d = dy.data()[off + j];
                            sum_dy[ch] += d;
                            sum_dy_xhat[ch] += d * cache.x_hat[off + j];
                        }
                    }
                }
                for ch in 0..c {
                    dbeta.data_mut()[ch] = sum_dy[ch];
                    dgamma.data_mut()[ch] = sum_dy_xhat[ch];
                }
                let mut dx = Tensor::zeros(vec![b, c, h, w]);
                for s in 0..b {
                    for ch in 0..c {
                        let off = (s * c + ch) * hw;
                        let scale = gamma.data()[ch] * cache.inv_std[ch] / n;
                        for j in 0..hw {
                            dx.data_mut()[off + j] = scale
                                * (n * dy.data()[off + j]
                                    - sum_dy[ch]
                                    - cache.x_hat[off + j] * sum_dy_xhat[ch]);
                        }
                    }
                }
                grads.insert(format!("{}.weight", layer.name), dgamma);
                grads.insert(format!("{}.bias", layer.name), dbeta);
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::Relu => {
                let mut dx = dy;
                for (d, o) in dx.data_mut().iter_mut().zip(trace.outputs[i].data()) {
                    if *o <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::AvgPool { kernel, stride } => {
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let (_, oh, ow) = match trace.shapes[i] {
                    ActShape::Chw(c, oh, ow) => (c, oh, ow),
                    _ => unreachable!(),
                };
                let inv = 1.0 / ((kernel * kernel) as f32);
                let mut dx = Tensor::zeros(vec![b, c, h, w]);
                for s in 0..b {
                    for ch in 0..c {
                        let obase = (s * c + ch) * oh * ow;
                        let ibase = (s * c + ch) * h * w;
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let g = dy.data()[obase + oy * ow + ox] * inv;
                                for ky in 0..*kernel {
                                    for kx in 0..*kernel {
                                        dx.data_mut()
                                            [ibase + (oy * stride + ky) * w + ox * stride + kx] +=
                                            g;
                                    }
                                }
                            }
                        }
                    }
                }
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::MaxPool { .. } => {
                let amax = &trace.argmax[&i];
                let (c, h, w) = match in_shape {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                let mut dx = Tensor::zeros(vec![b, c, h, w]);
                for (j, g) in dy.data().iter().enumerate() {
                    dx.data_mut()[amax[j] as usize] += g;
                }
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
            LayerKind::Add { source } => {
                push_dx(&mut dout, dy.clone(), *source);
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dy, j);
                }
            }
            LayerKind::Flatten => {
                let dx = match in_shape {
                    ActShape::Chw(c, h, w) => dy.reshaped(vec![b, c, h, w]),
                    ActShape::Flat(n) => dy.reshaped(vec![b, n]),
                };
                if let Some(j) = in_idx {
                    push_dx(&mut dout, dx, j);
                }
            }
        }
    }
    Ok(grads)
}

// dW (out, in) = dY^T (out, b) x X (b, in), accumulated into out buffer.
fn gemm_t_a(b: usize, out_f: usize, in_f: usize, dy: &[f32], x: &[f32], dw: &mut [f32]) {
    let a = ArrayView2::from_shape((b, out_f), dy).unwrap();
    let xv = ArrayView2::from_shape((b, in_f), x).unwrap();
    let mut c = ArrayViewMut2::from_shape((out_f, in_f), dw).unwrap();
    general_mat_mul(1.0, &a.t(), &xv, 1.0, &mut c);
}

/// Pure train-mode loss + gradients; running stats are untouched.
pub fn backward(
    model: &ModelGraph,
    batch: &Tensor,
    labels: &[usize],
) -> Result<(BTreeMap<String, Tensor>, f32)> {
    let trace = forward_cached(model, batch, Mode::Train)?;
    let (loss, dlogits) = cross_entropy(trace.logits(), labels)?;
    let grads = backward_from_trace(model, batch, &trace, dlogits)?;
    Ok((grads, loss))
}

/// Pure train-mode loss only (finite-difference oracle hook).
pub fn loss_train_mode(model: &ModelGraph, batch: &Tensor, labels: &[usize]) -> Result<f32> {
    let trace = forward_cached(model, batch, Mode::Train)?;
    Ok(cross_entropy(trace.logits(), labels)?.0)
}

/// Momentum-SGD state. One velocity buffer per trainable parameter.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub velocity: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(model: &ModelGraph, learning_rate: f32, momentum: f32, weight_decay: f32) -> Self {
        let velocity = model
            .trainable_param_names()
            .into_iter()
            .map(|n| {
                let shape = model.params[&n].shape().to_vec();
                (n, Tensor::zeros(shape))
            })
            .collect();
        OptimizerState {
            learning_rate,
            momentum,
            weight_decay,
            velocity,
        }
    }
}

/// v <- m*v + g + wd*w ; w <- w - lr*v
pub fn sgd_step(
    model: &mut ModelGraph,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
) {
    for (name, grad) in grads {
        let w = model.params.get_mut(name).expect("param exists");
        let v = state.velocity.get_mut(name).expect("velocity exists");
        assert_eq!(w.shape(), grad.shape(), "grad shape mirrors param");
        let (m, wd, lr) = (state.momentum, state.weight_decay, state.learning_rate);
        for ((wv, gv), vv) in w.data_mut().iter_mut().zip(grad.data()).zip(v.data_mut()) {
            *vv = m * *vv + gv + wd * *wv;
            *wv -= lr * *vv;
        }
    }
}
