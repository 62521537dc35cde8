//! Static MAC/parameter accounting over a ModelGraph.
//!
//! MACs are counted natively (one multiply-accumulate = 1). Published "FLOPs"
//! figures mix conventions, so reports carry an explicit convention tag and
//! speedup is only defined between reports of the same convention.

use std::fmt;

use crate::error::{Error, Result};
use crate::graph::{ActShape, LayerKind, ModelGraph};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Convention {
    /// 1 MAC = 1 unit.
    Mac,
    /// 1 MAC = 2 units (multiply + add counted separately).
    TwoMac,
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Convention::Mac => write!(f, "MAC"),
            Convention::TwoMac => write!(f, "2xMAC"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FlopsReport {
    /// (layer name, MACs, params), in graph order. Zero-MAC layers omitted.
    pub per_layer: Vec<(String, u64, u64)>,
    pub total_macs: u64,
    pub total_params: u64,
    pub convention: Convention,
}

impl FlopsReport {
    /// Same report under the 2xMAC convention.
    pub fn with_convention(&self, convention: Convention) -> FlopsReport {
        if convention == self.convention {
            return self.clone();
        }
        let scale = |m: u64| match (self.convention, convention) {
            (Convention::Mac, Convention::TwoMac) => m * 2,
            (Convention::TwoMac, Convention::Mac) => m / 2,
            _ => m,
        };
        FlopsReport {
            per_layer: self
                .per_layer
                .iter()
                .map(|(n, m, p)| (n.clone(), scale(*m), *p))
                .collect(),
            total_macs: scale(self.total_macs),
            total_params: self.total_params,
            convention,
        }
    }

    /// Two-column text table plus totals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .per_layer
            .iter()
            .map(|(n, _, _)| n.len())
            .max()
            .unwrap_or(5)
            .max(5);
        out.push_str(&format!(
            "{:<width$}  {:>14}  {:>12}\n",
            "layer", "MACs", "params"
        ));
        for (name, macs, params) in &self.per_layer {
            out.push_str(&format!("{name:<width$}  {macs:>14}  {params:>12}\n"));
        }
        out.push_str(&format!(
            "{:<width$}  {:>14}  {:>12}  ({})\n",
            "total", self.total_macs, self.total_params, self.convention
        ));
        out
    }
}

/// Counts multiply-accumulates and parameters for every layer.
///
/// conv: out_c * out_h * out_w * in_c * kH * kW; linear: in * out.
/// Elementwise ops (add, relu, batchnorm) and pools count zero MACs.
pub fn count(model: &ModelGraph) -> Result<FlopsReport> {
    let shapes = model.infer_shapes()?;
    let mut per_layer = Vec::new();
    let mut total_macs = 0u64;
    let mut total_params = 0u64;
    for (i, layer) in model.layers.iter().enumerate() {
        let (macs, params): (u64, u64) = match &layer.kind {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let (oc, oh, ow) = match shapes[i] {
                    ActShape::Chw(c, h, w) => (c, h, w),
                    _ => unreachable!(),
                };
                debug_assert_eq!(oc, *out_channels);
                let macs =
                    (oc * oh * ow) as u64 * (*in_channels as u64) * (*kernel * kernel) as u64;
                let params = (out_channels * in_channels * kernel * kernel
                    + if *bias { *out_channels } else { 0 }) as u64;
                (macs, params)
            }
            LayerKind::Linear {
                in_features,
                out_features,
            } => (
                (*in_features * *out_features) as u64,
                (*in_features * *out_features + *out_features) as u64,
            ),
            LayerKind::BatchNorm2d { channels } => (0, 2 * *channels as u64),
            _ => (0, 0),
        };
        if macs > 0 || params > 0 {
            per_layer.push((layer.name.clone(), macs, params));
        }
        total_macs += macs;
        total_params += params;
    }
    Ok(FlopsReport {
        per_layer,
        total_macs,
        total_params,
        convention: Convention::Mac,
    })
}

/// Speedup k = F1 / F2 between a dense and a pruned report.
pub fn speedup(dense: &FlopsReport, pruned: &FlopsReport) -> Result<f64> {
    if dense.convention != pruned.convention {
        return Err(Error::ConventionMismatch(
            dense.convention.to_string(),
            pruned.convention.to_string(),
        ));
    }
    if pruned.total_macs == 0 {
        return Err(Error::InvalidModel("pruned model has zero MACs".into()));
    }
    Ok(dense.total_macs as f64 / pruned.total_macs as f64)
}
