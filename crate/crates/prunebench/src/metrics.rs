//! Trainability accuracy and over-seed run statistics.

use crate::error::{Error, Result};
use crate::planner::LRSchedule;

/// Per-epoch top-1 test accuracy (%) with the schedule it was trained under.
#[derive(Clone, Debug)]
pub struct AccuracyCurve {
    pub accuracies: Vec<f64>,
    pub schedule: LRSchedule,
}

impl AccuracyCurve {
    pub fn new(accuracies: Vec<f64>, schedule: LRSchedule) -> Result<Self> {
        if accuracies.len() != schedule.total_epochs {
            return Err(Error::Metric(format!(
                "curve length {} does not match schedule total {}",
                accuracies.len(),
                schedule.total_epochs
            )));
        }
        if accuracies.iter().any(|a| !(0.0..=100.0).contains(a)) {
            return Err(Error::Metric("accuracies must lie in [0, 100]".into()));
        }
        Ok(AccuracyCurve { accuracies, schedule })
    }
}

/// Trainability accuracy: the mean test accuracy over the first LR stage.
/// A higher value means the schedule trains the network faster early on.
pub fn trainability_accuracy(curve: &AccuracyCurve) -> Result<f64> {
    let n = curve.schedule.first_stage_epochs().min(curve.accuracies.len());
    if n == 0 {
        return Err(Error::Metric("first LR stage is empty".into()));
    }
    Ok(curve.accuracies[..n].iter().sum::<f64>() / n as f64)
}

/// Mean and sample (n-1) standard deviation over seeds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    /// Renders in the `mean±std` convention.
    pub fn render(&self) -> String {
        if self.n == 1 {
            format!("{:.2} (n=1, std undefined)", self.mean)
        } else {
            format!("{:.2}±{:.2}", self.mean, self.std)
        }
    }
}

/// Aggregates a sample of per-seed values (final accuracy or T).
pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Metric("aggregate requires at least one run".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    Ok(Summary { mean, std, n })
}
