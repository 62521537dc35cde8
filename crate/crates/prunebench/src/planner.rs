//! Fairness machinery: LR-schedule synthesis, budget algebra, P{p}F{f}
//! experiment plans, and the comparison-setup classifier.

use std::fmt;

use crate::error::{Error, Result};
use crate::flops;
use crate::manifest::{ExperimentManifest, Pipeline};
use crate::pruner::{self, PruneConfig};
use crate::zoo;

/// One constant-LR stage of a step schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage {
    pub start_epoch: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleKind {
    StepDecade,
    Cosine { init_lr: f64, min_lr: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LRSchedule {
    pub kind: ScheduleKind,
    /// For step schedules: the decade stages. For cosine: a single nominal
    /// stage at the initial LR (per-epoch values come from the formula).
    pub stages: Vec<Stage>,
    pub total_epochs: usize,
    pub final_lr: f64,
}

impl LRSchedule {
    /// Learning rate in effect during epoch `e` (0-based).
    pub fn lr_at(&self, e: usize) -> f64 {
        match &self.kind {
            ScheduleKind::StepDecade => self
                .stages
                .iter()
                .rev()
                .find(|s| s.start_epoch <= e)
                .map(|s| s.lr)
                .unwrap_or(self.final_lr),
            ScheduleKind::Cosine { init_lr, min_lr } => {
                min_lr
                    + 0.5
                        * (init_lr - min_lr)
                        * (1.0 + (std::f64::consts::PI * e as f64 / self.total_epochs as f64).cos())
            }
        }
    }

    /// Length of the first LR stage: for step schedules, the epochs before
    /// the first decay; for cosine, the epochs with LR >= init/10 (a proxy,
    /// since the trainability definition presumes step stages).
    pub fn first_stage_epochs(&self) -> usize {
        match &self.kind {
            ScheduleKind::StepDecade => self
                .stages
                .get(1)
                .map(|s| s.start_epoch)
                .unwrap_or(self.total_epochs),
            ScheduleKind::Cosine { init_lr, .. } => (0..self.total_epochs)
                .take_while(|&e| self.lr_at(e) >= init_lr / 10.0)
                .count(),
        }
    }

    /// Truncates a step schedule to its first `p` epochs.
    pub fn prefix(&self, p: usize) -> Result<LRSchedule> {
        if p > self.total_epochs {
            return Err(Error::InvalidSchedule(format!(
                "prefix of {p} epochs exceeds total {}",
                self.total_epochs
            )));
        }
        let stages: Vec<Stage> = self
            .stages
            .iter()
            .copied()
            .filter(|s| s.start_epoch < p)
            .collect();
        let final_lr = stages.last().map(|s| s.lr).unwrap_or(self.final_lr);
        Ok(LRSchedule {
            kind: self.kind.clone(),
            stages,
            total_epochs: p,
            final_lr,
        })
    }

    /// Inserts `extra` epochs at the first-stage LR: the first stage grows,
    /// every later decay shifts right. Cosine schedules have no stages to
    /// extend and are rejected.
    pub fn extend_first_stage(&self, extra: usize) -> Result<LRSchedule> {
        match self.kind {
            ScheduleKind::StepDecade => {
                let stages: Vec<Stage> = self
                    .stages
                    .iter()
                    .enumerate()
                    .map(|(i, s)| Stage {
                        start_epoch: if i == 0 { 0 } else { s.start_epoch + extra },
                        lr: s.lr,
                    })
                    .collect();
                Ok(LRSchedule {
                    kind: ScheduleKind::StepDecade,
                    stages,
                    total_epochs: self.total_epochs + extra,
                    final_lr: self.final_lr,
                })
            }
            ScheduleKind::Cosine { .. } => Err(Error::InvalidSchedule(
                "first-stage extension is unsupported for cosine schedules".into(),
            )),
        }
    }
}

/// Formats an LR as a compact power of ten when it is one (`1e-1`), falling
/// back to scientific notation otherwise.
pub fn format_lr(lr: f64) -> String {
    let exp = lr.log10().round() as i32;
    let reference = 10f64.powi(exp);
    if (reference - lr).abs() <= lr.abs() * 1e-9 {
        format!("1e{exp}")
    } else {
        format!("{lr:e}")
    }
}

impl fmt::Display for LRSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ScheduleKind::StepDecade => {
                let parts: Vec<String> = self
                    .stages
                    .iter()
                    .map(|s| format!("{}:{}", s.start_epoch, format_lr(s.lr)))
                    .collect();
                write!(f, "{}", parts.join(","))
            }
            ScheduleKind::Cosine { init_lr, min_lr } => write!(
                f,
                "cosine({} epochs, {} -> {})",
                self.total_epochs,
                format_lr(*init_lr),
                format_lr(*min_lr)
            ),
        }
    }
}

/// Number of ×10 decades between two LRs; errors unless the ratio is a
/// nonnegative power of ten.
fn decades_between(init_lr: f64, final_lr: f64) -> Result<usize> {
    if init_lr <= 0.0 || final_lr <= 0.0 {
        return Err(Error::InvalidSchedule("learning rates must be positive".into()));
    }
    let ratio = init_lr / final_lr;
    let d = ratio.log10().round();
    if d < 0.0 || (10f64.powi(d as i32) - ratio).abs() > ratio * 1e-6 {
        return Err(Error::InvalidSchedule(format!(
            "init/final LR ratio {ratio} is not a power of 10 >= 1"
        )));
    }
    Ok(d as usize)
}

/// Synthesizes a step-decade schedule: one stage per decade from init to
/// final LR. Each non-final stage takes min(stage_cap, ceil(remaining/2))
/// epochs; the final stage absorbs the remainder.
pub fn synthesize_step_schedule(
    total_epochs: usize,
    init_lr: f64,
    final_lr: f64,
    stage_cap: usize,
) -> Result<LRSchedule> {
    let decades = decades_between(init_lr, final_lr)?;
    let n_stages = decades + 1;
    if total_epochs < n_stages {
        return Err(Error::InvalidSchedule(format!(
            "{total_epochs} epochs cannot give all {n_stages} stages at least one epoch"
        )));
    }
    let mut stages = Vec::with_capacity(n_stages);
    let mut start = 0usize;
    let mut remaining = total_epochs;
    for i in 0..n_stages {
        let lr = init_lr * 10f64.powi(-(i as i32));
        stages.push(Stage { start_epoch: start, lr });
        if i + 1 < n_stages {
            let len = stage_cap.min(remaining.div_ceil(2));
            // Leave at least one epoch for each later stage.
            let len = len.min(remaining - (n_stages - 1 - i));
            if len == 0 {
                return Err(Error::InvalidSchedule(
                    "stage allocation left an empty stage".into(),
                ));
            }
            start += len;
            remaining -= len;
        }
    }
    Ok(LRSchedule {
        kind: ScheduleKind::StepDecade,
        stages,
        total_epochs,
        final_lr,
    })
}

/// Cosine annealing: lr(e) = min + ½(init − min)(1 + cos(π·e/total)).
pub fn synthesize_cosine_schedule(
    total_epochs: usize,
    init_lr: f64,
    min_lr: f64,
) -> Result<LRSchedule> {
    if !(init_lr > min_lr && min_lr > 0.0) {
        return Err(Error::InvalidSchedule(
            "cosine schedule requires init_lr > min_lr > 0".into(),
        ));
    }
    Ok(LRSchedule {
        kind: ScheduleKind::Cosine { init_lr, min_lr },
        stages: vec![Stage { start_epoch: 0, lr: init_lr }],
        total_epochs,
        final_lr: min_lr,
    })
}

/// A resolved P{p}F{f} plan: pretrain p epochs under the scratch prefix,
/// prune, finetune f epochs. The finetune schedule ends at the scratch
/// schedule's final LR.
#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub pretrain: LRSchedule,
    pub prune_epoch: usize,
    pub finetune: LRSchedule,
}

pub fn plan_pxfy(
    scratch: &LRSchedule,
    prune_epoch: usize,
    finetune_epochs: usize,
    finetune_init_lr: f64,
) -> Result<ExperimentPlan> {
    if finetune_epochs == 0 {
        return Err(Error::InvalidPlan("finetune epochs must be >= 1".into()));
    }
    let pretrain = scratch.prefix(prune_epoch)?;
    let finetune =
        synthesize_step_schedule(finetune_epochs, finetune_init_lr, scratch.final_lr, 30)?;
    Ok(ExperimentPlan {
        pretrain,
        prune_epoch,
        finetune,
    })
}

/// Compute budget of a prune-finetune pipeline, for Scratch-B equivalents.
#[derive(Clone, Copy, Debug)]
pub struct BudgetSpec {
    /// Pretraining epochs (on the dense model).
    pub k1: f64,
    /// Finetuning epochs (on the pruned model).
    pub k2: f64,
    /// Dense model MACs per sample.
    pub f1: f64,
    /// Pruned model MACs per sample.
    pub f2: f64,
}

impl BudgetSpec {
    pub fn speedup(&self) -> f64 {
        self.f1 / self.f2
    }
}

/// Scratch-B epoch count: the pruned architecture trained from scratch for
/// round(K1·(F1/F2) + K2) epochs matches the pipeline's MAC budget.
pub fn scratch_b_epochs(b: &BudgetSpec) -> usize {
    round_half_up(b.k1 * b.speedup() + b.k2)
}

/// Epoch squeezing for MAC-matched pruning phases: round(p/k), minimum 1.
pub fn squeeze_prune_epoch(p: usize, k: f64) -> usize {
    round_half_up(p as f64 / k).max(1)
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

/// Comparison-setup strictness ladder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum SetupLevel {
    S1,
    S2,
    S3_1,
    S3_2,
    S4_1,
    S4_2,
}

impl fmt::Display for SetupLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SetupLevel::S1 => "S1",
            SetupLevel::S2 => "S2",
            SetupLevel::S3_1 => "S3.1",
            SetupLevel::S3_2 => "S3.2",
            SetupLevel::S4_1 => "S4.1",
            SetupLevel::S4_2 => "S4.2",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Classification {
    /// Highest level whose cumulative conditions all hold; None when even
    /// the S1 conditions fail (comparable dataset, but different network or
    /// speedup).
    pub level: Option<SetupLevel>,
    pub sx_a: bool,
    pub sx_b: bool,
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            Some(l) => write!(f, "{l}")?,
            None => write!(f, "S0")?,
        }
        if self.sx_a {
            write!(f, " [SX-A]")?;
        }
        if self.sx_b {
            write!(f, " [SX-B]")?;
        }
        Ok(())
    }
}

/// Class count and spatial size implied by a dataset spec string.
pub fn dataset_geometry(spec: &str) -> (usize, usize, usize) {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        let mut classes = 10usize;
        let mut size = 12usize;
        for pair in rest.split(',') {
            if let Some((k, v)) = pair.split_once('=') {
                if let Ok(v) = v.trim().parse::<usize>() {
                    match k.trim() {
                        "classes" => classes = v,
                        "size" => size = v,
                        _ => {}
                    }
                }
            }
        }
        (classes, size, size)
    } else {
        (10, 32, 32)
    }
}

/// Per-sample MACs of a manifest's dense and effective (post-prune) models.
fn manifest_macs(m: &ExperimentManifest) -> Result<(u64, u64)> {
    let (classes, h, w) = dataset_geometry(&m.dataset);
    let model = zoo::build_sized(&m.model, classes, h, w)?;
    let dense = flops::count(&model)?.total_macs;
    let ratio = m.prune_ratio();
    if ratio == 0.0 {
        return Ok((dense, dense));
    }
    let plan = pruner::plan(&model, &PruneConfig::uniform(ratio))?;
    let small = pruner::rebuild_small_dense(&model, &plan)?;
    let pruned = flops::count(&small)?.total_macs;
    Ok((dense, pruned))
}

/// Resolves the finetune-phase schedule of a manifest (the whole schedule
/// for scratch pipelines).
fn finetune_schedule(m: &ExperimentManifest) -> Result<LRSchedule> {
    match m.pipeline {
        Pipeline::Scratch => resolve_schedule(&m.scratch.kind, m.scratch.epochs, m.scratch.init_lr, m.scratch.final_lr),
        Pipeline::PruneFinetune => {
            let ft = m
                .ft
                .as_ref()
                .ok_or_else(|| Error::InvalidManifest("missing [ft]".into()))?;
            resolve_schedule(&ft.kind, ft.epochs, ft.init_lr, m.scratch.final_lr)
        }
    }
}

/// Resolves the pruning-phase (pretraining) schedule: the scratch prefix up
/// to the prune epoch; empty for scratch pipelines.
fn pruning_phase_schedule(m: &ExperimentManifest) -> Result<LRSchedule> {
    let scratch = resolve_schedule(
        &m.scratch.kind,
        m.scratch.epochs,
        m.scratch.init_lr,
        m.scratch.final_lr,
    )?;
    scratch.prefix(m.prune_epoch())
}

pub fn resolve_schedule(kind: &str, epochs: usize, init_lr: f64, final_lr: f64) -> Result<LRSchedule> {
    if epochs == 0 {
        // Degenerate empty schedule (e.g. a prune-at-init pretrain phase).
        return Ok(LRSchedule {
            kind: ScheduleKind::StepDecade,
            stages: Vec::new(),
            total_epochs: 0,
            final_lr,
        });
    }
    match kind {
        "step" => synthesize_step_schedule(epochs, init_lr, final_lr, 30),
        "cosine" => synthesize_cosine_schedule(epochs, init_lr, final_lr),
        other => Err(Error::InvalidSchedule(format!("unknown schedule kind `{other}`"))),
    }
}

fn within_pct(a: f64, b: f64, pct: f64) -> bool {
    (a - b).abs() <= pct / 100.0 * a.abs().max(b.abs())
}

/// Classifies the strictest comparison setup two manifests jointly satisfy.
///
/// The ladder is cumulative: S1 same dataset/network/speedup (±2%); S2 +
/// same base model; S3.1 + equal finetune epochs; S3.2 + identical finetune
/// schedule; S4.1 + equal pruning-phase epochs; S4.2 + identical
/// pruning-phase schedule. SX-A (equal total epochs) and SX-B (equal total
/// training MACs ±2%) are independent flags.
pub fn classify_setup(a: &ExperimentManifest, b: &ExperimentManifest) -> Result<Classification> {
    a.validate()?;
    b.validate()?;
    if a.dataset != b.dataset {
        return Err(Error::Incomparable(format!(
            "different datasets: `{}` vs `{}`",
            a.dataset, b.dataset
        )));
    }
    let (dense_a, pruned_a) = manifest_macs(a)?;
    let (dense_b, pruned_b) = manifest_macs(b)?;
    let speedup_a = dense_a as f64 / pruned_a as f64;
    let speedup_b = dense_b as f64 / pruned_b as f64;

    let sx_a = a.total_epochs() == b.total_epochs();
    let macs_a = a.prune_epoch() as f64 * dense_a as f64 + a.finetune_epochs() as f64 * pruned_a as f64;
    let macs_b = b.prune_epoch() as f64 * dense_b as f64 + b.finetune_epochs() as f64 * pruned_b as f64;
    let sx_b = within_pct(macs_a, macs_b, 2.0);

    let conditions: [bool; 6] = [
        // S1: same network and speedup within ±2%.
        a.model == b.model && within_pct(speedup_a, speedup_b, 2.0),
        // S2: same base model (identical hash; None == None for two
        // pipelines that both start from fresh init).
        a.base_checkpoint_hash == b.base_checkpoint_hash,
        // S3.1: equal finetune epoch counts.
        a.finetune_epochs() == b.finetune_epochs(),
        // S3.2: identical finetune LR schedule.
        finetune_schedule(a)? == finetune_schedule(b)?,
        // S4.1: equal pruning-phase epoch counts.
        a.prune_epoch() == b.prune_epoch(),
        // S4.2: identical pruning-phase LR schedule.
        pruning_phase_schedule(a)? == pruning_phase_schedule(b)?,
    ];
    let levels = [
        SetupLevel::S1,
        SetupLevel::S2,
        SetupLevel::S3_1,
        SetupLevel::S3_2,
        SetupLevel::S4_1,
        SetupLevel::S4_2,
    ];
    let mut level = None;
    for (ok, l) in conditions.iter().zip(levels) {
        if *ok {
            level = Some(l);
        } else {
            break;
        }
    }
    Ok(Classification { level, sx_a, sx_b })
}
