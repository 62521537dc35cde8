//! Pipeline orchestration: scratch training, prune-finetune, epoch
//! extension, and hyperparameter cross-validation, with deterministic
//! seeding, base-model caching, and append-only results persistence.

use std::fs::OpenOptions;
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::flops;
use crate::graph::ModelGraph;
use crate::init;
use crate::manifest::{ExperimentManifest, Pipeline};
use crate::metrics::{self, AccuracyCurve};
use crate::nn::{self, Mode, OptimizerState};
use crate::planner::{self, dataset_geometry, LRSchedule};
use crate::pruner::{self, Criterion, PruneConfig};
use crate::zoo;

#[derive(Clone, Debug)]
pub struct RunnerConfig {
    /// Directory for checkpoints and the results file.
    pub workdir: PathBuf,
    pub batch_size: usize,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Pad-4 random crop + horizontal flip on train batches. Applied only
    /// to CIFAR data; the synthetic generator bakes translations into the
    /// samples instead.
    pub augment: bool,
}

impl RunnerConfig {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        RunnerConfig {
            workdir: workdir.into(),
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 5e-4,
            augment: true,
        }
    }

    fn results_path(&self) -> PathBuf {
        self.workdir.join("results.tsv")
    }

    fn checkpoint_dir(&self) -> PathBuf {
        self.workdir.join("checkpoints")
    }
}

/// One per-epoch measurement row of the results file.
#[derive(Clone, Debug)]
pub struct EpochRow {
    pub epoch: usize,
    pub phase: String,
    pub lr: f64,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct RunRecord {
    pub manifest_hash: String,
    pub seed: u64,
    pub rows: Vec<EpochRow>,
    /// Pretraining curve (prune-finetune pipelines only).
    pub pretrain_curve: Option<AccuracyCurve>,
    /// Finetune curve, or the whole curve for scratch pipelines.
    pub curve: AccuracyCurve,
    pub final_acc: f64,
    pub trainability: f64,
    pub total_epochs: usize,
    /// Σ over phases of epochs × per-sample MACs × train-set size.
    pub total_macs: u128,
    pub wall_secs: f64,
    pub base_checkpoint_hash: Option<String>,
    /// Trained weights at the end of the run.
    pub model: ModelGraph,
}

/// Mixes seed, phase, and epoch into an independent RNG stream so a given
/// epoch's shuffle does not depend on how many epochs preceded it. This is
/// what makes extended runs replay their prefix bit-identically.
fn epoch_rng(seed: u64, phase: u64, epoch: usize) -> ChaCha8Rng {
    let mut x = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(phase.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add((epoch as u64).wrapping_mul(0x94d049bb133111eb));
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

/// Top-1 test accuracy (%), eval-mode batchnorm.
pub fn evaluate(model: &ModelGraph, split: &data::Split, batch_size: usize) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (batch, labels) = split.gather(chunk);
        let logits = nn::forward(model, &batch)?;
        let k = logits.shape()[1];
        for (s, &label) in labels.iter().enumerate() {
            let row = &logits.data()[s * k..(s + 1) * k];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / split.len() as f64)
}

struct PhaseOutcome {
    accuracies: Vec<f64>,
}

/// Trains `model` in place for the full schedule, evaluating after every
/// epoch. `phase_id` isolates the RNG stream per phase.
#[allow(clippy::too_many_arguments)]
fn train_phase(
    model: &mut ModelGraph,
    opt: &mut OptimizerState,
    schedule: &LRSchedule,
    ds: &Dataset,
    cfg: &RunnerConfig,
    seed: u64,
    phase_id: u64,
    phase_name: &str,
    rows: &mut Vec<EpochRow>,
) -> Result<PhaseOutcome> {
    let augment = cfg.augment && ds.spec.starts_with("cifar10");
    let mut accs = Vec::with_capacity(schedule.total_epochs);
    for e in 0..schedule.total_epochs {
        let lr = schedule.lr_at(e);
        opt.learning_rate = lr as f32;
        let mut rng = epoch_rng(seed, phase_id, e);
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (mut batch, labels) = ds.train.gather(chunk);
            if augment {
                data::augment(&mut batch, 4, &mut rng);
            }
            let trace = nn::forward_cached(model, &batch, Mode::Train)?;
            let (_loss, dlogits) = nn::cross_entropy(trace.logits(), &labels)?;
            let grads = nn::backward_from_trace(model, &batch, &trace, dlogits)?;
            nn::update_running_stats(model, &trace, chunk.len());
            nn::sgd_step(model, &grads, opt);
        }
        let acc = evaluate(model, &ds.test, cfg.batch_size)?;
        accs.push(acc);
        rows.push(EpochRow {
            epoch: e,
            phase: phase_name.to_string(),
            lr,
            test_acc: acc,
        });
    }
    Ok(PhaseOutcome { accuracies: accs })
}

/// Builds the manifest's model sized to its dataset. For scratch pipelines
/// with a prune spec, the architecture is pre-pruned structurally and then
/// freshly initialized, so the init depends on the reduced shapes.
fn build_model(m: &ExperimentManifest) -> Result<ModelGraph> {
    let (classes, h, w) = dataset_geometry(&m.dataset);
    let model = zoo::build_sized(&m.model, classes, h, w)?;
    if m.pipeline == Pipeline::Scratch && m.prune_ratio() > 0.0 {
        let plan = pruner::plan(&model, &prune_config(m)?)?;
        return pruner::rebuild_small_dense(&model, &plan);
    }
    Ok(model)
}

fn prune_config(m: &ExperimentManifest) -> Result<PruneConfig> {
    let p = m
        .prune
        .as_ref()
        .ok_or_else(|| Error::InvalidManifest("missing [prune]".into()))?;
    let criterion = match p.criterion.as_str() {
        "l1" => Criterion::L1,
        "random" => Criterion::Random { seed: p.criterion_seed },
        other => {
            return Err(Error::InvalidManifest(format!(
                "unknown prune criterion `{other}`"
            )))
        }
    };
    Ok(PruneConfig {
        ratios: pruner::RatioSpec::Global(p.ratio),
        criterion,
    })
}

fn per_sample_macs(model: &ModelGraph) -> Result<u64> {
    Ok(flops::count(model)?.total_macs)
}

/// Trains a fresh model under the scratch schedule.
pub fn run_scratch(m: &ExperimentManifest, seed: u64, cfg: &RunnerConfig) -> Result<RunRecord> {
    m.validate()?;
    if m.pipeline != Pipeline::Scratch {
        return Err(Error::InvalidManifest("run_scratch requires pipeline=scratch".into()));
    }
    let t0 = Instant::now();
    let ds = data::load(&m.dataset)?;
    let schedule = planner::resolve_schedule(
        &m.scratch.kind,
        m.scratch.epochs,
        m.scratch.init_lr,
        m.scratch.final_lr,
    )?;
    let mut model = build_model(m)?;
    init::initialize(&mut model, seed);
    let mut opt = OptimizerState::new(&model, m.scratch.init_lr as f32, cfg.momentum, cfg.weight_decay);
    let mut rows = Vec::new();
    let outcome = train_phase(
        &mut model, &mut opt, &schedule, &ds, cfg, seed, 0, "scratch", &mut rows,
    )?;
    let curve = AccuracyCurve::new(outcome.accuracies, schedule.clone())?;
    let final_acc = match curve.accuracies.last() {
        Some(&a) => a,
        // 0-epoch schedule: report the random-init accuracy.
        None => evaluate(&model, &ds.test, cfg.batch_size)?,
    };
    let trainability = if schedule.total_epochs > 0 {
        metrics::trainability_accuracy(&curve)?
    } else {
        0.0
    };
    let macs = per_sample_macs(&model)? as u128;
    let record = RunRecord {
        manifest_hash: m.hash()?,
        seed,
        rows,
        pretrain_curve: None,
        curve,
        final_acc,
        trainability,
        total_epochs: schedule.total_epochs,
        total_macs: macs * schedule.total_epochs as u128 * ds.train.len() as u128,
        wall_secs: t0.elapsed().as_secs_f64(),
        base_checkpoint_hash: None,
        model,
    };
    append_record(&cfg.results_path(), &record)?;
    Ok(record)
}

/// Deterministic cache key for a pretrained base model: everything that
/// influences the pretraining phase, and nothing that does not.
fn base_cache_key(m: &ExperimentManifest, seed: u64, prefix: &LRSchedule) -> String {
    let mut h = Sha256::new();
    h.update(
        format!(
            "base|{}|{}|{}|{}|{}",
            m.dataset, m.model, prefix, prefix.total_epochs, seed
        )
        .as_bytes(),
    );
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Pretrains (or loads from cache) the base model for a prune-finetune
/// manifest. Returns the model, its content hash, and the pretrain curve
/// (empty when loaded from cache).
fn ensure_base(
    m: &ExperimentManifest,
    seed: u64,
    cfg: &RunnerConfig,
    ds: &Dataset,
    prefix: &LRSchedule,
    rows: &mut Vec<EpochRow>,
) -> Result<(ModelGraph, String, Vec<f64>)> {
    std::fs::create_dir_all(cfg.checkpoint_dir())?;
    let key = base_cache_key(m, seed, prefix);
    let path = cfg.checkpoint_dir().join(format!("base-{key}.ckpt"));
    if path.exists() {
        let tensors = checkpoint::load(&path)?;
        let content = checkpoint::content_hash(&tensors);
        if let Some(expected) = &m.base_checkpoint_hash {
            if expected != &content {
                return Err(Error::HashMismatch {
                    expected: expected.clone(),
                    actual: content,
                });
            }
        }
        let mut model = build_model(m)?;
        model.params = tensors;
        return Ok((model, content, Vec::new()));
    }
    let mut model = build_model(m)?;
    init::initialize(&mut model, seed);
    let mut opt = OptimizerState::new(&model, m.scratch.init_lr as f32, cfg.momentum, cfg.weight_decay);
    let outcome = train_phase(&mut model, &mut opt, prefix, ds, cfg, seed, 1, "pretrain", rows)?;
    checkpoint::save(&path, &model.params)?;
    let content = checkpoint::content_hash(&model.params);
    if let Some(expected) = &m.base_checkpoint_hash {
        if expected != &content {
            return Err(Error::HashMismatch {
                expected: expected.clone(),
                actual: content,
            });
        }
    }
    Ok((model, content, outcome.accuracies))
}

/// Pretrains (or loads from cache) the base model of a prune-finetune
/// manifest and returns it with its content hash.
pub fn pretrain_base(
    m: &ExperimentManifest,
    seed: u64,
    cfg: &RunnerConfig,
) -> Result<(ModelGraph, String)> {
    m.validate()?;
    let ds = data::load(&m.dataset)?;
    let scratch = planner::resolve_schedule(
        &m.scratch.kind,
        m.scratch.epochs,
        m.scratch.init_lr,
        m.scratch.final_lr,
    )?;
    let prefix = scratch.prefix(m.prune_epoch())?;
    let mut rows = Vec::new();
    let (model, hash, _) = ensure_base(m, seed, cfg, &ds, &prefix, &mut rows)?;
    Ok((model, hash))
}

/// The full 3-step pipeline: pretrain (or load base), prune and rebuild
/// small-dense, finetune. `extra_first_stage_epochs` lengthens the first
/// finetune LR stage (epoch-extension experiments); 0 is the plain run.
pub fn run_prune_finetune_extended(
    m: &ExperimentManifest,
    seed: u64,
    extra_first_stage_epochs: usize,
    cfg: &RunnerConfig,
) -> Result<RunRecord> {
    m.validate()?;
    if m.pipeline != Pipeline::PruneFinetune {
        return Err(Error::InvalidManifest(
            "run_prune_finetune requires pipeline=prune-finetune".into(),
        ));
    }
    let t0 = Instant::now();
    let ds = data::load(&m.dataset)?;
    let scratch = planner::resolve_schedule(
        &m.scratch.kind,
        m.scratch.epochs,
        m.scratch.init_lr,
        m.scratch.final_lr,
    )?;
    let p = m.prune_epoch();
    let prefix = scratch.prefix(p)?;
    let mut rows = Vec::new();
    let (base, base_hash, pre_accs) = ensure_base(m, seed, cfg, &ds, &prefix, &mut rows)?;
    let pretrain_curve = if pre_accs.len() == prefix.total_epochs {
        Some(AccuracyCurve::new(pre_accs, prefix.clone())?)
    } else {
        None
    };

    let plan = pruner::plan(&base, &prune_config(m)?)?;
    let mut model = pruner::rebuild_small_dense(&base, &plan)?;

    let ft = m.ft.as_ref().expect("validated");
    let ft_schedule = planner::resolve_schedule(&ft.kind, ft.epochs, ft.init_lr, m.scratch.final_lr)?;
    let ft_schedule = if extra_first_stage_epochs > 0 {
        ft_schedule.extend_first_stage(extra_first_stage_epochs)?
    } else {
        ft_schedule
    };
    // Fresh optimizer state at finetune start (momentum buffers do not
    // carry over the architectural change).
    let mut opt = OptimizerState::new(&model, ft.init_lr as f32, cfg.momentum, cfg.weight_decay);
    let outcome = train_phase(
        &mut model, &mut opt, &ft_schedule, &ds, cfg, seed, 2, "finetune", &mut rows,
    )?;
    let curve = AccuracyCurve::new(outcome.accuracies, ft_schedule.clone())?;
    let final_acc = curve.accuracies.last().copied().unwrap_or(0.0);
    let trainability = metrics::trainability_accuracy(&curve)?;

    let dense_macs = per_sample_macs(&base)? as u128;
    let pruned_macs = per_sample_macs(&model)? as u128;
    let n = ds.train.len() as u128;
    let record = RunRecord {
        manifest_hash: m.hash()?,
        seed,
        rows,
        pretrain_curve,
        curve,
        final_acc,
        trainability,
        total_epochs: p + ft_schedule.total_epochs,
        total_macs: dense_macs * p as u128 * n + pruned_macs * ft_schedule.total_epochs as u128 * n,
        wall_secs: t0.elapsed().as_secs_f64(),
        base_checkpoint_hash: Some(base_hash),
        model,
    };
    append_record(&cfg.results_path(), &record)?;
    Ok(record)
}

pub fn run_prune_finetune(m: &ExperimentManifest, seed: u64, cfg: &RunnerConfig) -> Result<RunRecord> {
    run_prune_finetune_extended(m, seed, 0, cfg)
}

/// Epoch-extension experiment: replays the run with `extra` epochs inserted
/// at the first finetune LR before the decays. The per-epoch RNG streams
/// are position-independent, so the original first stage is reproduced
/// bit-identically and the decays replay afterward, momentum buffers
/// carried through. Step schedules only.
pub fn extend_finetune(
    m: &ExperimentManifest,
    seed: u64,
    extra: usize,
    cfg: &RunnerConfig,
) -> Result<RunRecord> {
    let ft = m
        .ft
        .as_ref()
        .ok_or_else(|| Error::InvalidManifest("extension requires [ft]".into()))?;
    if ft.kind != "step" {
        return Err(Error::InvalidSchedule(
            "first-stage extension is unsupported for cosine schedules".into(),
        ));
    }
    run_prune_finetune_extended(m, seed, extra, cfg)
}

/// Runs a manifest over all its seeds.
pub fn run_manifest(m: &ExperimentManifest, cfg: &RunnerConfig) -> Result<Vec<RunRecord>> {
    m.validate()?;
    let mut out = Vec::new();
    for &seed in &m.seeds {
        let rec = match m.pipeline {
            Pipeline::Scratch => run_scratch(m, seed, cfg)?,
            Pipeline::PruneFinetune => run_prune_finetune(m, seed, cfg)?,
        };
        out.push(rec);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    /// One algorithm wins under both finetune recipes.
    ConsistentWinner(String),
    /// Mixed outcome; the named (algorithm, recipe) pair performed best and
    /// therefore carries the comparison.
    Synergy(String),
    Tie,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::ConsistentWinner(x) => write!(f, "consistent winner {x}"),
            Verdict::Synergy(pair) => write!(f, "synergy — best pair {pair} weighs more"),
            Verdict::Tie => write!(f, "tie within noise"),
        }
    }
}

/// Pure decision rule over the four mean accuracies of the 2×2 grid.
/// `a_ftb` is algorithm A finetuned with B's recipe, and so on.
pub fn xval_verdict(a_fta: f64, a_ftb: f64, b_fta: f64, b_ftb: f64, noise: f64) -> Verdict {
    let contrast = |a: f64, b: f64| -> i8 {
        if (a - b).abs() <= noise {
            0
        } else if a > b {
            1
        } else {
            -1
        }
    };
    // Same-recipe contrasts: both algorithms under FT_A, both under FT_B.
    let under_fta = contrast(a_fta, b_fta);
    let under_ftb = contrast(a_ftb, b_ftb);
    match (under_fta, under_ftb) {
        (0, 0) => Verdict::Tie,
        (x, y) if x >= 0 && y >= 0 && x + y > 0 => Verdict::ConsistentWinner("A".into()),
        (x, y) if x <= 0 && y <= 0 && x + y < 0 => Verdict::ConsistentWinner("B".into()),
        _ => {
            let cells = [
                (a_fta, "A+FT_A"),
                (a_ftb, "A+FT_B"),
                (b_fta, "B+FT_A"),
                (b_ftb, "B+FT_B"),
            ];
            let best = cells
                .iter()
                .max_by(|x, y| x.0.partial_cmp(&y.0).unwrap())
                .unwrap();
            Verdict::Synergy(best.1.to_string())
        }
    }
}

/// Cross-validation protocol: algorithms A and B (manifests differing in
/// prune config), each finetuned with its own recipe and with the other's.
/// Runs all four combos over the seeds and applies `xval_verdict`.
pub fn cross_validate(
    a: &ExperimentManifest,
    b: &ExperimentManifest,
    noise: f64,
    cfg: &RunnerConfig,
) -> Result<(Verdict, [f64; 4])> {
    a.validate()?;
    b.validate()?;
    if a.seeds.is_empty() || b.seeds.is_empty() {
        return Err(Error::InvalidManifest("cross-validation requires seeds".into()));
    }
    let swap_ft = |x: &ExperimentManifest, y: &ExperimentManifest| -> ExperimentManifest {
        let mut m = x.clone();
        m.ft = y.ft.clone();
        m
    };
    let mean_final = |m: &ExperimentManifest| -> Result<f64> {
        let recs = run_manifest(m, cfg)?;
        Ok(recs.iter().map(|r| r.final_acc).sum::<f64>() / recs.len() as f64)
    };
    let a_fta = mean_final(a)?;
    let a_ftb = mean_final(&swap_ft(a, b))?;
    let b_fta = mean_final(&swap_ft(b, a))?;
    let b_ftb = mean_final(b)?;
    Ok((
        xval_verdict(a_fta, a_ftb, b_fta, b_ftb, noise),
        [a_fta, a_ftb, b_fta, b_ftb],
    ))
}

/// Appends per-epoch rows and one summary row. Opened with append mode per
/// call so concurrent jobs interleave whole lines at worst.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut text = String::new();
    for row in &record.rows {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{:.6e}\t{:.4}\n",
            record.manifest_hash, record.seed, row.epoch, row.phase, row.lr, row.test_acc
        ));
    }
    text.push_str(&format!(
        "{}\t{}\tSUMMARY\tfinal_acc={:.4}\tT={:.4}\ttotal_epochs={}\ttotal_macs={}\n",
        record.manifest_hash,
        record.seed,
        record.final_acc,
        record.trainability,
        record.total_epochs,
        record.total_macs
    ));
    f.write_all(text.as_bytes())?;
    Ok(())
}
