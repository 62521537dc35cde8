//! Thin command-line front end over the prunebench library.
//!
//! Exit codes: 0 success, 1 module error, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prunebench::manifest::ExperimentManifest;
use prunebench::pruner::{Criterion, PruneConfig, RatioSpec};
use prunebench::runner::{self, RunnerConfig};
use prunebench::{checkpoint, flops, metrics, planner, pruner, report, zoo};

#[derive(Parser)]
#[command(name = "prunebench", version, about = "Fair structured-pruning experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment manifest (TOML).
    #[arg(long)]
    manifest: PathBuf,
    /// Working directory for checkpoints and results.
    #[arg(long, default_value = "prunebench-work")]
    workdir: PathBuf,
    /// Run a single seed instead of every seed in the manifest.
    #[arg(long)]
    seed: Option<u64>,
    /// Mini-batch size.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
}

impl RunArgs {
    fn config(&self) -> RunnerConfig {
        let mut cfg = RunnerConfig::new(&self.workdir);
        cfg.batch_size = self.batch_size;
        cfg
    }

    fn seeds(&self, m: &ExperimentManifest) -> Vec<u64> {
        match self.seed {
            Some(s) => vec![s],
            None => m.seeds.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// List the model zoo with expected parameter and MAC counts.
    Zoo,
    /// Count MACs/params of a model, optionally after pruning.
    Flops {
        /// Zoo model name (e.g. resnet56, vgg19, resnet34-imagenet).
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        /// Uniform pruning ratio over prunable convs.
        #[arg(long)]
        prune_ratio: Option<f32>,
        /// Stage-wise ratio vector "r0,r1,r2,r3,r4,r5" (ImageNet graphs).
        #[arg(long, value_delimiter = ',')]
        prune_vector: Option<Vec<f32>>,
        /// Report totals under the 2xMAC convention.
        #[arg(long)]
        two_mac: bool,
    },
    /// Synthesize an LR schedule and print it as start:lr pairs.
    Plan {
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        init_lr: f64,
        #[arg(long)]
        final_lr: f64,
        #[arg(long, default_value_t = 30)]
        stage_cap: usize,
        /// Cosine annealing instead of step decades.
        #[arg(long)]
        cosine: bool,
        /// Also print the MAC-matched prune epoch round(p/k) for this speedup.
        #[arg(long)]
        squeeze_epoch: Option<usize>,
        #[arg(long)]
        speedup: Option<f64>,
    },
    /// Classify the strictest comparison setup two manifests satisfy.
    Classify {
        manifest_a: PathBuf,
        manifest_b: PathBuf,
    },
    /// Pretrain (or load) the base model of a prune-finetune manifest.
    Pretrain(RunArgs),
    /// Prune the base model and report the keep plan and speedup.
    Prune(RunArgs),
    /// Run the full pretrain-prune-finetune pipeline.
    Finetune(RunArgs),
    /// Train from scratch under the manifest's schedule.
    Scratch(RunArgs),
    /// Re-run finetuning with extra epochs inserted at the first LR stage.
    Extend {
        #[command(flatten)]
        run: RunArgs,
        /// Extra epochs at the first finetune LR.
        #[arg(long)]
        extra: usize,
    },
    /// Cross-validate two pruning configs against both finetune recipes.
    Xval {
        #[arg(long)]
        manifest_a: PathBuf,
        #[arg(long)]
        manifest_b: PathBuf,
        #[arg(long, default_value = "prunebench-work")]
        workdir: PathBuf,
        /// Accuracy differences within this margin count as ties.
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// Render mean±std tables (or curve CSV) from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Emit plot-ready CSV for one manifest hash (prefix allowed).
        #[arg(long)]
        curves: Option<String>,
    },
}

fn run(cli: Cli) -> prunebench::Result<()> {
    match cli.command {
        Command::Zoo => {
            println!("{:<20} {:>12} {:>14}  {}", "name", "params", "macs", "description");
            for e in zoo::list() {
                println!(
                    "{:<20} {:>12} {:>14}  {}",
                    e.name, e.expected_params, e.expected_macs, e.description
                );
            }
        }
        Command::Flops {
            model,
            classes,
            prune_ratio,
            prune_vector,
            two_mac,
        } => {
            let graph = zoo::build(&model, classes)?;
            let mut dense = flops::count(&graph)?;
            if two_mac {
                dense = dense.with_convention(flops::Convention::TwoMac);
            }
            let ratios = match (prune_ratio, prune_vector) {
                (Some(r), None) => Some(RatioSpec::Global(r)),
                (None, Some(v)) => {
                    let v: [f32; 6] = v.try_into().map_err(|_| {
                        prunebench::Error::InvalidPlan("prune vector needs 6 entries".into())
                    })?;
                    Some(RatioSpec::StageWise(v))
                }
                (None, None) => None,
                (Some(_), Some(_)) => {
                    return Err(prunebench::Error::InvalidPlan(
                        "give either --prune-ratio or --prune-vector, not both".into(),
                    ))
                }
            };
            match ratios {
                None => print!("{}", dense.render_table()),
                Some(ratios) => {
                    let cfg = PruneConfig { ratios, criterion: Criterion::L1 };
                    let plan = pruner::plan(&graph, &cfg)?;
                    let small = pruner::rebuild_small_dense(&graph, &plan)?;
                    let mut pruned = flops::count(&small)?;
                    if two_mac {
                        pruned = pruned.with_convention(flops::Convention::TwoMac);
                    }
                    print!("{}", pruned.render_table());
                    println!(
                        "dense {} -> pruned {} ({}), speedup {:.2}x",
                        dense.total_macs,
                        pruned.total_macs,
                        pruned.convention,
                        flops::speedup(&dense, &pruned)?
                    );
                }
            }
        }
        Command::Plan {
            epochs,
            init_lr,
            final_lr,
            stage_cap,
            cosine,
            squeeze_epoch,
            speedup,
        } => {
            if cosine {
                let s = planner::synthesize_cosine_schedule(epochs, init_lr, final_lr)?;
                println!("{s}");
            } else {
                let s = planner::synthesize_step_schedule(epochs, init_lr, final_lr, stage_cap)?;
                println!("{s}");
            }
            if let (Some(p), Some(k)) = (squeeze_epoch, speedup) {
                println!("squeezed prune epoch: {}", planner::squeeze_prune_epoch(p, k));
            }
        }
        Command::Classify { manifest_a, manifest_b } => {
            let a = ExperimentManifest::load(&manifest_a)?;
            let b = ExperimentManifest::load(&manifest_b)?;
            println!("{}", planner::classify_setup(&a, &b)?);
        }
        Command::Pretrain(args) => {
            let m = ExperimentManifest::load(&args.manifest)?;
            let cfg = args.config();
            for seed in args.seeds(&m) {
                let (_, hash) = runner::pretrain_base(&m, seed, &cfg)?;
                println!("seed {seed}: base checkpoint {hash}");
            }
        }
        Command::Prune(args) => {
            let m = ExperimentManifest::load(&args.manifest)?;
            let cfg = args.config();
            for seed in args.seeds(&m) {
                let (base, hash) = runner::pretrain_base(&m, seed, &cfg)?;
                let spec = m
                    .prune
                    .as_ref()
                    .ok_or_else(|| prunebench::Error::InvalidManifest("missing [prune]".into()))?;
                let pcfg = PruneConfig {
                    ratios: RatioSpec::Global(spec.ratio),
                    criterion: match spec.criterion.as_str() {
                        "random" => Criterion::Random { seed: spec.criterion_seed },
                        _ => Criterion::L1,
                    },
                };
                let plan = pruner::plan(&base, &pcfg)?;
                let small = pruner::rebuild_small_dense(&base, &plan)?;
                let k = flops::speedup(&flops::count(&base)?, &flops::count(&small)?)?;
                let out = cfg.workdir.join(format!("pruned-seed{seed}.ckpt"));
                std::fs::create_dir_all(&cfg.workdir)?;
                checkpoint::save(&out, &small.params)?;
                println!("seed {seed}: base {hash}, speedup {k:.2}x, pruned model -> {}", out.display());
                for (layer, kept) in &plan.kept_out {
                    println!("  {layer}: kept {} channels", kept.len());
                }
            }
        }
        Command::Finetune(args) => {
            let m = ExperimentManifest::load(&args.manifest)?;
            let cfg = args.config();
            let mut finals = Vec::new();
            let mut ts = Vec::new();
            for seed in args.seeds(&m) {
                let rec = runner::run_prune_finetune(&m, seed, &cfg)?;
                println!(
                    "seed {seed}: final {:.2}, T {:.2}, total epochs {}, total MACs {}",
                    rec.final_acc, rec.trainability, rec.total_epochs, rec.total_macs
                );
                finals.push(rec.final_acc);
                ts.push(rec.trainability);
            }
            println!(
                "final {}  T {}",
                metrics::aggregate(&finals)?.render(),
                metrics::aggregate(&ts)?.render()
            );
        }
        Command::Scratch(args) => {
            let m = ExperimentManifest::load(&args.manifest)?;
            let cfg = args.config();
            let mut finals = Vec::new();
            for seed in args.seeds(&m) {
                let rec = runner::run_scratch(&m, seed, &cfg)?;
                println!("seed {seed}: final {:.2}, T {:.2}", rec.final_acc, rec.trainability);
                finals.push(rec.final_acc);
            }
            println!("final {}", metrics::aggregate(&finals)?.render());
        }
        Command::Extend { run: args, extra } => {
            let m = ExperimentManifest::load(&args.manifest)?;
            let cfg = args.config();
            for seed in args.seeds(&m) {
                let rec = runner::extend_finetune(&m, seed, extra, &cfg)?;
                println!(
                    "seed {seed}: final {:.2} after +{extra} epochs at the first finetune LR",
                    rec.final_acc
                );
            }
        }
        Command::Xval {
            manifest_a,
            manifest_b,
            workdir,
            noise,
        } => {
            let a = ExperimentManifest::load(&manifest_a)?;
            let b = ExperimentManifest::load(&manifest_b)?;
            let cfg = RunnerConfig::new(workdir);
            let (verdict, means) = runner::cross_validate(&a, &b, noise, &cfg)?;
            println!(
                "A+FT_A {:.2}  A+FT_B {:.2}  B+FT_A {:.2}  B+FT_B {:.2}",
                means[0], means[1], means[2], means[3]
            );
            println!("{verdict}");
        }
        Command::Report { results, curves } => {
            let text = std::fs::read_to_string(&results)?;
            match curves {
                None => print!("{}", report::render_report(&text)?),
                Some(hash) => print!("{}", report::curves_csv(&text, &hash)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
