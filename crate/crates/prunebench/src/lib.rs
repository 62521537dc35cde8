//! prunebench: a desk-scale engine for fair structured filter-pruning
//! experiments.
//!
//! The crate trains small CNNs deterministically on the CPU, prunes them by
//! L1 filter norm with physical small-dense reconstruction, synthesizes
//! finetuning LR schedules from a fixed allocation rule, accounts training
//! cost in MACs, classifies how strictly two experiments are controlled
//! against each other, and measures trainability (early-epoch accuracy).
//!
//! Modules:
//! - [`tensor`], [`graph`], [`nn`], [`init`], [`checkpoint`]: the minimal
//!   deterministic training engine (forward/backward, SGD+momentum,
//!   batchnorm, checkpoints).
//! - [`zoo`]: CIFAR-style ResNets and VGGs, a tiny net, and static ImageNet
//!   ResNet graphs for cost accounting.
//! - [`flops`]: MAC/parameter counting and speedup.
//! - [`pruner`]: L1 ranking, keep plans, small-dense rebuild, and the
//!   masked large-sparse equivalence oracle.
//! - [`planner`]: LR-schedule synthesis, budget algebra, P{p}F{f} plans,
//!   and the comparison-setup classifier.
//! - [`metrics`]: trainability accuracy and mean±std aggregation.
//! - [`data`], [`manifest`], [`runner`], [`report`]: datasets, declarative
//!   experiments, pipeline orchestration, and result rendering.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod flops;
pub mod graph;
pub mod init;
pub mod manifest;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod pruner;
pub mod report;
pub mod runner;
pub mod tensor;
pub mod zoo;

pub use error::{Error, Result};
