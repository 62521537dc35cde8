//! LR-schedule synthesis and compute-budget algebra.
//!
//! Run with: cargo run --release --example schedules_and_budgets

use prunebench::planner::{self, BudgetSpec};

fn main() -> prunebench::Result<()> {
    // Step schedules: the LR decays by 10x per stage; each non-final stage
    // takes min(30, ceil(remaining / 2)) epochs, the last absorbs the rest.
    for (total, init, fin) in [(90usize, 1e-1, 1e-5), (60, 1e-2, 1e-5), (120, 1e-1, 1e-5)] {
        let s = planner::synthesize_step_schedule(total, init, fin, 30)?;
        println!("step {total:>3} epochs {init:.0e} -> {fin:.0e}:  {s}");
    }

    // Cosine annealing for the same span.
    let c = planner::synthesize_cosine_schedule(90, 1e-1, 1e-5)?;
    println!(
        "cosine 90 epochs: lr(0)={:.1e} lr(45)={:.2e} lr(89)={:.2e}",
        c.lr_at(0),
        c.lr_at(45),
        c.lr_at(89)
    );

    // Prune-finetune planning: prune a 90-epoch run at epoch 30, then
    // finetune 90 epochs starting at 1e-1 (decaying to the scratch final LR).
    let scratch = planner::synthesize_step_schedule(90, 1e-1, 1e-5, 30)?;
    let plan = planner::plan_pxfy(&scratch, 30, 90, 1e-1)?;
    println!("\nP30F90 pretrain:  {}", plan.pretrain);
    println!("P30F90 finetune:  {}", plan.finetune);

    // Extending the first stage keeps later stages' lengths, shifting them out.
    let extended = plan.finetune.extend_first_stage(30)?;
    println!("finetune +30:     {extended}");

    // Budget algebra: how long must the pruned architecture train from
    // scratch to spend the same MACs as pretrain + finetune?
    let budget = BudgetSpec {
        k1: 90.0,       // dense pretraining epochs
        k2: 90.0,       // pruned finetuning epochs
        f1: 3.66e9,     // dense MACs / sample
        f2: 3.66e9 / 2.31, // pruned MACs / sample
    };
    println!(
        "\nscratch budget at speedup {:.2}x: {} epochs",
        budget.speedup(),
        planner::scratch_b_epochs(&budget)
    );

    // Epoch squeezing: shrink the pruning phase so total MACs stay matched.
    for (p, k) in [(30usize, 1.11f64), (30, 2.0), (30, 12.06)] {
        println!(
            "squeeze {p} pretrain epochs at speedup {k:.2}x -> {}",
            planner::squeeze_prune_epoch(p, k)
        );
    }
    Ok(())
}
