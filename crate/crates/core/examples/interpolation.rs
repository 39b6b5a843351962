//! Trains a toy prior, then fills a half-window gap in held-out sequences by
//! latent optimization and compares against Slerp.
//!
//! cargo run --release --example interpolation -- [train_iters] [phase1] [phase2]

use motion_prior::experiments::{interpolation_study, median, toy_clips, train_prior};
use motion_prior::hmvae::{ArchDescriptor, TrainConfig};
use motion_prior::tasks::OptimConfig;

fn main() -> motion_prior::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let iters = args.next().flatten().unwrap_or(2000);
    let phase1 = args.next().flatten().unwrap_or(25);
    let phase2 = args.next().flatten().unwrap_or(50);

    let desc = ArchDescriptor::toy();
    let train = toy_clips(32, 64, 0)?;
    let cfg = TrainConfig {
        iters,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_prior(&desc, &train, 2, &cfg)?;

    let held_out = toy_clips(8, desc.window, 100)?;
    let optim = OptimConfig {
        phase1_iters: phase1,
        phase2_iters: phase2,
        ..OptimConfig::interpolation()
    };
    let gap = desc.window / 2;
    let out = interpolation_study(&model, &held_out, gap, 1, &optim)?;
    println!("gap {gap} of {} frames, {phase1}+{phase2} iterations", desc.window);
    println!("{:>4} {:>12} {:>12}", "seq", "optimized", "slerp");
    for (i, (o, s)) in out.optimized.iter().zip(&out.slerp).enumerate() {
        println!("{i:>4} {o:>12.2} {s:>12.2}");
    }
    println!(
        "median {:>10.2} {:>12.2}  (gap PA-MPJPE, mm)",
        median(&out.optimized),
        median(&out.slerp)
    );
    Ok(())
}
