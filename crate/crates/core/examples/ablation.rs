//! Trains the three model variants on the same toy data and prints their
//! reconstruction error on the training windows and on held-out windows,
//! median over seeds.
//!
//! cargo run --release --example ablation -- [iters] [seeds] [final_lr_fraction]

use std::time::Instant;

use motion_prior::experiments::{median, overfit, reconstruction_mpjpe, toy_windows};
use motion_prior::hmvae::{ArchDescriptor, TrainConfig, Variant};

fn main() -> motion_prior::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let seeds: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(3);
    let final_lr_fraction: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let data = toy_windows(16, 16, 0)?;
    let held_out = toy_windows(32, 16, 1)?;
    for variant in Variant::ALL {
        let start = Instant::now();
        let mut after = Vec::new();
        let mut ratios = Vec::new();
        let mut test = Vec::new();
        for seed in 0..seeds {
            let cfg = TrainConfig {
                iters,
                lr: 1e-3,
                final_lr_fraction,
                seed,
                ..TrainConfig::default()
            };
            let (model, out) = overfit(&ArchDescriptor::toy(), variant, &data, &cfg)?;
            let unseen = reconstruction_mpjpe(&model, &held_out)?;
            println!(
                "  {variant} seed {seed}: {:.2} -> {:.2} mm, held-out {unseen:.2} mm",
                out.before, out.after
            );
            test.push(unseen);
            after.push(out.after);
            ratios.push(out.ratio());
        }
        println!(
            "{variant:>8}: median MPJPE {:.2} mm, median ratio {:.2}%, held-out {:.2} mm ({:.0}s)",
            median(&after),
            100.0 * median(&ratios),
            median(&test),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
