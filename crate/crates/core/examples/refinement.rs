//! Trains a short-window toy prior and uses it to denoise held-out
//! sequences corrupted with Gaussian noise on the 6D channels.
//!
//! cargo run --release --example refinement -- [train_iters] [sigma]

use motion_prior::experiments::{refinement_study, toy_clips, train_prior};
use motion_prior::hmvae::{ArchDescriptor, TrainConfig};

fn main() -> motion_prior::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let sigma: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.05);

    let desc = ArchDescriptor::toy_refinement();
    let train = toy_clips(32, 64, 0)?;
    let cfg = TrainConfig {
        iters,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_prior(&desc, &train, 2, &cfg)?;

    let held_out = toy_clips(8, 64, 100)?;
    let out = refinement_study(&model, &held_out, sigma, 7)?;
    let (acc_in, acc_out) = out.mean_accel_err();
    let (mp_in, mp_out) = out.mean_mpjpe();
    println!("noise sigma {sigma} on 6D channels, {} held-out clips", held_out.len());
    println!("{:>10} {:>12} {:>12}", "", "corrupted", "refined");
    println!("{:>10} {acc_in:>12.3} {acc_out:>12.3}", "ACCEL err");
    println!("{:>10} {mp_in:>12.2} {mp_out:>12.2}", "MPJPE");
    Ok(())
}
