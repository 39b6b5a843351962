//! Completes an unobserved right arm from the rest of the body with a toy
//! prior and reports the error on the hidden joints.
//!
//! cargo run --release --example completion -- [train_iters]

use motion_prior::experiments::{toy_clips, train_prior, window_positions};
use motion_prior::hmvae::{ArchDescriptor, TrainConfig};
use motion_prior::metrics::mpjpe;
use motion_prior::tasks::{optimize_latent, ConstraintMask, OptimConfig};

fn main() -> motion_prior::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let desc = ArchDescriptor::toy();
    let cfg = TrainConfig {
        iters,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let model = train_prior(&desc, &toy_clips(32, 64, 0)?, 2, &cfg)?;
    let sk = &desc.skeleton;
    let hidden = ["r_shoulder", "r_elbow"].map(|n| sk.index_of(n).expect("toy joint"));
    let joints = (0..sk.num_joints()).map(|j| !hidden.contains(&j)).collect();
    let mask = ConstraintMask::new(vec![true; desc.window], joints)?;

    let optim = OptimConfig {
        phase1_iters: 50,
        phase2_iters: 100,
        ..OptimConfig::completion()
    };
    println!("{:>4} {:>14} {:>14}", "clip", "right arm err", "reconstruction");
    for (i, clip) in toy_clips(4, desc.window, 100)?.iter().enumerate() {
        let gt = clip.to_window()?;
        let out = optimize_latent(&model, &gt, &mask, &optim)?;
        let (pred, truth) = (window_positions(&out.window, sk)?, window_positions(&gt, sk)?);
        let pick = |v: &[Vec<[f64; 3]>]| -> Vec<Vec<[f64; 3]>> {
            v.iter()
                .map(|f| [0].iter().chain(&hidden).map(|&j| f[j]).collect())
                .collect()
        };
        println!(
            "{i:>4} {:>11.2} mm {:>11.2} mm",
            mpjpe(&pick(&pred), &pick(&truth))?,
            mpjpe(&pred, &truth)?
        );
    }
    Ok(())
}
