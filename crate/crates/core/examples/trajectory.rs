//! Trains the root-trajectory predictor on toy clips and writes one
//! predicted path as CSV.
//!
//! cargo run --release --example trajectory -- [iters] [out.csv]

use motion_prior::experiments::{toy_clips, trajectory_study};
use motion_prior::trajectory::TrajectoryTrainConfig;

fn main() -> motion_prior::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let out_path = args.next();

    let train = toy_clips(16, 64, 0)?;
    let held_out = toy_clips(8, 64, 100)?;
    let cfg = TrajectoryTrainConfig {
        iters,
        ..TrajectoryTrainConfig::default()
    };
    let (model, out) = trajectory_study(&train, &held_out, 16, &cfg)?;
    println!("velocity MSE (m²/frame²)   untrained    trained");
    println!(
        "training windows        {:>10.3e} {:>10.3e}",
        out.untrained, out.trained
    );
    println!(
        "held-out windows        {:>10.3e} {:>10.3e}",
        out.held_out_untrained, out.held_out_trained
    );
    if let Some(path) = out_path {
        let traj = model.predict_clip(&held_out[0])?;
        std::fs::write(&path, traj.to_csv())?;
        println!("wrote {path}");
    }
    Ok(())
}
