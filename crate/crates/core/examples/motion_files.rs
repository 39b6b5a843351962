//! Writes synthetic clips as BVH and CSV, reads them back, and scores a
//! noisy copy against the original.
//!
//! cargo run --release --example motion_files -- [out_dir]

use std::path::PathBuf;

use motion_prior::data::{read_motion, synth_dataset, write_motion, BvhOptions, SynthConfig};
use motion_prior::experiments::corrupt_rot6d;
use motion_prior::metrics::MetricReport;

fn main() -> motion_prior::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("motion-files"));
    std::fs::create_dir_all(&dir)?;
    let clip = synth_dataset(&SynthConfig::smpl(3), 1)?.remove(0);
    let opts = BvhOptions::centimeters();

    let bvh = dir.join("walk.bvh");
    let csv = dir.join("walk.csv");
    write_motion(&bvh, &clip, opts)?;
    write_motion(&csv, &clip, opts)?;
    let from_bvh = read_motion(&bvh, &clip.skeleton, clip.fps, opts)?;
    let from_csv = read_motion(&csv, &clip.skeleton, clip.fps, opts)?;
    println!(
        "{} joints, {} frames at {} fps -> {}",
        clip.skeleton.num_joints(),
        clip.len(),
        clip.fps,
        dir.display()
    );
    println!(
        "bvh round trip MPJPE {:.2e} mm",
        MetricReport::compute(&from_bvh, &clip)?.mpjpe
    );
    println!(
        "csv round trip MPJPE {:.2e} mm",
        MetricReport::compute(&from_csv, &clip)?.mpjpe
    );

    for sigma in [0.01, 0.05, 0.1] {
        let noisy = clip.with_rotations(&corrupt_rot6d(&clip.to_window()?, sigma, 1)?)?;
        let r = MetricReport::compute(&noisy, &clip)?;
        println!(
            "sigma {sigma:<5} MPJPE {:>7.2}  PA-MPJPE {:>7.2}  ACCEL err {:>7.2}  quat {:.4}",
            r.mpjpe, r.pa_mpjpe, r.accel_err, r.global_quat
        );
    }
    Ok(())
}
