use std::time::Instant;

use motion_prior::experiments::{overfit, toy_windows};
use motion_prior::hmvae::{ArchDescriptor, TrainConfig, Variant};

fn main() -> motion_prior::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iters = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let variant: Variant = args.get(3).map(|s| s.parse()).transpose()?.unwrap_or(Variant::HmVae);
    let data = toy_windows(16, 16, 0)?;
    let cfg = TrainConfig {
        iters,
        lr,
        switch_iter: iters / 4,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let (_, out) = overfit(&ArchDescriptor::toy(), variant, &data, &cfg)?;
    println!(
        "{variant}: before {:.2} mm, after {:.2} mm ({:.1}%), {:.1}s",
        out.before,
        out.after,
        100.0 * out.ratio(),
        start.elapsed().as_secs_f64()
    );
    for (i, c) in out.report.log.iter().enumerate().step_by(iters / 8) {
        println!("  it {i}: {c:?}");
    }
    Ok(())
}
