//! Desk-scale experiment drivers on synthetic toy data, shared by the CLI,
//! the examples and the acceptance suite.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{synth_dataset, window, MotionClip, SynthConfig};
use crate::error::{Error, Result};
use crate::hmvae::{train_with, ArchDescriptor, HmVae, MotionWindow, TrainConfig, TrainReport, Variant};
use crate::kinematics::{forward_kinematics_matrices, JointPositions};
use crate::metrics::{mpjpe, pa_mpjpe, MetricReport};
use crate::rotation::rot6d_to_matrix;
use crate::skeleton::Skeleton;
use crate::tasks::{
    make_keyframe_mask, optimize_latent, refine_sequence, slerp_inbetween, ConstraintMask, OptimConfig,
};
use crate::tensor::{Real, Tensor};
use crate::trajectory::{train_trajectory, TrajectoryConfig, TrajectoryModel, TrajectorySample, TrajectoryTrainConfig};

/// FK of every frame of `w` with the root at the origin.
pub fn window_positions(w: &MotionWindow, skeleton: &Skeleton) -> Result<Vec<JointPositions>> {
    (0..w.frames())
        .map(|t| {
            let m = w.frame(t).iter().map(rot6d_to_matrix).collect::<Result<Vec<_>>>()?;
            forward_kinematics_matrices(&m, [0.0; 3], skeleton)
        })
        .collect()
}

/// Mean reconstruction MPJPE (mm) of the posterior-mean round trip over `windows`.
pub fn reconstruction_mpjpe<S: Real>(model: &HmVae<S>, windows: &[MotionWindow]) -> Result<f64> {
    let sk = &model.descriptor().skeleton;
    let errs = windows
        .par_iter()
        .map(|w| {
            mpjpe(
                &window_positions(&model.reconstruct(w)?, sk)?,
                &window_positions(w, sk)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Toy clips of exactly `window` frames, one training window each.
pub fn toy_windows(clips: usize, window_len: usize, seed: u64) -> Result<Vec<MotionWindow>> {
    let cfg = SynthConfig {
        length: window_len,
        ..SynthConfig::toy(seed)
    };
    synth_dataset(&cfg, clips)?.iter().map(MotionClip::to_window).collect()
}

/// Every window of `t` frames with stride `stride` from `clips`.
pub fn windows_of(clips: &[MotionClip], t: usize, stride: usize) -> Result<Vec<MotionWindow>> {
    let mut out = Vec::new();
    for c in clips {
        out.extend(window(c, t, stride)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitOutcome {
    pub variant: Variant,
    pub seed: u64,
    /// Reconstruction MPJPE (mm) of the untrained model.
    pub before: f64,
    /// Reconstruction MPJPE (mm) after training.
    pub after: f64,
    pub report: TrainReport,
}

impl OverfitOutcome {
    pub fn ratio(&self) -> f64 {
        self.after / self.before
    }
}

/// Trains a fresh toy model of `variant` on `data` and measures reconstruction
/// MPJPE before and after. Returns the trained model alongside the outcome.
pub fn overfit(
    desc: &ArchDescriptor,
    variant: Variant,
    data: &[MotionWindow],
    cfg: &TrainConfig,
) -> Result<(HmVae<f32>, OverfitOutcome)> {
    let mut model = HmVae::<f32>::new(desc.clone().with_variant(variant), cfg.seed)?;
    let before = reconstruction_mpjpe(&model, data)?;
    let report = train_with(&mut model, data, cfg, |_, _| {})?;
    let after = reconstruction_mpjpe(&model, data)?;
    let outcome = OverfitOutcome {
        variant,
        seed: cfg.seed,
        before,
        after,
        report,
    };
    Ok((model, outcome))
}

/// Median of a non-empty slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Adds i.i.d. `N(0, σ²)` noise to every 6D channel.
pub fn corrupt_rot6d(w: &MotionWindow, sigma: f64, seed: u64) -> Result<MotionWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(format!("noise sigma: {e}")))?;
    let data = w.rotations.data().iter().map(|v| v + normal.sample(&mut rng)).collect();
    MotionWindow::new(Tensor::new(w.rotations.shape().to_vec(), data)?)
}

/// PA-MPJPE (mm) restricted to the frames where `mask.frames` is false.
pub fn gap_pa_mpjpe(pred: &MotionWindow, gt: &MotionWindow, skeleton: &Skeleton, mask: &ConstraintMask) -> Result<f64> {
    let (pp, gp) = (window_positions(pred, skeleton)?, window_positions(gt, skeleton)?);
    let keep: Vec<usize> = (0..gt.frames()).filter(|&f| !mask.frames[f]).collect();
    if keep.is_empty() {
        return Err(Error::InvalidArgument("no missing frames to evaluate".into()));
    }
    let pick = |v: &[JointPositions]| keep.iter().map(|&f| v[f].clone()).collect::<Vec<_>>();
    pa_mpjpe(&pick(&pp), &pick(&gp))
}

/// Toy clips of `length` frames.
pub fn toy_clips(n: usize, length: usize, seed: u64) -> Result<Vec<MotionClip>> {
    synth_dataset(
        &SynthConfig {
            length,
            ..SynthConfig::toy(seed)
        },
        n,
    )
}

/// Trains a prior of `desc` on every `stride`-spaced window of `clips`.
pub fn train_prior(
    desc: &ArchDescriptor,
    clips: &[MotionClip],
    stride: usize,
    cfg: &TrainConfig,
) -> Result<HmVae<f32>> {
    let data = windows_of(clips, desc.window, stride)?;
    let mut model = HmVae::<f32>::new(desc.clone(), cfg.seed)?;
    train_with(&mut model, &data, cfg, |_, _| {})?;
    Ok(model)
}

/// Gap PA-MPJPE (mm) per held-out sequence for optimized in-betweening and Slerp.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationOutcome {
    pub optimized: Vec<f64>,
    pub slerp: Vec<f64>,
}

/// In-betweens the first model window of each clip: `window − gap − trail`
/// leading keyframes, `trail` trailing keyframes.
pub fn interpolation_study(
    model: &HmVae<f32>,
    clips: &[MotionClip],
    gap: usize,
    trail: usize,
    cfg: &OptimConfig,
) -> Result<InterpolationOutcome> {
    let d = model.descriptor();
    if gap + trail >= d.window {
        return Err(Error::InvalidArgument(format!(
            "gap {gap} + trail {trail} must be below the window {}",
            d.window
        )));
    }
    let mask = make_keyframe_mask(d.window, d.num_joints(), d.window - gap - trail, trail)?;
    let pairs = clips
        .par_iter()
        .map(|c| {
            let target = c.slice(0, d.window)?.to_window()?;
            let res = optimize_latent(model, &target, &mask, cfg)?;
            let base = slerp_inbetween(&target, &mask)?;
            Ok((
                gap_pa_mpjpe(&res.window, &target, &d.skeleton, &mask)?,
                gap_pa_mpjpe(&base, &target, &d.skeleton, &mask)?,
            ))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    Ok(InterpolationOutcome {
        optimized: pairs.iter().map(|p| p.0).collect(),
        slerp: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Per-clip metrics of the corrupted input and the refined output against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementOutcome {
    pub input: Vec<MetricReport>,
    pub refined: Vec<MetricReport>,
}

impl RefinementOutcome {
    fn mean(v: &[MetricReport], f: impl Fn(&MetricReport) -> f64) -> f64 {
        v.iter().map(f).sum::<f64>() / v.len() as f64
    }

    pub fn mean_accel_err(&self) -> (f64, f64) {
        (
            Self::mean(&self.input, |r| r.accel_err),
            Self::mean(&self.refined, |r| r.accel_err),
        )
    }

    pub fn mean_mpjpe(&self) -> (f64, f64) {
        (
            Self::mean(&self.input, |r| r.mpjpe),
            Self::mean(&self.refined, |r| r.mpjpe),
        )
    }
}

/// Corrupts each clip's 6D channels with `N(0, σ²)` and refines it.
pub fn refinement_study(model: &HmVae<f32>, clips: &[MotionClip], sigma: f64, seed: u64) -> Result<RefinementOutcome> {
    let pairs = clips
        .par_iter()
        .enumerate()
        .map(|(i, gt)| {
            let noisy = gt.with_rotations(&corrupt_rot6d(&gt.to_window()?, sigma, seed.wrapping_add(i as u64))?)?;
            let refined = gt.with_rotations(&refine_sequence(model, &noisy.to_window()?)?)?;
            Ok((MetricReport::compute(&noisy, gt)?, MetricReport::compute(&refined, gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RefinementOutcome {
        input: pairs.iter().map(|p| p.0).collect(),
        refined: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Velocity MSE of the trajectory model before and after training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    pub untrained: f64,
    pub trained: f64,
    pub held_out_untrained: f64,
    pub held_out_trained: f64,
}

/// Trains a trajectory model on windows of `train` and measures velocity MSE
/// on those windows and on windows of `held_out`.
pub fn trajectory_study(
    train: &[MotionClip],
    held_out: &[MotionClip],
    window_len: usize,
    cfg: &TrajectoryTrainConfig,
) -> Result<(TrajectoryModel<f32>, TrajectoryOutcome)> {
    let samples = |clips: &[MotionClip]| -> Result<Vec<TrajectorySample>> {
        let mut out = Vec::new();
        for c in clips {
            out.extend(TrajectorySample::windows(c, window_len, window_len / 2)?);
        }
        Ok(out)
    };
    let (tr, te) = (samples(train)?, samples(held_out)?);
    let skeleton = train.first().ok_or(Error::EmptyDataset)?.skeleton.clone();
    let mut model = TrajectoryModel::<f32>::new(TrajectoryConfig::new(skeleton), cfg.seed)?;
    let (untrained, held_out_untrained) = (model.velocity_mse(&tr)?, model.velocity_mse(&te)?);
    train_trajectory(&mut model, &tr, cfg)?;
    let outcome = TrajectoryOutcome {
        untrained,
        trained: model.velocity_mse(&tr)?,
        held_out_untrained,
        held_out_trained: model.velocity_mse(&te)?,
    };
    Ok((model, outcome))
}
