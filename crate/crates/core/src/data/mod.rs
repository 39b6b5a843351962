//! Motion clips: BVH and CSV I/O, synthetic generation, windowing and augmentation.

mod bvh;
mod csv;
mod synth;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::hmvae::MotionWindow;
use crate::kinematics::{forward_kinematics, forward_kinematics_matrices, JointPositions, Pose};
use crate::rotation::{matrix_to_rot6d, rot6d_to_matrix, RotMatrix};
use crate::skeleton::{Joint, Skeleton};
use crate::tensor::Tensor;

pub use bvh::{parse_bvh, read_bvh, write_bvh, BvhOptions};
pub use csv::{parse_csv, read_motion, write_csv, write_motion};
pub use synth::{synth_dataset, SynthConfig};

/// A full motion sequence on one skeleton.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionClip {
    pub skeleton: Skeleton,
    pub frames: Vec<Pose>,
    pub fps: f64,
}

impl MotionClip {
    pub fn new(skeleton: Skeleton, frames: Vec<Pose>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidArgument(format!("fps must be positive, got {fps}")));
        }
        let j = skeleton.num_joints();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.rotations.len() != j) {
            return Err(shape_err(
                "MotionClip",
                j,
                format!("frame {i} with {} joints", f.rotations.len()),
            ));
        }
        Ok(MotionClip { skeleton, frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<MotionClip> {
        if start + len > self.len() {
            return Err(Error::TooShort {
                len: self.len(),
                window: start + len,
            });
        }
        Ok(MotionClip {
            skeleton: self.skeleton.clone(),
            frames: self.frames[start..start + len].to_vec(),
            fps: self.fps,
        })
    }

    /// Rotation channels of all frames as one window.
    pub fn to_window(&self) -> Result<MotionWindow> {
        let frames: Vec<_> = self.frames.iter().map(|f| f.rotations.clone()).collect();
        MotionWindow::from_frames(&frames)
    }

    /// Replaces every frame's rotations with the window's, keeping root translations.
    pub fn with_rotations(&self, w: &MotionWindow) -> Result<MotionClip> {
        if w.frames() != self.len() || w.joints() != self.skeleton.num_joints() {
            return Err(shape_err(
                "with_rotations",
                (self.len(), self.skeleton.num_joints()),
                (w.frames(), w.joints()),
            ));
        }
        let frames = self
            .frames
            .iter()
            .enumerate()
            .map(|(t, f)| Pose {
                rotations: w.frame(t),
                root: f.root,
            })
            .collect();
        Ok(MotionClip {
            skeleton: self.skeleton.clone(),
            frames,
            fps: self.fps,
        })
    }

    /// World-space joint positions including root translation.
    pub fn positions(&self) -> Result<Vec<JointPositions>> {
        self.frames
            .iter()
            .map(|p| forward_kinematics(p, &self.skeleton))
            .collect()
    }

    /// Joint positions with the root held at the origin.
    pub fn local_positions(&self) -> Result<Vec<JointPositions>> {
        self.frames
            .iter()
            .map(|p| forward_kinematics_matrices(&p.matrices()?, [0.0; 3], &self.skeleton))
            .collect()
    }

    pub fn root_translations(&self) -> Vec<[f64; 3]> {
        self.frames.iter().map(|f| f.root).collect()
    }

    /// Permutes joints into the order of `order`, matching by name. The
    /// joint tree must be the same; offsets and channels are kept from `self`.
    pub fn reorder_like(&self, order: &Skeleton) -> Result<MotionClip> {
        let mine = self.skeleton.joints();
        let theirs = order.joints();
        let mismatch = || Error::Skeleton("joint names or hierarchy differ from the requested skeleton".into());
        if mine.len() != theirs.len() {
            return Err(mismatch());
        }
        let perm: Vec<usize> = theirs
            .iter()
            .map(|j| self.skeleton.index_of(&j.name).ok_or_else(mismatch))
            .collect::<Result<_>>()?;
        let joints = theirs
            .iter()
            .zip(&perm)
            .map(|(t, &src)| {
                let parent_name = mine[src].parent.map(|p| mine[p].name.as_str());
                if parent_name != t.parent.map(|p| theirs[p].name.as_str()) {
                    return Err(mismatch());
                }
                Ok(Joint {
                    parent: t.parent,
                    ..mine[src].clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = self
            .frames
            .iter()
            .map(|f| Pose {
                rotations: perm.iter().map(|&src| f.rotations[src]).collect(),
                root: f.root,
            })
            .collect();
        MotionClip::new(Skeleton::new(joints)?, frames, self.fps)
    }
}

/// Cuts `⌊(L − T)/stride⌋ + 1` consecutive windows of length `t`.
pub fn window(clip: &MotionClip, t: usize, stride: usize) -> Result<Vec<MotionWindow>> {
    if t == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window length and stride must be >= 1".into()));
    }
    if clip.len() < t {
        return Err(Error::TooShort {
            len: clip.len(),
            window: t,
        });
    }
    (0..=(clip.len() - t) / stride)
        .map(|i| clip.slice(i * stride, t)?.to_window())
        .collect()
}

/// Frame-rate and orientation augmentation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Integer subsampling factors; one is drawn per call.
    pub rate_factors: Vec<usize>,
    /// Apply a random rotation about the vertical (y) axis.
    pub rotate: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rate_factors: vec![1, 2, 4],
            rotate: true,
            seed: 0,
        }
    }
}

/// Subsamples by a drawn rate factor and pre-multiplies a random global
/// rotation onto the root (rotating root translations with it).
pub fn augment(clip: &MotionClip, cfg: &AugmentConfig) -> Result<MotionClip> {
    if cfg.rate_factors.is_empty() || cfg.rate_factors.contains(&0) {
        return Err(Error::InvalidArgument(
            "rate factors must be non-empty and positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factor = *cfg.rate_factors.choose(&mut rng).expect("non-empty");
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let mut frames: Vec<Pose> = clip.frames.iter().step_by(factor).cloned().collect();
    if cfg.rotate {
        let r = RotMatrix::ry(angle);
        for f in &mut frames {
            let root = r.mul(&rot6d_to_matrix(&f.rotations[0])?);
            f.rotations[0] = matrix_to_rot6d(&root)?;
            f.root = r.apply(f.root);
        }
    }
    MotionClip::new(clip.skeleton.clone(), frames, clip.fps / factor as f64)
}

/// Stacks per-frame joint positions into a `[T×J×3]` tensor.
pub fn positions_tensor(frames: &[JointPositions]) -> Result<Tensor<f64>> {
    let t = frames.len();
    let j = frames.first().map_or(0, Vec::len);
    Tensor::new(vec![t, j, 3], frames.iter().flatten().flatten().copied().collect())
}
