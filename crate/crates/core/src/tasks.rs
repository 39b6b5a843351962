//! Procedures over a trained model: sliding-window refinement and two-phase
//! latent/decoder optimization for in-betweening and partial-body completion.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::hmvae::{loss_total, HmVae, LatentPair, LossComponents, LossTarget, LossWeights, MotionWindow};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rotation::{matrix_to_quat, matrix_to_rot6d, rot6d_to_matrix, slerp, Rot6D};
use crate::skeleton::Skeleton;
use crate::tensor::{Real, Tensor};

/// Observed `(frame, joint)` entries: the product of a frame mask and a joint mask.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintMask {
    pub frames: Vec<bool>,
    pub joints: Vec<bool>,
}

impl ConstraintMask {
    pub fn new(frames: Vec<bool>, joints: Vec<bool>) -> Result<Self> {
        if !frames.contains(&true) || !joints.contains(&true) {
            return Err(Error::EmptyMask);
        }
        Ok(ConstraintMask { frames, joints })
    }

    pub fn is_known(&self, t: usize, j: usize) -> bool {
        self.frames[t] && self.joints[j]
    }

    pub fn known_count(&self) -> usize {
        self.frames.iter().filter(|&&f| f).count() * self.joints.iter().filter(|&&j| j).count()
    }

    /// `[T·J]` 0/1 weights, frame-major.
    pub fn weights(&self) -> Vec<f64> {
        self.frames
            .iter()
            .flat_map(|&f| self.joints.iter().map(move |&j| if f && j { 1.0 } else { 0.0 }))
            .collect()
    }
}

/// Frames `[0, lead)` and `[T − trail, T)` known for all `joints`.
pub fn make_keyframe_mask(t: usize, joints: usize, lead: usize, trail: usize) -> Result<ConstraintMask> {
    if lead + trail > t {
        return Err(Error::InvalidArgument(format!(
            "lead {lead} + trail {trail} exceeds window {t}"
        )));
    }
    let frames = (0..t).map(|f| f < lead || f >= t - trail).collect();
    ConstraintMask::new(frames, vec![true; joints])
}

/// All `t` frames known for the joints of a named body part.
pub fn make_body_part_mask(skeleton: &Skeleton, t: usize, part: &str) -> Result<ConstraintMask> {
    let mut joints = vec![false; skeleton.num_joints()];
    for j in skeleton.part(part)? {
        joints[j] = true;
    }
    ConstraintMask::new(vec![true; t], joints)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    /// Weight of the joint-position term.
    pub lambda1: f64,
    /// Weight of the decoder-deviation penalty in phase 2.
    pub lambda2: f64,
    /// Step size for the latent codes (phase 1).
    pub lr: f64,
    /// Step size for decoder parameters (phase 2).
    pub decoder_lr: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Independent initial draws; the one with the lowest phase-1 loss is kept.
    pub restarts: usize,
}

impl OptimConfig {
    /// 50 latent + 100 decoder iterations.
    pub fn interpolation() -> Self {
        OptimConfig {
            phase1_iters: 50,
            phase2_iters: 100,
            lambda1: 10.0,
            lambda2: 1.0,
            lr: 0.05,
            decoder_lr: 1e-4,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            restarts: 1,
        }
    }

    /// 100 latent + 200 decoder iterations.
    pub fn completion() -> Self {
        OptimConfig {
            phase1_iters: 100,
            phase2_iters: 200,
            ..OptimConfig::interpolation()
        }
    }
}

/// One line of the optimization trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimRecord {
    pub iteration: usize,
    pub phase: u8,
    pub restart: usize,
    /// Masked `L_6d + L_rot + λ1·L_joints`.
    pub reconstruction: f64,
    /// `λ2·‖θ′ − θ‖²` (zero in phase 1).
    pub regularizer: f64,
    pub rot6d: f64,
    pub rotmat: f64,
    pub joints: f64,
}

impl OptimRecord {
    fn new(iteration: usize, phase: u8, restart: usize, c: &LossComponents, regularizer: f64) -> Self {
        OptimRecord {
            iteration,
            phase,
            restart,
            reconstruction: c.total,
            regularizer,
            rot6d: c.rot6d,
            rotmat: c.rotmat,
            joints: c.joints,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub window: MotionWindow,
    pub latent: LatentPair,
    pub trace: Vec<OptimRecord>,
    /// `‖θ′ − θ‖` over the decoder parameters.
    pub decoder_shift: f64,
}

impl OptimResult {
    /// Trace as JSON lines.
    pub fn trace_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}

struct Latents<S: Real> {
    local: Option<Tensor<S>>,
    global: Tensor<S>,
}

impl<S: Real> Latents<S> {
    fn sample(model: &HmVae<S>, rng: &mut ChaCha8Rng) -> Self {
        let d = model.descriptor();
        let mut draw = |n: usize| Tensor::from_vec((0..n).map(|_| S::lit(StandardNormal.sample(rng))).collect());
        let global = draw(d.latent_global);
        let local = d.variant.has_local_latent().then(|| draw(d.latent_local));
        Latents { local, global }
    }

    fn to_pair(&self) -> LatentPair {
        LatentPair {
            local: self.local.as_ref().map(|t| t.to_f64_vec()).unwrap_or_default(),
            global: self.global.to_f64_vec(),
        }
    }
}

fn reconstruction<S: Real>(
    model: &HmVae<S>,
    tape: &mut Tape<S>,
    p: &[Var],
    zl: Option<Var>,
    zg: Var,
    target: &LossTarget<S>,
    lambda1: f64,
) -> Result<(Var, LossComponents)> {
    let y = model.decode_on(tape, p, zl, zg)?;
    let w = LossWeights {
        beta: 0.0,
        lambda: lambda1,
    };
    loss_total(tape, y, target, &model.descriptor().skeleton, None, None, w)
}

fn phase1<S: Real>(
    model: &HmVae<S>,
    target: &LossTarget<S>,
    z: &mut Latents<S>,
    cfg: &OptimConfig,
    restart: usize,
    trace: &mut Vec<OptimRecord>,
) -> Result<f64> {
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut last = f64::INFINITY;
    for it in 0..=cfg.phase1_iters {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, |_| false);
        let zl = z.local.as_ref().map(|t| tape.param(t.clone()));
        let zg = tape.param(z.global.clone());
        let (loss, c) = reconstruction(model, &mut tape, &p, zl, zg, target, cfg.lambda1)?;
        last = c.total;
        if it == cfg.phase1_iters {
            break;
        }
        trace.push(OptimRecord::new(it, 1, restart, &c, 0.0));
        tape.backward(loss)?;
        let mut grads = vec![Some(tape.grad_or_zero(zg))];
        let mut params = vec![z.global.clone()];
        if let (Some(v), Some(t)) = (zl, z.local.take()) {
            grads.push(Some(tape.grad_or_zero(v)));
            params.push(t);
        }
        opt.step(&mut params, &grads);
        let mut params = params.into_iter();
        z.global = params.next().expect("global latent");
        if let Some(t) = params.next() {
            z.local = Some(t);
        }
    }
    Ok(last)
}

fn phase2<S: Real>(
    model: &mut HmVae<S>,
    reference: &[Tensor<S>],
    target: &LossTarget<S>,
    z: &Latents<S>,
    cfg: &OptimConfig,
    restart: usize,
    trace: &mut Vec<OptimRecord>,
) -> Result<()> {
    let decoder = model.layout().decoder_params();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.decoder_lr);
    for it in 0..cfg.phase2_iters {
        let mut tape = Tape::new();
        let p = model.bind(&mut tape, |i| decoder.contains(&i));
        let zl = z.local.as_ref().map(|t| tape.constant(t.clone()));
        let zg = tape.constant(z.global.clone());
        let (mut loss, c) = reconstruction(model, &mut tape, &p, zl, zg, target, cfg.lambda1)?;
        let mut reg_value = 0.0;
        for &i in &decoder {
            let r = ops::sq_err_sum(&mut tape, p[i], reference[i].data(), None)?;
            reg_value += tape.value(r).item().to_f64_lossy();
            let r = ops::scale(&mut tape, r, cfg.lambda2);
            loss = ops::add(&mut tape, loss, r)?;
        }
        let total = tape.value(loss).item().to_f64_lossy();
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("phase 2 loss at iteration {it}")));
        }
        trace.push(OptimRecord::new(it, 2, restart, &c, cfg.lambda2 * reg_value));
        tape.backward(loss)?;
        let grads: Vec<Option<Vec<S>>> = p
            .iter()
            .enumerate()
            .map(|(i, &v)| decoder.contains(&i).then(|| tape.grad_or_zero(v)))
            .collect();
        opt.step(model.params_mut(), &grads);
    }
    Ok(())
}

/// Fits latent codes (phase 1), then the decoder with a penalty for leaving
/// the pretrained weights (phase 2), so that the decoded window matches
/// `target` on the observed entries of `mask`.
pub fn optimize_latent<S: Real>(
    model: &HmVae<S>,
    target: &MotionWindow,
    mask: &ConstraintMask,
    cfg: &OptimConfig,
) -> Result<OptimResult> {
    let d = model.descriptor();
    if mask.frames.len() != d.window || mask.joints.len() != d.num_joints() {
        return Err(shape_err(
            "optimize_latent",
            (d.window, d.num_joints()),
            (mask.frames.len(), mask.joints.len()),
        ));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidArgument("restarts must be >= 1".into()));
    }
    let loss_target = LossTarget::new(target, &d.skeleton)?.with_mask(&mask.weights())?;
    let mut trace = Vec::new();
    let mut best: Option<(f64, usize, Latents<S>)> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let mut z = Latents::sample(model, &mut rng);
        let loss = phase1(model, &loss_target, &mut z, cfg, r, &mut trace)?;
        if best.as_ref().is_none_or(|b| loss < b.0) {
            best = Some((loss, r, z));
        }
    }
    let (_, restart, z) = best.expect("at least one restart");
    let mut tuned = model.clone();
    phase2(&mut tuned, model.params(), &loss_target, &z, cfg, restart, &mut trace)?;
    let decoder_shift = tuned
        .params()
        .iter()
        .zip(model.params())
        .map(|(a, b)| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (*x - *y).to_f64_lossy().powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt();
    let latent = z.to_pair();
    let window = tuned.decode(&latent)?;
    Ok(OptimResult {
        window,
        latent,
        trace,
        decoder_shift,
    })
}

fn project(r: &Rot6D) -> Result<Rot6D> {
    matrix_to_rot6d(&rot6d_to_matrix(r)?)
}

/// Slides the model window one frame at a time over `noisy`, keeping each
/// window's reconstructed center frame `⌊T/2⌋`. The first `⌊T/2⌋` frames
/// come from the first window and the tail from the last window. Output
/// rotations are projected onto valid rotations.
pub fn refine_sequence<S: Real>(model: &HmVae<S>, noisy: &MotionWindow) -> Result<MotionWindow> {
    let t = model.descriptor().window;
    let (len, joints) = (noisy.frames(), noisy.joints());
    if len < t {
        return Err(Error::TooShort { len, window: t });
    }
    let c = t / 2;
    let positions = len - t + 1;
    let recon: Vec<MotionWindow> = (0..positions)
        .into_par_iter()
        .map(|start| {
            let data = noisy.rotations.data()[start * joints * 6..(start + t) * joints * 6].to_vec();
            model.reconstruct(&MotionWindow::new(Tensor::new(vec![t, joints, 6], data)?)?)
        })
        .collect::<Result<_>>()?;
    let mut frames = Vec::with_capacity(len);
    for f in 0..len {
        let (w, local) = if f < c {
            (0, f)
        } else if f < c + positions {
            (f - c, c)
        } else {
            (positions - 1, f - (positions - 1))
        };
        frames.push(recon[w].frame(local).iter().map(project).collect::<Result<Vec<_>>>()?);
    }
    MotionWindow::from_frames(&frames)
}

/// Slerp baseline: every unknown frame interpolates each joint between the
/// nearest known frames before and after it (holding the nearest one at the ends).
pub fn slerp_inbetween(target: &MotionWindow, mask: &ConstraintMask) -> Result<MotionWindow> {
    let known: Vec<usize> = (0..target.frames()).filter(|&f| mask.frames[f]).collect();
    if known.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut frames = Vec::with_capacity(target.frames());
    for f in 0..target.frames() {
        if mask.frames[f] {
            frames.push(target.frame(f));
            continue;
        }
        let prev = known.iter().rev().find(|&&k| k < f).copied();
        let next = known.iter().find(|&&k| k > f).copied();
        let frame = match (prev, next) {
            (Some(a), Some(b)) => {
                let u = (f - a) as f64 / (b - a) as f64;
                (0..target.joints())
                    .map(|j| {
                        let qa = matrix_to_quat(&rot6d_to_matrix(&target.rot6d(a, j))?)?;
                        let qb = matrix_to_quat(&rot6d_to_matrix(&target.rot6d(b, j))?)?;
                        matrix_to_rot6d(&slerp(&qa, &qb, u)?.to_matrix())
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            (Some(k), None) | (None, Some(k)) => target.frame(k),
            (None, None) => unreachable!("known is non-empty"),
        };
        frames.push(frame);
    }
    MotionWindow::from_frames(&frames)
}

/// Linear interpolation of root positions between the nearest known frames.
pub fn lerp_root(roots: &[[f64; 3]], known: &[bool]) -> Result<Vec<[f64; 3]>> {
    if roots.len() != known.len() {
        return Err(shape_err("lerp_root", roots.len(), known.len()));
    }
    let keys: Vec<usize> = (0..roots.len()).filter(|&f| known[f]).collect();
    if keys.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok((0..roots.len())
        .map(|f| {
            let prev = keys.iter().rev().find(|&&k| k <= f).copied();
            let next = keys.iter().find(|&&k| k >= f).copied();
            match (prev, next) {
                (Some(a), Some(b)) if a != b => {
                    let u = (f - a) as f64 / (b - a) as f64;
                    [0, 1, 2].map(|k| roots[a][k] + u * (roots[b][k] - roots[a][k]))
                }
                (Some(k), _) | (None, Some(k)) => roots[k],
                (None, None) => unreachable!("keys is non-empty"),
            }
        })
        .collect())
}

/// Linear interpolation of the raw 6D channels, re-projected to rotations.
pub fn lerp_inbetween(target: &MotionWindow, mask: &ConstraintMask) -> Result<MotionWindow> {
    let j = target.joints();
    let mut data = target.rotations.data().to_vec();
    for c in 0..j * 6 {
        let series: Vec<[f64; 3]> = (0..target.frames()).map(|f| [data[f * j * 6 + c], 0.0, 0.0]).collect();
        let filled = lerp_root(&series, &mask.frames)?;
        for (f, v) in filled.iter().enumerate() {
            data[f * j * 6 + c] = v[0];
        }
    }
    let w = MotionWindow::new(Tensor::new(target.rotations.shape().to_vec(), data)?)?;
    let frames = (0..w.frames())
        .map(|f| w.frame(f).iter().map(project).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    MotionWindow::from_frames(&frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmvae::{ArchDescriptor, Variant};
    use crate::rotation::RotMatrix;

    fn toy_window(t: usize, phase: f64) -> MotionWindow {
        let frames: Vec<Vec<Rot6D>> = (0..t)
            .map(|f| {
                (0..7)
                    .map(|j| matrix_to_rot6d(&RotMatrix::rz(0.4 * (0.3 * f as f64 + phase + j as f64).sin())).unwrap())
                    .collect()
            })
            .collect();
        MotionWindow::from_frames(&frames).unwrap()
    }

    #[test]
    fn keyframe_masks() {
        let m = make_keyframe_mask(16, 7, 10, 1).unwrap();
        assert_eq!(m.frames.iter().filter(|&&f| f).count(), 11);
        assert!(m.frames[9] && !m.frames[10] && m.frames[15]);
        assert!(make_keyframe_mask(16, 7, 16, 0).unwrap().frames.iter().all(|&f| f));
        assert!(matches!(make_keyframe_mask(16, 7, 0, 0), Err(Error::EmptyMask)));
        assert!(make_keyframe_mask(16, 7, 10, 7).is_err());
    }

    #[test]
    fn body_part_masks() {
        let sk = Skeleton::smpl24();
        let m = make_body_part_mask(&sk, 4, "upper").unwrap();
        for leg in ["l_hip", "r_knee", "l_ankle", "r_foot"] {
            assert!(!m.joints[sk.index_of(leg).unwrap()], "{leg}");
        }
        for up in ["pelvis", "spine1", "head", "l_wrist", "r_hand"] {
            assert!(m.joints[sk.index_of(up).unwrap()], "{up}");
        }
        assert!(make_body_part_mask(&sk, 4, "all").unwrap().joints.iter().all(|&j| j));
        assert!(matches!(
            make_body_part_mask(&sk, 4, "nonexistent"),
            Err(Error::UnknownPart(_))
        ));
    }

    #[test]
    fn refinement_lengths_and_centers() {
        let model = HmVae::<f64>::new(ArchDescriptor::toy_refinement(), 0).unwrap();
        for len in [8, 9, 15] {
            let x = toy_window(len, 0.1);
            assert_eq!(refine_sequence(&model, &x).unwrap().frames(), len);
        }
        // L = T + 2: three windows; frames 4, 5, 6 are their centers
        let x = toy_window(10, 0.3);
        let out = refine_sequence(&model, &x).unwrap();
        for (w, f) in [(0usize, 4usize), (1, 5), (2, 6)] {
            let slice = MotionWindow::from_frames(&(w..w + 8).map(|i| x.frame(i)).collect::<Vec<_>>()).unwrap();
            let r = model.reconstruct(&slice).unwrap();
            for j in 0..7 {
                let a = project(&r.rot6d(4, j)).unwrap();
                assert_eq!(out.rot6d(f, j), a);
            }
        }
        assert!(matches!(
            refine_sequence(&model, &toy_window(7, 0.0)),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn zero_iterations_decode_initial_draw() {
        let model = HmVae::<f64>::new(ArchDescriptor::toy(), 2).unwrap();
        let target = toy_window(16, 0.0);
        let mask = make_keyframe_mask(16, 7, 4, 1).unwrap();
        let cfg = OptimConfig {
            phase1_iters: 0,
            phase2_iters: 0,
            ..OptimConfig::interpolation()
        };
        let res = optimize_latent(&model, &target, &mask, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0);
        let z = Latents::sample(&model, &mut rng).to_pair();
        assert_eq!(res.latent, z);
        assert_eq!(res.window, model.decode(&z).unwrap());
        assert_eq!(res.decoder_shift, 0.0);
    }

    #[test]
    fn phase1_sgd_decreases_masked_loss() {
        let model = HmVae::<f64>::new(ArchDescriptor::toy().with_variant(Variant::MVae), 4).unwrap();
        let target = toy_window(16, 0.7);
        let mask = make_keyframe_mask(16, 7, 6, 2).unwrap();
        let cfg = OptimConfig {
            phase1_iters: 20,
            phase2_iters: 0,
            optimizer: OptimizerKind::Sgd,
            lr: 1e-4,
            ..OptimConfig::interpolation()
        };
        let res = optimize_latent(&model, &target, &mask, &cfg).unwrap();
        let first = res.trace.first().unwrap().reconstruction;
        let last = res.trace.last().unwrap().reconstruction;
        assert!(res.trace.iter().all(|r| r.reconstruction.is_finite()));
        assert!(last < first, "{first} -> {last}");
        let lines = res.trace_jsonl().unwrap();
        assert_eq!(lines.lines().count(), 20);
        assert!(lines.lines().next().unwrap().contains("\"phase\":1"));
    }

    #[test]
    fn slerp_baseline_keeps_keys_and_interpolates() {
        let a = matrix_to_rot6d(&RotMatrix::IDENTITY).unwrap();
        let b = matrix_to_rot6d(&RotMatrix::rz(std::f64::consts::FRAC_PI_2)).unwrap();
        let frames = vec![vec![a], vec![a], vec![b]];
        let x = MotionWindow::from_frames(&frames).unwrap();
        let mask = ConstraintMask::new(vec![true, false, true], vec![true]).unwrap();
        let out = slerp_inbetween(&x, &mask).unwrap();
        assert_eq!(out.frame(0), x.frame(0));
        assert_eq!(out.frame(2), x.frame(2));
        let m = rot6d_to_matrix(&out.rot6d(1, 0)).unwrap();
        assert!((m.0[1][0].atan2(m.0[0][0]) - std::f64::consts::FRAC_PI_4).abs() < 1e-9);
    }

    #[test]
    fn lerp_root_between_keys() {
        let roots = [[0.0, 0.0, 0.0], [9.0, 9.0, 9.0], [2.0, 4.0, 0.0]];
        let out = lerp_root(&roots, &[true, false, true]).unwrap();
        assert_eq!(out[1], [1.0, 2.0, 0.0]);
    }
}
