use serde::{Deserialize, Serialize};

use crate::autodiff::{ops, Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::hmvae::MotionWindow;
use crate::kinematics::{forward_kinematics_matrices, forward_kinematics_op};
use crate::rotation::{rot6d_to_matrix, rot6d_to_matrix_op};
use crate::skeleton::Skeleton;
use crate::tensor::{Real, Tensor};

/// Weights of the objective: `β` on both KL terms, `λ` on joint positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.003,
            lambda: 10.0,
        }
    }
}

/// Individual terms of the objective (unweighted) and the weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub total: f64,
    pub rot6d: f64,
    pub rotmat: f64,
    pub joints: f64,
    pub kl_local: f64,
    pub kl_global: f64,
}

impl LossComponents {
    /// Reconstruction part only: `L_6d + L_rot + λ·L_joints`.
    pub fn reconstruction(&self, lambda: f64) -> f64 {
        self.rot6d + self.rotmat + lambda * self.joints
    }

    pub(crate) fn accumulate(&mut self, o: &LossComponents) {
        self.total += o.total;
        self.rot6d += o.rot6d;
        self.rotmat += o.rotmat;
        self.joints += o.joints;
        self.kl_local += o.kl_local;
        self.kl_global += o.kl_global;
    }

    pub(crate) fn scaled(mut self, f: f64) -> LossComponents {
        for v in [
            &mut self.total,
            &mut self.rot6d,
            &mut self.rotmat,
            &mut self.joints,
            &mut self.kl_local,
            &mut self.kl_global,
        ] {
            *v *= f;
        }
        self
    }
}

/// Ground truth of one window in the three spaces the loss compares:
/// 6D features, rotation matrices and FK joint positions (root at origin).
/// Optional per-entry weights restrict the comparison to observed entries.
#[derive(Clone, Debug)]
pub struct LossTarget<S: Real> {
    pub rot6d: Vec<S>,
    pub rotmat: Vec<S>,
    pub joints: Vec<S>,
    weights: Option<[Vec<S>; 3]>,
    frames: usize,
    num_joints: usize,
}

impl<S: Real> LossTarget<S> {
    pub fn new(x: &MotionWindow, skeleton: &Skeleton) -> Result<Self> {
        let (t, j) = (x.frames(), x.joints());
        if j != skeleton.num_joints() {
            return Err(shape_err("LossTarget", skeleton.num_joints(), j));
        }
        let mut rotmat = Vec::with_capacity(t * j * 9);
        let mut joints = Vec::with_capacity(t * j * 3);
        for f in 0..t {
            let mats = x.frame(f).iter().map(rot6d_to_matrix).collect::<Result<Vec<_>>>()?;
            rotmat.extend(mats.iter().flat_map(|m| m.flat()).map(S::lit));
            let pos = forward_kinematics_matrices(&mats, [0.0; 3], skeleton)?;
            joints.extend(pos.iter().flatten().map(|&v| S::lit(v)));
        }
        Ok(LossTarget {
            rot6d: x.rotations.data().iter().map(|&v| S::lit(v)).collect(),
            rotmat,
            joints,
            weights: None,
            frames: t,
            num_joints: j,
        })
    }

    /// Restricts every term to entries whose `(frame, joint)` weight is
    /// nonzero. `mask` is `[T·J]`, frame-major.
    pub fn with_mask(mut self, mask: &[f64]) -> Result<Self> {
        let n = self.frames * self.num_joints;
        if mask.len() != n {
            return Err(shape_err("LossTarget::with_mask", n, mask.len()));
        }
        if mask.iter().all(|&m| m == 0.0) {
            return Err(Error::EmptyMask);
        }
        let expand = |k: usize| mask.iter().flat_map(|&m| std::iter::repeat_n(S::lit(m), k)).collect();
        self.weights = Some([expand(6), expand(9), expand(3)]);
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    fn weight(&self, k: usize) -> Option<&[S]> {
        self.weights.as_ref().map(|w| w[k].as_slice())
    }
}

struct KlOp;
impl<S: Real> Op<S> for KlOp {
    fn name(&self) -> &'static str {
        "kl"
    }
    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let half = S::lit(0.5);
        vec![
            needs[0].then(|| inputs[0].data().iter().map(|&m| g[0] * m).collect()),
            needs[1].then(|| {
                inputs[1]
                    .data()
                    .iter()
                    .map(|&lv| g[0] * half * (lv.exp() - S::one()))
                    .collect()
            }),
        ]
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² − 1 − log σ²)`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

pub fn kl_op<S: Real>(tape: &mut Tape<S>, mu: Var, log_var: Var) -> Result<Var> {
    let (m, lv) = (tape.value(mu), tape.value(log_var));
    if m.shape() != lv.shape() {
        return Err(shape_err("kl", m.shape(), lv.shape()));
    }
    let half = S::lit(0.5);
    let total: S = m
        .data()
        .iter()
        .zip(lv.data())
        .map(|(&m, &lv)| m * m + lv.exp() - S::one() - lv)
        .sum::<S>()
        * half;
    Ok(tape.push(Tensor::scalar(total), &[mu, log_var], KlOp))
}

/// Builds the objective `L_6d + L_rot + λ·L_joints + β·KL_l + β·KL_g` on
/// the tape for a decoded window `x_hat` `[T×J×6]`. KL terms are included
/// for each posterior given. Returns the scalar loss and its components.
pub fn loss_total<S: Real>(
    tape: &mut Tape<S>,
    x_hat: Var,
    target: &LossTarget<S>,
    skeleton: &Skeleton,
    local: Option<(Var, Var)>,
    global: Option<(Var, Var)>,
    w: LossWeights,
) -> Result<(Var, LossComponents)> {
    let expect = [target.frames, target.num_joints, 6];
    if tape.shape(x_hat) != expect {
        return Err(shape_err("loss_total", expect, tape.shape(x_hat)));
    }
    let l6 = ops::sq_err_sum(tape, x_hat, &target.rot6d, target.weight(0))?;
    let mats = rot6d_to_matrix_op(tape, x_hat)?;
    let lr = ops::sq_err_sum(tape, mats, &target.rotmat, target.weight(1))?;
    let pos = forward_kinematics_op(tape, mats, None, skeleton)?;
    let lj = ops::sq_err_sum(tape, pos, &target.joints, target.weight(2))?;
    let mut c = LossComponents {
        rot6d: tape.value(l6).item().to_f64_lossy(),
        rotmat: tape.value(lr).item().to_f64_lossy(),
        joints: tape.value(lj).item().to_f64_lossy(),
        ..Default::default()
    };
    let lj = ops::scale(tape, lj, w.lambda);
    let mut total = ops::add(tape, l6, lr)?;
    total = ops::add(tape, total, lj)?;
    if let Some((mu, lv)) = local {
        let kl = kl_op(tape, mu, lv)?;
        c.kl_local = tape.value(kl).item().to_f64_lossy();
        let kl = ops::scale(tape, kl, w.beta);
        total = ops::add(tape, total, kl)?;
    }
    if let Some((mu, lv)) = global {
        let kl = kl_op(tape, mu, lv)?;
        c.kl_global = tape.value(kl).item().to_f64_lossy();
        let kl = ops::scale(tape, kl, w.beta);
        total = ops::add(tape, total, kl)?;
    }
    c.total = tape.value(total).item().to_f64_lossy();
    if !c.total.is_finite() {
        return Err(Error::NonFinite(format!("loss components {c:?}")));
    }
    Ok((total, c))
}
