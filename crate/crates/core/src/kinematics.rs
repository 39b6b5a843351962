//! Forward kinematics from local joint rotations to world-space positions.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Result};
use crate::rotation::{rot6d_to_matrix, Rot6D, RotMatrix};
use crate::skeleton::Skeleton;
use crate::tensor::{Real, Tensor};

/// Local rotations of every joint (the root's is the global orientation)
/// plus the root translation in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotations: Vec<Rot6D>,
    pub root: [f64; 3],
}

impl Pose {
    pub fn identity(joints: usize) -> Pose {
        Pose {
            rotations: vec![Rot6D::IDENTITY; joints],
            root: [0.0; 3],
        }
    }

    pub fn matrices(&self) -> Result<Vec<RotMatrix>> {
        self.rotations.iter().map(rot6d_to_matrix).collect()
    }
}

/// World-space joint positions of one frame.
pub type JointPositions = Vec<[f64; 3]>;

/// Composes local rotations root-first into global rotations.
pub fn global_rotations(local: &[RotMatrix], skeleton: &Skeleton) -> Result<Vec<RotMatrix>> {
    if local.len() != skeleton.num_joints() {
        return Err(shape_err("global_rotations", skeleton.num_joints(), local.len()));
    }
    let mut global: Vec<RotMatrix> = Vec::with_capacity(local.len());
    for (j, r) in local.iter().enumerate() {
        let g = match skeleton.parent(j) {
            Some(p) => global[p].mul(r),
            None => *r,
        };
        global.push(g);
    }
    Ok(global)
}

/// `p_root = t`, `p_child = p_parent + G_parent · offset_child`.
pub fn forward_kinematics_matrices(local: &[RotMatrix], root: [f64; 3], skeleton: &Skeleton) -> Result<JointPositions> {
    let global = global_rotations(local, skeleton)?;
    let mut pos: JointPositions = Vec::with_capacity(local.len());
    for joint in skeleton.joints() {
        let p = match joint.parent {
            Some(p) => {
                let o = global[p].apply(joint.offset);
                [pos[p][0] + o[0], pos[p][1] + o[1], pos[p][2] + o[2]]
            }
            None => root,
        };
        pos.push(p);
    }
    Ok(pos)
}

pub fn forward_kinematics(pose: &Pose, skeleton: &Skeleton) -> Result<JointPositions> {
    forward_kinematics_matrices(&pose.matrices()?, pose.root, skeleton)
}

struct FkOp<S> {
    parents: Vec<Option<usize>>,
    offsets: Vec<[S; 3]>,
    frames: usize,
    // global rotations per frame and joint, row-major
    global: Vec<S>,
    with_translation: bool,
}

#[inline]
fn matmul3<S: Real>(a: &[S], b: &[S], out: &mut [S]) {
    for r in 0..3 {
        for c in 0..3 {
            out[r * 3 + c] = a[r * 3] * b[c] + a[r * 3 + 1] * b[3 + c] + a[r * 3 + 2] * b[6 + c];
        }
    }
}

impl<S: Real> Op<S> for FkOp<S> {
    fn name(&self) -> &'static str {
        "forward_kinematics"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        let local = inputs[0].data();
        let j_count = self.parents.len();
        let mut g_rot = vec![S::zero(); local.len()];
        let mut g_trans = vec![S::zero(); self.frames * 3];
        let mut g_global = vec![S::zero(); j_count * 9];
        let mut g_pos = vec![S::zero(); j_count * 3];
        for t in 0..self.frames {
            g_global.iter_mut().for_each(|v| *v = S::zero());
            g_pos.copy_from_slice(&g[t * j_count * 3..(t + 1) * j_count * 3]);
            let glob = &self.global[t * j_count * 9..(t + 1) * j_count * 9];
            for j in (0..j_count).rev() {
                let gg: [S; 9] = g_global[j * 9..j * 9 + 9].try_into().unwrap();
                let base = (t * j_count + j) * 9;
                match self.parents[j] {
                    Some(p) => {
                        let o = self.offsets[j];
                        let gp = [g_pos[j * 3], g_pos[j * 3 + 1], g_pos[j * 3 + 2]];
                        for r in 0..3 {
                            g_pos[p * 3 + r] += gp[r];
                        }
                        let gparent = &glob[p * 9..p * 9 + 9];
                        let rl = &local[base..base + 9];
                        // G_j = G_p R_j
                        for r in 0..3 {
                            for c in 0..3 {
                                // dG_p += gp ⊗ o + gG_j R_jᵀ
                                let mut acc = gp[r] * o[c];
                                for k in 0..3 {
                                    acc += gg[r * 3 + k] * rl[c * 3 + k];
                                }
                                g_global[p * 9 + r * 3 + c] += acc;
                                // dR_j = G_pᵀ gG_j
                                let mut acc = S::zero();
                                for k in 0..3 {
                                    acc += gparent[k * 3 + r] * gg[k * 3 + c];
                                }
                                g_rot[base + r * 3 + c] = acc;
                            }
                        }
                    }
                    None => {
                        g_rot[base..base + 9].copy_from_slice(&gg);
                        g_trans[t * 3..t * 3 + 3].copy_from_slice(&g_pos[j * 3..j * 3 + 3]);
                    }
                }
            }
        }
        let mut out = vec![needs[0].then_some(g_rot)];
        if self.with_translation {
            out.push(needs[1].then_some(g_trans));
        }
        out
    }
}

/// Differentiable forward kinematics: `[T×J×9]` local rotation matrices
/// (row-major) and optional `[T×3]` root translations to `[T×J×3]` positions.
/// Without a translation input the root sits at the origin.
pub fn forward_kinematics_op<S: Real>(
    tape: &mut Tape<S>,
    rotations: Var,
    translation: Option<Var>,
    skeleton: &Skeleton,
) -> Result<Var> {
    let rs = tape.shape(rotations);
    let j_count = skeleton.num_joints();
    let [frames, joints, 9] = *rs else {
        return Err(shape_err("forward_kinematics", "[T, J, 9]", rs));
    };
    if joints != j_count {
        return Err(shape_err("forward_kinematics", j_count, joints));
    }
    if let Some(tr) = translation {
        if tape.shape(tr) != [frames, 3] {
            return Err(shape_err("forward_kinematics", [frames, 3], tape.shape(tr)));
        }
    }
    let parents = skeleton.parents();
    let offsets: Vec<[S; 3]> = skeleton.offsets().iter().map(|o| o.map(S::lit)).collect();
    let local = tape.value(rotations).data();
    let trans = translation.map(|t| tape.value(t).data());
    let mut global = vec![S::zero(); frames * j_count * 9];
    let mut pos = vec![S::zero(); frames * j_count * 3];
    for t in 0..frames {
        for j in 0..j_count {
            let base = (t * j_count + j) * 9;
            match parents[j] {
                Some(p) => {
                    let pb = (t * j_count + p) * 9;
                    let (head, tail) = global.split_at_mut(base);
                    matmul3(&head[pb..pb + 9], &local[base..base + 9], &mut tail[..9]);
                    let gp = &global[pb..pb + 9];
                    let o = offsets[j];
                    for r in 0..3 {
                        pos[(t * j_count + j) * 3 + r] = pos[(t * j_count + p) * 3 + r]
                            + gp[r * 3] * o[0]
                            + gp[r * 3 + 1] * o[1]
                            + gp[r * 3 + 2] * o[2];
                    }
                }
                None => {
                    global[base..base + 9].copy_from_slice(&local[base..base + 9]);
                    if let Some(tr) = trans {
                        pos[(t * j_count + j) * 3..][..3].copy_from_slice(&tr[t * 3..t * 3 + 3]);
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![frames, j_count, 3], pos)?;
    let op = FkOp {
        parents,
        offsets,
        frames,
        global,
        with_translation: translation.is_some(),
    };
    let inputs: Vec<Var> = std::iter::once(rotations).chain(translation).collect();
    Ok(tape.push(out, &inputs, op))
}
