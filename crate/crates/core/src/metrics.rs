//! Pose and motion error metrics. Positions are meters; reported values are millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::data::MotionClip;
use crate::error::{shape_err, Error, Result};
use crate::kinematics::{global_rotations, JointPositions};
use crate::rotation::{matrix_to_quat, rot6d_to_matrix, Rot6D};
use crate::skeleton::Skeleton;

const MM: f64 = 1000.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mpjpe: f64,
    pub pa_mpjpe: f64,
    pub accel: f64,
    pub accel_err: f64,
    pub global_quat: f64,
}

impl MetricReport {
    /// All metrics of `pred` against `gt` (world-space positions from FK).
    pub fn compute(pred: &MotionClip, gt: &MotionClip) -> Result<Self> {
        if pred.skeleton.parents() != gt.skeleton.parents() {
            return Err(Error::InvalidArgument("clips use different skeletons".into()));
        }
        if pred.len() != gt.len() {
            return Err(Error::InvalidArgument(format!(
                "clips differ in length: {} vs {} frames",
                pred.len(),
                gt.len()
            )));
        }
        let (pp, gp) = (pred.positions()?, gt.positions()?);
        let (accel, accel_err) = accel_metrics(&pp, &gp)?;
        let rot = |c: &MotionClip| c.frames.iter().map(|f| f.rotations.clone()).collect::<Vec<_>>();
        Ok(MetricReport {
            mpjpe: mpjpe(&pp, &gp)?,
            pa_mpjpe: pa_mpjpe(&pp, &gp)?,
            accel,
            accel_err,
            global_quat: global_quat_loss(&rot(pred), &rot(gt), &gt.skeleton)?,
        })
    }
}

fn check(op: &'static str, pred: &[JointPositions], gt: &[JointPositions]) -> Result<()> {
    if pred.len() != gt.len() || pred.iter().zip(gt).any(|(a, b)| a.len() != b.len()) {
        return Err(shape_err(op, gt.len(), pred.len()));
    }
    if pred.is_empty() || pred[0].is_empty() {
        return Err(Error::InvalidArgument(format!("{op}: empty input")));
    }
    Ok(())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Mean per-joint position error after aligning the roots (joint 0) of every frame.
pub fn mpjpe(pred: &[JointPositions], gt: &[JointPositions]) -> Result<f64> {
    check("mpjpe", pred, gt)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let (rp, rg) = (p[0], g[0]);
        for (a, b) in p.iter().zip(g) {
            let a = [a[0] - rp[0], a[1] - rp[1], a[2] - rp[2]];
            let b = [b[0] - rg[0], b[1] - rg[1], b[2] - rg[2]];
            total += dist(a, b);
            n += 1;
        }
    }
    Ok(MM * total / n as f64)
}

fn to_vecs(p: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    p.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect()
}

fn centered(p: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let mean = p.iter().sum::<Vector3<f64>>() / p.len() as f64;
    (p.iter().map(|v| v - mean).collect(), mean)
}

fn is_collinear(c: &[Vector3<f64>]) -> bool {
    let scatter: Matrix3<f64> = c.iter().map(|v| v * v.transpose()).sum();
    let s = scatter.singular_values();
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s[0] == 0.0 || s[1] <= 1e-12 * s[0]
}

/// Aligns `pred` onto `gt` with the best similarity transform and returns
/// the aligned points.
pub fn procrustes_align(pred: &[[f64; 3]], gt: &[[f64; 3]], frame: usize) -> Result<Vec<[f64; 3]>> {
    let (x, _) = centered(&to_vecs(pred));
    let (y, my) = centered(&to_vecs(gt));
    if x.len() < 3 || is_collinear(&x) || is_collinear(&y) {
        return Err(Error::DegenerateFrame { frame });
    }
    let cov: Matrix3<f64> = y.iter().zip(&x).map(|(b, a)| b * a.transpose()).sum();
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u * vt).determinant().signum();
    let sign = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let r = u * sign * vt;
    let var_x: f64 = x.iter().map(|v| v.norm_squared()).sum();
    let trace = svd.singular_values[0] + svd.singular_values[1] + d * svd.singular_values[2];
    let s = trace / var_x;
    Ok(x.iter()
        .map(|v| {
            let a = s * (r * v) + my;
            [a.x, a.y, a.z]
        })
        .collect())
}

/// MPJPE after per-frame similarity Procrustes alignment.
pub fn pa_mpjpe(pred: &[JointPositions], gt: &[JointPositions]) -> Result<f64> {
    check("pa_mpjpe", pred, gt)?;
    let mut total = 0.0;
    let mut n = 0usize;
    for (f, (p, g)) in pred.iter().zip(gt).enumerate() {
        let aligned = procrustes_align(p, g, f)?;
        for (a, b) in aligned.iter().zip(g) {
            total += dist(*a, *b);
            n += 1;
        }
    }
    Ok(MM * total / n as f64)
}

fn second_diff(p: &[JointPositions], t: usize, j: usize) -> [f64; 3] {
    let (a, b, c) = (p[t - 1][j], p[t][j], p[t + 1][j]);
    [
        c[0] - 2.0 * b[0] + a[0],
        c[1] - 2.0 * b[1] + a[1],
        c[2] - 2.0 * b[2] + a[2],
    ]
}

/// `(accel, accel_err)`: mean second-difference magnitude of `pred`, and
/// mean magnitude of its difference from `gt`'s, in mm/frame².
pub fn accel_metrics(pred: &[JointPositions], gt: &[JointPositions]) -> Result<(f64, f64)> {
    check("accel_metrics", pred, gt)?;
    if pred.len() < 3 {
        return Err(Error::TooShort {
            len: pred.len(),
            window: 3,
        });
    }
    let (mut acc, mut err) = (0.0, 0.0);
    let mut n = 0usize;
    for t in 1..pred.len() - 1 {
        for j in 0..pred[t].len() {
            let (ap, ag) = (second_diff(pred, t, j), second_diff(gt, t, j));
            acc += dist(ap, [0.0; 3]);
            err += dist(ap, ag);
            n += 1;
        }
    }
    Ok((MM * acc / n as f64, MM * err / n as f64))
}

/// Mean L2 distance between hemisphere-canonical global joint quaternions.
pub fn global_quat_loss(pred: &[Vec<Rot6D>], gt: &[Vec<Rot6D>], skeleton: &Skeleton) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(shape_err("global_quat_loss", gt.len(), pred.len()));
    }
    let globals = |frame: &[Rot6D]| -> Result<Vec<[f64; 4]>> {
        let local = frame.iter().map(rot6d_to_matrix).collect::<Result<Vec<_>>>()?;
        global_rotations(&local, skeleton)?
            .iter()
            .map(|m| Ok(matrix_to_quat(m)?.to_array()))
            .collect()
    };
    let mut total = 0.0;
    let mut n = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(shape_err("global_quat_loss", g.len(), p.len()));
        }
        for (a, b) in globals(p)?.iter().zip(globals(g)?) {
            total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{matrix_to_rot6d, RotMatrix};
    use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(rng: &mut ChaCha8Rng, t: usize, j: usize) -> Vec<JointPositions> {
        (0..t)
            .map(|_| {
                (0..j)
                    .map(|_| [0; 3].map(|_: i32| rng.random_range(-1.0..1.0)))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn mpjpe_hand_values() {
        let gt = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]];
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let mut pred = gt.clone();
        for p in pred[0].iter_mut().skip(1) {
            p[0] += 0.003;
            p[1] += 0.004;
        }
        // root error 0, two joints off by 5 mm
        let v = mpjpe(&pred, &gt).unwrap();
        assert!((v - 10.0 / 3.0).abs() < 1e-9);
        let gt2 = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]];
        let pred2 = vec![vec![[0.0, 0.0, 0.0], [1.003, 0.004, 0.0]]];
        let v = mpjpe(&pred2, &gt2).unwrap();
        assert!((v - 2.5).abs() < 1e-9);
        // every joint offset beyond root alignment: root itself fixed to zero error
        let shifted = vec![vec![[0.5, 0.5, 0.5], [1.503, 0.504, 0.5]]];
        assert!((mpjpe(&shifted, &gt2).unwrap() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, g) = (random_frames(&mut rng, 5, 6), random_frames(&mut rng, 5, 6));
        let mut sum = 0.0;
        for t in 0..5 {
            for j in 0..6 {
                let d: f64 = (0..3)
                    .map(|k| ((p[t][j][k] - p[t][0][k]) - (g[t][j][k] - g[t][0][k])).powi(2))
                    .sum();
                sum += d.sqrt();
            }
        }
        assert!((mpjpe(&p, &g).unwrap() - 1000.0 * sum / 30.0).abs() < 1e-9);
    }

    /// Horn's closed-form absolute orientation with scale, independent of the SVD path.
    fn horn_pa(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> f64 {
        let (x, _) = centered(&to_vecs(pred));
        let (y, my) = centered(&to_vecs(gt));
        let m: Matrix3<f64> = x.iter().zip(&y).map(|(a, b)| a * b.transpose()).sum();
        let (sxx, sxy, sxz) = (m[(0, 0)], m[(0, 1)], m[(0, 2)]);
        let (syx, syy, syz) = (m[(1, 0)], m[(1, 1)], m[(1, 2)]);
        let (szx, szy, szz) = (m[(2, 0)], m[(2, 1)], m[(2, 2)]);
        let n = Matrix4::new(
            sxx + syy + szz,
            syz - szy,
            szx - sxz,
            sxy - syx,
            syz - szy,
            sxx - syy - szz,
            sxy + syx,
            szx + sxz,
            szx - sxz,
            sxy + syx,
            -sxx + syy - szz,
            syz + szy,
            sxy - syx,
            szx + sxz,
            syz + szy,
            -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(n);
        let (imax, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let q = eig.eigenvectors.column(imax);
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        let rx: Vec<Vector3<f64>> = x.iter().map(|v| r * v).collect();
        let s = rx.iter().zip(&y).map(|(a, b)| a.dot(b)).sum::<f64>() / x.iter().map(|v| v.norm_squared()).sum::<f64>();
        rx.iter()
            .zip(&y)
            .map(|(a, b)| (s * a + my - (b + my)).norm())
            .sum::<f64>()
            / x.len() as f64
            * 1000.0
    }

    #[test]
    fn pa_mpjpe_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (p, g) = (random_frames(&mut rng, 1, 8), random_frames(&mut rng, 1, 8));
            let a = pa_mpjpe(&p, &g).unwrap();
            let b = horn_pa(&p[0], &g[0]);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn pa_mpjpe_removes_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_frames(&mut rng, 3, 7);
        let r = RotMatrix::from_axis_angle([0.3, -1.0, 0.4], 1.1);
        let p: Vec<JointPositions> = g
            .iter()
            .map(|f| f.iter().map(|v| r.apply(*v).map(|c| 2.5 * c + 0.7)).collect())
            .collect();
        assert!(pa_mpjpe(&p, &g).unwrap() < 1e-6);
        assert!(pa_mpjpe(&g, &g).unwrap() < 1e-9);
    }

    #[test]
    fn pa_mpjpe_rejects_collinear() {
        let line = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]];
        let ok = vec![vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]];
        assert!(matches!(pa_mpjpe(&line, &ok), Err(Error::DegenerateFrame { frame: 0 })));
    }

    #[test]
    fn accel_hand_values() {
        let lin: Vec<JointPositions> = (0..5)
            .map(|t| vec![[0.001 * t as f64, 0.0, 0.002 * t as f64]])
            .collect();
        assert_eq!(accel_metrics(&lin, &lin).unwrap(), (0.0, 0.0));
        let quad: Vec<JointPositions> = (0..5).map(|t| vec![[0.001 * (t * t) as f64, 0.0, 0.0]]).collect();
        let (a, e) = accel_metrics(&quad, &lin).unwrap();
        assert!((a - 2.0).abs() < 1e-9 && (e - 2.0).abs() < 1e-9);
        assert!(accel_metrics(&lin[..2], &lin[..2]).is_err());
    }

    #[test]
    fn global_quat_hand_values() {
        let sk = Skeleton::chain(1, 1.0).unwrap();
        let id = vec![vec![Rot6D::IDENTITY]];
        let rz = vec![vec![
            matrix_to_rot6d(&RotMatrix::rz(std::f64::consts::FRAC_PI_2)).unwrap()
        ]];
        assert_eq!(global_quat_loss(&id, &id, &sk).unwrap(), 0.0);
        let v = global_quat_loss(&rz, &id, &sk).unwrap();
        assert!((v - (2.0 - 2f64.sqrt()).sqrt()).abs() < 1e-9);
        // a 360° turn maps to -q before canonicalization
        let full = vec![vec![matrix_to_rot6d(&RotMatrix::rz(std::f64::consts::TAU)).unwrap()]];
        assert!(global_quat_loss(&full, &id, &sk).unwrap() < 1e-9);
    }

    proptest! {
        // Least squares: the similarity fit never has a larger squared error
        // than root-translation alignment. Mean distances carry no such guarantee.
        #[test]
        fn pa_squared_error_never_exceeds_root_aligned(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (p, g) = (random_frames(&mut rng, 1, 6), random_frames(&mut rng, 1, 6));
            let aligned = procrustes_align(&p[0], &g[0], 0).unwrap();
            let pa: f64 = aligned.iter().zip(&g[0]).map(|(a, b)| dist(*a, *b).powi(2)).sum();
            let root: f64 = p[0]
                .iter()
                .zip(&g[0])
                .map(|(a, b)| dist([a[0] - p[0][0][0], a[1] - p[0][0][1], a[2] - p[0][0][2]], [b[0] - g[0][0][0], b[1] - g[0][0][1], b[2] - g[0][0][2]]).powi(2))
                .sum();
            prop_assert!(pa <= root + 1e-9);
        }
    }
}
