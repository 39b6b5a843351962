//! Property tests over the public API.

use motion_prior::data::{parse_bvh, synth_dataset, window, write_bvh, BvhOptions, MotionClip, SynthConfig};
use motion_prior::hmvae::{ArchDescriptor, HmVae, MotionWindow};
use motion_prior::kinematics::{forward_kinematics, Pose};
use motion_prior::metrics::{mpjpe, pa_mpjpe};
use motion_prior::rotation::{matrix_to_rot6d, rot6d_to_matrix, slerp, Quat, Rot6D};
use motion_prior::skeleton::Skeleton;
use motion_prior::tasks::{make_keyframe_mask, slerp_inbetween};
use motion_prior::trajectory::integrate_trajectory;
use motion_prior::Tensor;
use proptest::prelude::*;

fn unit_quat() -> impl Strategy<Value = Quat> {
    prop::array::uniform4(-1.0f64..1.0)
        .prop_filter("away from zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        .prop_map(|v| Quat::new(v[0], v[1], v[2], v[3]).normalized())
}

fn six_d() -> impl Strategy<Value = Rot6D> {
    prop::array::uniform6(-2.0f64..2.0)
        .prop_filter("well conditioned", |v| {
            let (a, b) = ([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
            let n = |x: [f64; 3]| x.iter().map(|c| c * c).sum::<f64>().sqrt();
            let c = [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ];
            n(a) > 0.1 && n(c) > 0.1 * n(a) * n(b)
        })
        .prop_map(Rot6D)
}

fn toy_pose() -> impl Strategy<Value = Pose> {
    (
        prop::collection::vec(unit_quat(), 7),
        prop::array::uniform3(-1.0f64..1.0),
    )
        .prop_map(|(q, root)| Pose {
            rotations: q.iter().map(|q| matrix_to_rot6d(&q.to_matrix()).unwrap()).collect(),
            root,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_schmidt_yields_rotations(r in six_d()) {
        let m = rot6d_to_matrix(&r).unwrap();
        prop_assert!(m.orthonormality_error() < 1e-9);
        prop_assert!((m.det() - 1.0).abs() < 1e-9);
        // projecting twice is a no-op
        let again = rot6d_to_matrix(&matrix_to_rot6d(&m).unwrap()).unwrap();
        for (a, b) in m.flat().iter().zip(again.flat()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn slerp_stays_on_the_sphere(a in unit_quat(), b in unit_quat(), t in 0.0f64..1.0) {
        let q = slerp(&a, &b, t).unwrap();
        prop_assert!((q.norm() - 1.0).abs() < 1e-9);
        let start = slerp(&a, &b, 0.0).unwrap();
        prop_assert!(start.dot(&a).abs() > 1.0 - 1e-9);
    }

    #[test]
    fn fk_preserves_bone_lengths(pose in toy_pose()) {
        let s = Skeleton::toy7();
        let p = forward_kinematics(&pose, &s).unwrap();
        for (j, joint) in s.joints().iter().enumerate() {
            if let Some(par) = joint.parent {
                let d = (0..3).map(|k| (p[j][k] - p[par][k]).powi(2)).sum::<f64>().sqrt();
                let o = joint.offset.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((d - o).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pa_mpjpe_never_exceeds_mpjpe(a in toy_pose(), b in toy_pose()) {
        let s = Skeleton::toy7();
        let pa = vec![forward_kinematics(&a, &s).unwrap()];
        let pb = vec![forward_kinematics(&b, &s).unwrap()];
        prop_assert!(pa_mpjpe(&pa, &pb).unwrap() <= mpjpe(&pa, &pb).unwrap() + 1e-9);
    }

    #[test]
    fn prefix_sum_differences_recover_velocities(v in prop::collection::vec(-5.0f64..5.0, 3..90)) {
        let t = v.len() / 3;
        let v = Tensor::new(vec![t, 3], v[..3 * t].to_vec()).unwrap();
        let g = integrate_trajectory(&v).unwrap();
        let (vd, gd) = (v.data(), g.data());
        prop_assert_eq!(&gd[..3], &vd[..3]);
        for i in 3..3 * t {
            prop_assert!((gd[i] - gd[i - 3] - vd[i]).abs() <= 1e-12 * gd[i].abs().max(1.0) * t as f64);
        }
    }

    #[test]
    fn window_count_matches_formula(len in 16usize..80, t in 1usize..16, stride in 1usize..6) {
        let clip = MotionClip::new(Skeleton::toy7(), vec![Pose::identity(7); len], 30.0).unwrap();
        let w = window(&clip, t, stride).unwrap();
        prop_assert_eq!(w.len(), (len - t) / stride + 1);
    }

    #[test]
    fn slerp_inbetween_keeps_keyframes(seed in 0u64..1000, gap in 1usize..14) {
        let clip = &synth_dataset(&SynthConfig { length: 16, ..SynthConfig::toy(seed) }, 1).unwrap()[0];
        let w = clip.to_window().unwrap();
        let mask = make_keyframe_mask(16, 7, 15 - gap, 1).unwrap();
        let out = slerp_inbetween(&w, &mask).unwrap();
        for f in (0..16).filter(|&f| mask.frames[f]) {
            for j in 0..7 {
                let (a, b) = (rot6d_to_matrix(&out.rot6d(f, j)).unwrap(), rot6d_to_matrix(&w.rot6d(f, j)).unwrap());
                for (x, y) in a.flat().iter().zip(b.flat()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bvh_round_trip_is_stable(poses in prop::collection::vec(toy_pose(), 1..5)) {
        let clip = MotionClip::new(Skeleton::toy7(), poses, 30.0).unwrap();
        let opts = BvhOptions::default();
        let text = write_bvh(&clip, opts).unwrap();
        let back = parse_bvh(&text, opts).unwrap();
        prop_assert_eq!(&back.skeleton, &clip.skeleton);
        for (a, b) in clip.frames.iter().zip(&back.frames) {
            for (ra, rb) in a.rotations.iter().zip(&b.rotations) {
                let (ma, mb) = (rot6d_to_matrix(ra).unwrap(), rot6d_to_matrix(rb).unwrap());
                for (x, y) in ma.flat().iter().zip(mb.flat()) {
                    prop_assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn decoded_windows_are_valid_rotations(seed in 0u64..50) {
        let model = HmVae::<f64>::new(ArchDescriptor::toy(), seed).unwrap();
        let clip = &synth_dataset(&SynthConfig { length: 16, ..SynthConfig::toy(seed) }, 1).unwrap()[0];
        let out: MotionWindow = model.reconstruct(&clip.to_window().unwrap()).unwrap();
        prop_assert_eq!(out.rotations.shape(), &[16, 7, 6][..]);
        for t in 0..16 {
            for j in 0..7 {
                prop_assert!(rot6d_to_matrix(&out.rot6d(t, j)).unwrap().orthonormality_error() < 1e-9);
            }
        }
    }
}
