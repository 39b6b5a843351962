//! Rotation representations: continuous 6D, 3×3 matrices, unit quaternions
//! and the Euler triples found in BVH files.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Op, Tape, Var};
use crate::error::{shape_err, Error, Result};
use crate::skeleton::Channel;
use crate::tensor::{Real, Tensor};

const DEGENERATE: f64 = 1e-9;

/// First two columns of a rotation matrix, column-major: `(c0.x, c0.y, c0.z, c1.x, c1.y, c1.z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rot6D(pub [f64; 6]);

/// Row-major 3×3 rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotMatrix(pub [[f64; 3]; 3]);

/// Unit quaternion `(w, x, y, z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl RotMatrix {
    pub const IDENTITY: RotMatrix = RotMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> RotMatrix {
        let n = dot3(axis, axis).sqrt();
        let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        RotMatrix([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// Rotation about a coordinate axis (0 = x, 1 = y, 2 = z).
    pub fn about_axis(axis: usize, angle: f64) -> RotMatrix {
        let mut a = [0.0; 3];
        a[axis] = 1.0;
        RotMatrix::from_axis_angle(a, angle)
    }

    pub fn rx(angle: f64) -> RotMatrix {
        RotMatrix::about_axis(0, angle)
    }

    pub fn ry(angle: f64) -> RotMatrix {
        RotMatrix::about_axis(1, angle)
    }

    pub fn rz(angle: f64) -> RotMatrix {
        RotMatrix::about_axis(2, angle)
    }

    pub fn mul(&self, other: &RotMatrix) -> RotMatrix {
        let (a, b) = (&self.0, &other.0);
        let mut out = [[0.0; 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
            }
        }
        RotMatrix(out)
    }

    pub fn transpose(&self) -> RotMatrix {
        let m = &self.0;
        RotMatrix([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn apply(&self, v: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
    }

    pub fn column(&self, c: usize) -> [f64; 3] {
        [self.0[0][c], self.0[1][c], self.0[2][c]]
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        dot3(m[0], cross3(m[1], m[2]))
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.transpose().mul(self);
        let mut worst = (self.det() - 1.0).abs();
        for r in 0..3 {
            for c in 0..3 {
                let target = if r == c { 1.0 } else { 0.0 };
                worst = worst.max((rtr.0[r][c] - target).abs());
            }
        }
        worst
    }

    pub fn flat(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_flat(v: &[f64]) -> RotMatrix {
        RotMatrix([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    /// Composes axis rotations in channel order: `R = R_a(θa) · R_b(θb) · R_c(θc)`.
    pub fn from_euler(order: [Channel; 3], degrees: [f64; 3]) -> RotMatrix {
        order.iter().zip(degrees).fold(RotMatrix::IDENTITY, |acc, (ch, deg)| {
            acc.mul(&RotMatrix::about_axis(ch.axis(), deg.to_radians()))
        })
    }

    /// Inverse of [`RotMatrix::from_euler`] for an order that is a permutation of x, y, z.
    pub fn to_euler(&self, order: [Channel; 3]) -> Result<[f64; 3]> {
        let [i, j, k] = [order[0].axis(), order[1].axis(), order[2].axis()];
        if i == j || j == k || i == k {
            return Err(Error::InvalidArgument(
                "Euler order must use three distinct axes".into(),
            ));
        }
        let eps = if (j + 3 - i) % 3 == 1 { 1.0 } else { -1.0 };
        let m = &self.0;
        let s2 = (eps * m[i][k]).clamp(-1.0, 1.0);
        let b = s2.asin();
        let (a, c) = if s2.abs() < 1.0 - 1e-12 {
            ((-eps * m[j][k]).atan2(m[k][k]), (-eps * m[i][j]).atan2(m[i][i]))
        } else {
            // gimbal lock: fold everything into the first angle
            ((eps * m[k][j]).atan2(m[j][j]), 0.0)
        };
        Ok([a.to_degrees(), b.to_degrees(), c.to_degrees()])
    }
}

/// Gram-Schmidt projection of a 6D vector onto a rotation matrix.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotMatrix> {
    let a1 = [r.0[0], r.0[1], r.0[2]];
    let a2 = [r.0[3], r.0[4], r.0[5]];
    if r.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateRotation("non-finite component".into()));
    }
    let n1 = dot3(a1, a1).sqrt();
    if n1 < DEGENERATE {
        return Err(Error::DegenerateRotation("first column is zero".into()));
    }
    let b1 = a1.map(|v| v / n1);
    let s = dot3(b1, a2);
    let u = [a2[0] - s * b1[0], a2[1] - s * b1[1], a2[2] - s * b1[2]];
    let n2 = dot3(u, u).sqrt();
    if n2 < DEGENERATE * dot3(a2, a2).sqrt().max(1.0) {
        return Err(Error::DegenerateRotation(
            "columns are parallel or second is zero".into(),
        ));
    }
    let b2 = u.map(|v| v / n2);
    let b3 = cross3(b1, b2);
    Ok(RotMatrix([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]))
}

fn check_rotation(m: &RotMatrix) -> Result<()> {
    if !m.flat().iter().all(|v| v.is_finite()) {
        return Err(Error::NotRotation("non-finite entry".into()));
    }
    let err = m.orthonormality_error();
    if err > 1e-4 {
        return Err(Error::NotRotation(format!("orthonormality error {err:.3e}")));
    }
    Ok(())
}

pub fn matrix_to_rot6d(m: &RotMatrix) -> Result<Rot6D> {
    check_rotation(m)?;
    let (c0, c1) = (m.column(0), m.column(1));
    Ok(Rot6D([c0[0], c0[1], c0[2], c1[0], c1[1], c1[2]]))
}

/// Unit quaternion with `w ≥ 0`.
pub fn matrix_to_quat(m: &RotMatrix) -> Result<Quat> {
    check_rotation(m)?;
    let r = &m.0;
    let trace = r[0][0] + r[1][1] + r[2][2];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quat {
            w: 0.25 * s,
            x: (r[2][1] - r[1][2]) / s,
            y: (r[0][2] - r[2][0]) / s,
            z: (r[1][0] - r[0][1]) / s,
        }
    } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
        let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
        Quat {
            w: (r[2][1] - r[1][2]) / s,
            x: 0.25 * s,
            y: (r[0][1] + r[1][0]) / s,
            z: (r[0][2] + r[2][0]) / s,
        }
    } else if r[1][1] > r[2][2] {
        let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
        Quat {
            w: (r[0][2] - r[2][0]) / s,
            x: (r[0][1] + r[1][0]) / s,
            y: 0.25 * s,
            z: (r[1][2] + r[2][1]) / s,
        }
    } else {
        let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
        Quat {
            w: (r[1][0] - r[0][1]) / s,
            x: (r[0][2] + r[2][0]) / s,
            y: (r[1][2] + r[2][1]) / s,
            z: 0.25 * s,
        }
    };
    Ok(q.normalized().canonical())
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Quat {
        Quat { w, x, y, z }
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Quat {
        let n = dot3(axis, axis).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        Quat::new(self.w / n, self.x / n, self.y / n, self.z / n)
    }

    pub fn neg(&self) -> Quat {
        Quat::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Representative on the `w ≥ 0` hemisphere; ties at `w = 0` keep the
    /// first non-zero vector component positive.
    pub fn canonical(&self) -> Quat {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else {
            [self.x, self.y, self.z]
                .into_iter()
                .find(|v| *v != 0.0)
                .is_some_and(|v| v < 0.0)
        };
        if flip {
            self.neg()
        } else {
            *self
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn to_matrix(&self) -> RotMatrix {
        let Quat { w, x, y, z } = self.normalized();
        RotMatrix([
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ])
    }
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q0: &Quat, q1: &Quat, t: f64) -> Result<Quat> {
    for q in [q0, q1] {
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "slerp needs unit quaternions, got norm {}",
                q.norm()
            )));
        }
    }
    let mut d = q0.dot(q1);
    let q1 = if d < 0.0 {
        d = -d;
        q1.neg()
    } else {
        *q1
    };
    let theta = d.clamp(-1.0, 1.0).acos();
    let (a, b) = if theta < 1e-7 {
        (1.0 - t, t)
    } else {
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let q = Quat::new(
        a * q0.w + b * q1.w,
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
    );
    Ok(q.normalized())
}

struct Rot6dOp<S> {
    // saved Gram-Schmidt intermediates per rotation: b1, b2, n1, n2, s
    saved: Vec<[S; 9]>,
}

#[inline]
fn d3<S: Real>(a: [S; 3], b: [S; 3]) -> S {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn c3<S: Real>(a: [S; 3], b: [S; 3]) -> [S; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl<S: Real> Op<S> for Rot6dOp<S> {
    fn name(&self) -> &'static str {
        "rot6d_to_matrix"
    }

    fn backward(&self, inputs: &[&Tensor<S>], _: &Tensor<S>, g: &[S], needs: &[bool]) -> Vec<Option<Vec<S>>> {
        if !needs[0] {
            return vec![None];
        }
        let x = inputs[0].data();
        let mut gi = vec![S::zero(); x.len()];
        for (n, sv) in self.saved.iter().enumerate() {
            let a2 = [x[n * 6 + 3], x[n * 6 + 4], x[n * 6 + 5]];
            let (n1, n2, s) = (sv[6], sv[7], sv[8]);
            let b1 = [sv[0], sv[1], sv[2]];
            let b2 = [sv[3], sv[4], sv[5]];
            let gm = &g[n * 9..n * 9 + 9];
            // columns of the row-major matrix
            let col = |c: usize| [gm[c], gm[3 + c], gm[6 + c]];
            let (mut gb1, mut gb2, gb3) = (col(0), col(1), col(2));
            // b3 = b1 × b2
            let t1 = c3(b2, gb3);
            let t2 = c3(gb3, b1);
            for r in 0..3 {
                gb1[r] += t1[r];
                gb2[r] += t2[r];
            }
            // b2 = u / n2
            let p2 = d3(b2, gb2);
            let gu = [0, 1, 2].map(|r| (gb2[r] - b2[r] * p2) / n2);
            // u = a2 − s b1, s = b1·a2
            let gs = -d3(gu, b1);
            let mut ga2 = gu;
            for r in 0..3 {
                ga2[r] += gs * b1[r];
                gb1[r] += -s * gu[r] + gs * a2[r];
            }
            // b1 = a1 / n1
            let p1 = d3(b1, gb1);
            for r in 0..3 {
                gi[n * 6 + r] = (gb1[r] - b1[r] * p1) / n1;
                gi[n * 6 + 3 + r] = ga2[r];
            }
        }
        vec![Some(gi)]
    }
}

/// Differentiable Gram-Schmidt map `[..×6] → [..×9]` (row-major matrices).
pub fn rot6d_to_matrix_op<S: Real>(tape: &mut Tape<S>, x: Var) -> Result<Var> {
    let xt = tape.value(x);
    let shape = xt.shape();
    if shape.last() != Some(&6) {
        return Err(shape_err("rot6d_to_matrix", "[.., 6]", shape));
    }
    let n = xt.len() / 6;
    let d = xt.data();
    let eps = S::lit(DEGENERATE);
    let mut out = Vec::with_capacity(n * 9);
    let mut saved = Vec::with_capacity(n);
    for i in 0..n {
        let a1 = [d[i * 6], d[i * 6 + 1], d[i * 6 + 2]];
        let a2 = [d[i * 6 + 3], d[i * 6 + 4], d[i * 6 + 5]];
        let n1 = d3(a1, a1).sqrt();
        if !(n1 >= eps) {
            return Err(Error::DegenerateRotation(format!("rotation {i}: first column is zero")));
        }
        let b1 = a1.map(|v| v / n1);
        let s = d3(b1, a2);
        let u = [0, 1, 2].map(|r| a2[r] - s * b1[r]);
        let n2 = d3(u, u).sqrt();
        if !(n2 >= eps * d3(a2, a2).sqrt().max(S::one())) {
            return Err(Error::DegenerateRotation(format!("rotation {i}: columns are parallel")));
        }
        let b2 = u.map(|v| v / n2);
        let b3 = c3(b1, b2);
        out.extend_from_slice(&[b1[0], b2[0], b3[0], b1[1], b2[1], b3[1], b1[2], b2[2], b3[2]]);
        saved.push([b1[0], b1[1], b1[2], b2[0], b2[1], b2[2], n1, n2, s]);
    }
    let mut out_shape = shape.to_vec();
    *out_shape.last_mut().unwrap() = 9;
    let out = Tensor::new(out_shape, out)?;
    Ok(tape.push(out, &[x], Rot6dOp { saved }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ops};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        let v: [f64; 4] = [0; 4].map(|_| rng.sample(StandardNormal));
        Quat::new(v[0], v[1], v[2], v[3]).normalized()
    }

    fn assert_matrix_eq(a: &RotMatrix, b: &RotMatrix, tol: f64) {
        for (x, y) in a.flat().iter().zip(b.flat()) {
            assert_abs_diff_eq!(*x, y, epsilon = tol);
        }
    }

    #[test]
    fn six_d_hand_cases() {
        for r in [
            [1., 0., 0., 0., 1., 0.],
            [2., 0., 0., 0., 3., 0.],
            [1., 0., 0., 1., 1., 0.],
        ] {
            assert_matrix_eq(&rot6d_to_matrix(&Rot6D(r)).unwrap(), &RotMatrix::IDENTITY, 1e-12);
        }
    }

    #[test]
    fn degenerate_six_d_is_an_error() {
        assert!(rot6d_to_matrix(&Rot6D([0., 0., 0., 0., 1., 0.])).is_err());
        assert!(rot6d_to_matrix(&Rot6D([1., 0., 0., 2., 0., 0.])).is_err());
        assert!(rot6d_to_matrix(&Rot6D([1., 0., 0., 0., 0., 0.])).is_err());
    }

    #[test]
    fn matrix_to_six_d_reads_columns() {
        assert_eq!(matrix_to_rot6d(&RotMatrix::IDENTITY).unwrap(), Rot6D::IDENTITY);
        let r = matrix_to_rot6d(&RotMatrix::rz(std::f64::consts::FRAC_PI_2)).unwrap();
        for (a, b) in r.0.iter().zip([0., 1., 0., -1., 0., 0.]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let mut bad = RotMatrix::IDENTITY;
        bad.0[0][0] = 2.0;
        assert!(matrix_to_rot6d(&bad).is_err());
    }

    #[test]
    fn quaternion_hand_cases() {
        let q = matrix_to_quat(&RotMatrix::IDENTITY).unwrap();
        assert_eq!(q.to_array(), [1., 0., 0., 0.]);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let q = matrix_to_quat(&RotMatrix::rz(std::f64::consts::FRAC_PI_2)).unwrap();
        for (a, b) in q.to_array().iter().zip([h, 0., 0., h]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        let q = matrix_to_quat(&RotMatrix::rx(std::f64::consts::PI)).unwrap();
        for (a, b) in q.to_array().iter().zip([0., 1., 0., 0.]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn slerp_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_quat(&mut rng);
        let mid = slerp(&q, &q, 0.5).unwrap();
        assert_abs_diff_eq!(mid.dot(&q).abs(), 1.0, epsilon = 1e-12);

        let rz90 = Quat::from_axis_angle([0., 0., 1.], std::f64::consts::FRAC_PI_2);
        let m = slerp(&Quat::IDENTITY, &rz90, 0.5).unwrap();
        let a = 22.5f64.to_radians();
        for (x, y) in m.to_array().iter().zip([a.cos(), 0., 0., a.sin()]) {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-12);
        }

        let q1 = random_quat(&mut rng);
        let end = slerp(&q, &q1, 1.0).unwrap();
        assert_abs_diff_eq!(end.dot(&q1).abs(), 1.0, epsilon = 1e-12);
        assert!(slerp(&Quat::new(2., 0., 0., 0.), &q1, 0.5).is_err());
    }

    #[test]
    fn slerp_output_is_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (a, b) = (random_quat(&mut rng), random_quat(&mut rng));
            for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                assert_abs_diff_eq!(slerp(&a, &b, t).unwrap().norm(), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn random_six_d_projects_to_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let r = Rot6D([0; 6].map(|_| rng.sample::<f64, _>(StandardNormal)));
            let m = rot6d_to_matrix(&r).unwrap();
            assert!(m.orthonormality_error() < 1e-6);
        }
    }

    #[test]
    fn six_d_round_trip_on_random_rotations() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let m = random_quat(&mut rng).to_matrix();
            let back = rot6d_to_matrix(&matrix_to_rot6d(&m).unwrap()).unwrap();
            assert_matrix_eq(&back, &m, 1e-6);
            let q = matrix_to_quat(&m).unwrap();
            assert!(q.w >= 0.0);
            assert_matrix_eq(&q.to_matrix(), &m, 1e-9);
        }
    }

    #[test]
    fn euler_round_trip_all_orders() {
        use Channel::*;
        let orders = [
            [Xrotation, Yrotation, Zrotation],
            [Xrotation, Zrotation, Yrotation],
            [Yrotation, Xrotation, Zrotation],
            [Yrotation, Zrotation, Xrotation],
            [Zrotation, Xrotation, Yrotation],
            [Zrotation, Yrotation, Xrotation],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for order in orders {
            for _ in 0..200 {
                let angles = [
                    rng.random_range(-170.0..170.0),
                    rng.random_range(-85.0..85.0),
                    rng.random_range(-170.0..170.0),
                ];
                let m = RotMatrix::from_euler(order, angles);
                let back = m.to_euler(order).unwrap();
                for (a, b) in back.iter().zip(angles) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-8);
                }
            }
            // gimbal lock still reproduces the matrix
            let m = RotMatrix::from_euler(order, [30.0, 90.0, 10.0]);
            let back = RotMatrix::from_euler(order, m.to_euler(order).unwrap());
            assert_matrix_eq(&back, &m, 1e-6);
        }
    }

    #[test]
    fn six_d_op_matches_value_function_and_grad_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for seed in 0..20 {
            let data: Vec<f64> = (0..18).map(|_| rng.sample(StandardNormal)).collect();
            let x = Tensor::new(vec![3, 6], data.clone()).unwrap();
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let m = rot6d_to_matrix_op(&mut tape, v).unwrap();
            for i in 0..3 {
                let r = rot6d_to_matrix(&Rot6D(data[i * 6..i * 6 + 6].try_into().unwrap())).unwrap();
                for (a, b) in tape.value(m).data()[i * 9..i * 9 + 9].iter().zip(r.flat()) {
                    assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
                }
            }
            let w: Vec<f64> = (0..27).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = grad_check(
                |tape, p| {
                    let m = rot6d_to_matrix_op(tape, p[0])?;
                    ops::sq_err_sum(tape, m, &w, None)
                },
                &[x],
                1e-6,
            )
            .unwrap();
            assert!(err < 1e-5, "seed {seed}: {err}");
        }
    }
}
