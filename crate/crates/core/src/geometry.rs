//! Rotation representations, interpolation, distances and pinhole projection.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Real;

/// Row-major 3×3 matrix usable with any [`Real`] scalar.
pub type Mat3<T> = [[T; 3]; 3];
pub type Vec3<T> = [T; 3];

/// Axis-angle rotation: unit axis scaled by the angle in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RotationAA(pub [f64; 3]);

/// Quaternion stored as (w, x, y, z).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// First two columns of a rotation matrix, column-major: `[c0; c1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rot6D(pub [f64; 6]);

pub trait Rotation: Sized {
    fn to_matrix(&self) -> Result<Matrix3<f64>>;
    fn from_matrix(m: &Matrix3<f64>) -> Self;
}

fn check_finite(v: &[f64], what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

impl RotationAA {
    pub const IDENTITY: RotationAA = RotationAA([0.0; 3]);

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        RotationAA([
            axis[0] / n * angle,
            axis[1] / n * angle,
            axis[2] / n * angle,
        ])
    }

    pub fn angle(&self) -> f64 {
        Vector3::from(self.0).norm()
    }

    /// Same rotation with the angle wrapped into [0, π].
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self::from_matrix(&self.to_matrix()?))
    }
}

impl Rotation for RotationAA {
    fn to_matrix(&self) -> Result<Matrix3<f64>> {
        check_finite(&self.0, "axis-angle")?;
        Ok(Rotation3::from_scaled_axis(Vector3::from(self.0)).into_inner())
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(*m);
        RotationAA(r.scaled_axis().into())
    }
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quaternion { w, x, y, z }
    }

    fn as_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn dot(&self, o: &Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn neg(&self) -> Self {
        Quaternion::new(-self.w, -self.x, -self.y, -self.z)
    }

    /// Unit norm, canonical hemisphere (w ≥ 0).
    pub fn normalized(&self) -> Result<Self> {
        check_finite(&self.as_array(), "quaternion")?;
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::NonFinite("zero quaternion"));
        }
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Ok(Quaternion::new(
            self.w * s,
            self.x * s,
            self.y * s,
            self.z * s,
        ))
    }

    pub fn mul(&self, o: &Quaternion) -> Quaternion {
        Quaternion::new(
            self.w * o.w - self.x * o.x - self.y * o.y - self.z * o.z,
            self.w * o.x + self.x * o.w + self.y * o.z - self.z * o.y,
            self.w * o.y - self.x * o.z + self.y * o.w + self.z * o.x,
            self.w * o.z + self.x * o.y - self.y * o.x + self.z * o.w,
        )
    }

    pub fn from_aa(aa: &RotationAA) -> Result<Self> {
        Ok(Self::from_matrix(&aa.to_matrix()?))
    }

    pub fn to_aa(&self) -> Result<RotationAA> {
        Ok(RotationAA::from_matrix(&self.to_matrix()?))
    }
}

impl Rotation for Quaternion {
    fn to_matrix(&self) -> Result<Matrix3<f64>> {
        let q = self.normalized()?;
        let uq = UnitQuaternion::new_unchecked(nalgebra::Quaternion::new(q.w, q.x, q.y, q.z));
        Ok(uq.to_rotation_matrix().into_inner())
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        let uq = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*m));
        let q = Quaternion::new(uq.w, uq.i, uq.j, uq.k);
        q.normalized().unwrap_or(Quaternion::IDENTITY)
    }
}

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

impl Rotation for Rot6D {
    fn to_matrix(&self) -> Result<Matrix3<f64>> {
        check_finite(&self.0, "6D rotation")?;
        let a = Vector3::new(self.0[0], self.0[1], self.0[2]);
        let b = Vector3::new(self.0[3], self.0[4], self.0[5]);
        let scale = a.norm() * b.norm();
        if scale == 0.0 || a.cross(&b).norm() <= 1e-12 * scale {
            return Err(Error::Degenerate6D);
        }
        Ok(to_nalgebra(&rot6d_to_mat(&self.0)))
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        Rot6D([
            m[(0, 0)],
            m[(1, 0)],
            m[(2, 0)],
            m[(0, 1)],
            m[(1, 1)],
            m[(2, 1)],
        ])
    }
}

pub fn to_nalgebra(m: &Mat3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
    )
}

pub fn from_nalgebra<T: Real>(m: &Matrix3<f64>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = T::cst(m[(r, c)]);
        }
    }
    out
}

/// Angle of `R1ᵀR2` in radians, in [0, π].
pub fn geodesic(r1: &impl Rotation, r2: &impl Rotation) -> Result<f64> {
    Ok(geodesic_matrix(&r1.to_matrix()?, &r2.to_matrix()?))
}

pub fn geodesic_matrix(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let tr = (a.transpose() * b).trace();
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Spherical linear interpolation along the shorter arc.
pub fn slerp(q1: &Quaternion, q2: &Quaternion, t: f64) -> Result<Quaternion> {
    check_finite(&q1.as_array(), "quaternion")?;
    check_finite(&q2.as_array(), "quaternion")?;
    if !t.is_finite() {
        return Err(Error::NonFinite("slerp parameter"));
    }
    let mut dot = q1.dot(q2);
    let q2 = if dot < 0.0 {
        dot = -dot;
        q2.neg()
    } else {
        *q2
    };
    let (a, b) = if dot > 1.0 - 1e-7 {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let s = theta.sin();
        (((1.0 - t) * theta).sin() / s, (t * theta).sin() / s)
    };
    let q = Quaternion::new(
        a * q1.w + b * q2.w,
        a * q1.x + b * q2.x,
        a * q1.y + b * q2.y,
        a * q1.z + b * q2.z,
    );
    let n = q.norm();
    Ok(Quaternion::new(q.w / n, q.x / n, q.y / n, q.z / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        check_finite(&[self.fx, self.fy, self.cx, self.cy], "camera intrinsics")?;
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        Ok(())
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        CameraIntrinsics {
            fx: 600.0,
            fy: 600.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsics {
    pub rotation: RotationAA,
    pub translation: [f64; 3],
}

/// Static pinhole camera.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub extrinsics: CameraExtrinsics,
}

impl Camera {
    pub fn rotation(&self) -> Result<Mat3<f64>> {
        Ok(from_nalgebra(&self.extrinsics.rotation.to_matrix()?))
    }
}

/// Minimum camera-space depth accepted by [`project`].
pub const MIN_DEPTH: f64 = 1e-6;

pub fn project(point: [f64; 3], k: &CameraIntrinsics, ext: &CameraExtrinsics) -> Result<[f64; 2]> {
    check_finite(&point, "point")?;
    let r: Mat3<f64> = from_nalgebra(&ext.rotation.to_matrix()?);
    let p = add3(mat_vec(&r, &point), ext.translation);
    if p[2] <= MIN_DEPTH {
        return Err(Error::BehindCamera(p[2]));
    }
    Ok([k.fx * p[0] / p[2] + k.cx, k.fy * p[1] / p[2] + k.cy])
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, x) in row.iter_mut().enumerate() {
            *x = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}

pub fn mat_vec<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn add3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::cst(1.0), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

/// Gram–Schmidt of the two 6D columns into a right-handed frame.
pub fn rot6d_to_mat<T: Real>(r: &[T]) -> Mat3<T> {
    let a = [r[0], r[1], r[2]];
    let b = [r[3], r[4], r[5]];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let b1 = [a[0] / na, a[1] / na, a[2] / na];
    let d = b1[0] * b[0] + b1[1] * b[1] + b1[2] * b[2];
    let u = [b[0] - d * b1[0], b[1] - d * b1[1], b[2] - d * b1[2]];
    let nu = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let b2 = [u[0] / nu, u[1] / nu, u[2] / nu];
    let b3 = [
        b1[1] * b2[2] - b1[2] * b2[1],
        b1[2] * b2[0] - b1[0] * b2[2],
        b1[0] * b2[1] - b1[1] * b2[0],
    ];
    [
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]
}

/// Squared geodesic distance, differentiable at coincident rotations.
pub fn geodesic_sq<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    // trace(AᵀB) = Σ_ij A_ij B_ij
    let mut tr = T::zero();
    for r in 0..3 {
        for c in 0..3 {
            tr += a[r][c] * b[r][c];
        }
    }
    ((tr - 1.0) * 0.5).acos_sq()
}

/// Body-frame angular velocity of a rotation track, central differences in
/// the interior and one-sided at the ends. Units are rad per `1/rate`.
pub fn angular_velocities(track: &[Matrix3<f64>], rate: f64) -> Vec<Vector3<f64>> {
    let n = track.len();
    let log = |a: &Matrix3<f64>, b: &Matrix3<f64>| {
        Rotation3::from_matrix_unchecked(a.transpose() * b).scaled_axis()
    };
    (0..n)
        .map(|t| match n {
            0 | 1 => Vector3::zeros(),
            _ if t == 0 => log(&track[0], &track[1]) * rate,
            _ if t == n - 1 => log(&track[n - 2], &track[n - 1]) * rate,
            _ => log(&track[t - 1], &track[t + 1]) * (0.5 * rate),
        })
        .collect()
}

/// Reflection across the x = 0 plane applied to a rotation: `M R M`.
pub fn mirror_x(m: &Matrix3<f64>) -> Matrix3<f64> {
    let s = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
    s * m * s
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn orthonormal(m: &Matrix3<f64>, tol: f64) {
        assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = tol);
        assert!((m.determinant() - 1.0).abs() < tol);
    }

    #[test]
    fn zero_axis_angle_is_identity() {
        assert_eq!(
            RotationAA::IDENTITY.to_matrix().unwrap(),
            Matrix3::identity()
        );
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = RotationAA::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2)
            .to_matrix()
            .unwrap();
        let v = m * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn near_parallel_6d_still_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let a: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let r = Rot6D([
                a[0],
                a[1],
                a[2],
                a[0] + 1e-6 * rng.random::<f64>(),
                a[1] - 1e-6 * rng.random::<f64>(),
                a[2] + 1e-6,
            ]);
            orthonormal(&r.to_matrix().unwrap(), 1e-9);
        }
    }

    #[test]
    fn parallel_and_non_finite_6d_rejected() {
        assert!(matches!(
            Rot6D([1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).to_matrix(),
            Err(Error::Degenerate6D)
        ));
        assert!(matches!(
            Rot6D([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).to_matrix(),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            RotationAA([0.0, f64::INFINITY, 0.0]).to_matrix(),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn geodesic_cases() {
        let r = RotationAA([0.2, -0.4, 0.9]);
        assert!(geodesic(&r, &r).unwrap().abs() < 1e-7);
        let half = RotationAA::from_axis_angle([1.0, 0.0, 0.0], PI);
        assert!((geodesic(&RotationAA::IDENTITY, &half).unwrap() - PI).abs() < 1e-12);
        let small = RotationAA::from_axis_angle([0.3, -0.5, 0.2], 0.3);
        assert!((geodesic(&RotationAA::IDENTITY, &small).unwrap() - 0.3).abs() < 1e-9);
    }

    #[test]
    fn slerp_cases() {
        let q = Quaternion::from_aa(&RotationAA([0.1, 0.5, -0.3])).unwrap();
        let mid = slerp(&q, &q, 0.5).unwrap();
        assert!(mid.dot(&q).abs() > 1.0 - 1e-15);

        let qz =
            Quaternion::from_aa(&RotationAA::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_2)).unwrap();
        let half = slerp(&Quaternion::IDENTITY, &qz, 0.5).unwrap();
        let expect = RotationAA::from_axis_angle([0.0, 0.0, 1.0], FRAC_PI_4);
        assert!(geodesic(&half, &expect).unwrap() < 1e-9);
        assert_relative_eq!(half.to_aa().unwrap().0[2], FRAC_PI_4, epsilon = 1e-9);

        // q2 on the opposite hemisphere: interpolation must take the short arc
        let small = Quaternion::from_aa(&RotationAA([0.0, 0.2, 0.0])).unwrap();
        let q2 = q.mul(&small).neg();
        let total = geodesic(&q, &q2).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let s = slerp(&q, &q2, t).unwrap();
            assert!(geodesic(&q, &s).unwrap() <= total + 1e-12);
            assert!((geodesic(&q, &s).unwrap() - t * total).abs() < 1e-9);
        }
    }

    #[test]
    fn slerp_endpoints() {
        let q1 = Quaternion::from_aa(&RotationAA([0.3, 0.1, 0.0])).unwrap();
        let q2 = Quaternion::from_aa(&RotationAA([-0.2, 0.7, 1.1])).unwrap();
        assert!(slerp(&q1, &q2, 0.0).unwrap().dot(&q1) > 1.0 - 1e-15);
        assert!(slerp(&q1, &q2, 1.0).unwrap().dot(&q2).abs() > 1.0 - 1e-15);
    }

    #[test]
    fn projection_cases() {
        let k = CameraIntrinsics {
            fx: 1000.0,
            fy: 1000.0,
            cx: 500.0,
            cy: 500.0,
        };
        let ext = CameraExtrinsics::default();
        assert_eq!(project([0.0, 0.0, 1.0], &k, &ext).unwrap(), [500.0, 500.0]);
        let p = project([0.1, 0.0, 1.0], &k, &ext).unwrap();
        assert!((p[0] - 600.0).abs() < 1e-12 && (p[1] - 500.0).abs() < 1e-12);
        assert!(matches!(
            project([0.0, 0.0, -1.0], &k, &ext),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn generic_gram_schmidt_matches_nalgebra_path() {
        let r = [0.3, -1.2, 0.8, 0.9, 0.1, -0.4];
        let m = to_nalgebra(&rot6d_to_mat(&r));
        orthonormal(&m, 1e-12);
        // first column is the normalized first 6D column
        let n = (0.09f64 + 1.44 + 0.64).sqrt();
        assert_relative_eq!(m[(1, 0)], -1.2 / n, epsilon = 1e-15);
    }

    #[test]
    fn mirror_is_an_involution() {
        let m = RotationAA([0.4, -0.9, 1.3]).to_matrix().unwrap();
        assert_relative_eq!(mirror_x(&mirror_x(&m)), m, epsilon = 1e-15);
        orthonormal(&mirror_x(&m), 1e-12);
    }

    fn aa_strategy() -> impl Strategy<Value = RotationAA> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, 0.01..(PI - 0.01))
            .prop_filter("non-zero axis", |(x, y, z, _)| x * x + y * y + z * z > 1e-3)
            .prop_map(|(x, y, z, a)| RotationAA::from_axis_angle([x, y, z], a))
    }

    #[test]
    fn angular_velocity_of_constant_spin() {
        let w = 0.3;
        let track: Vec<Matrix3<f64>> = (0..6)
            .map(|i| RotationAA([0.0, 0.0, w * i as f64]).to_matrix().unwrap())
            .collect();
        for v in angular_velocities(&track, 30.0) {
            assert!((v - Vector3::new(0.0, 0.0, w * 30.0)).norm() < 1e-9);
        }
        assert!(angular_velocities(&track[..1], 30.0)[0].norm() == 0.0);
    }

    proptest! {
        #[test]
        fn round_trips(aa in aa_strategy()) {
            let m = aa.to_matrix().unwrap();
            let back = RotationAA::from_matrix(&m);
            for i in 0..3 {
                prop_assert!((back.0[i] - aa.0[i]).abs() < 1e-9);
            }
            let q = Quaternion::from_matrix(&m);
            prop_assert!((q.to_matrix().unwrap() - m).abs().max() < 1e-9);
            prop_assert!(q.w >= 0.0 && (q.norm() - 1.0).abs() < 1e-9);
            let r6 = Rot6D::from_matrix(&m);
            prop_assert!((r6.to_matrix().unwrap() - m).abs().max() < 1e-9);
        }

        #[test]
        fn geodesic_is_a_metric(a in aa_strategy(), b in aa_strategy(), c in aa_strategy()) {
            let ab = geodesic(&a, &b).unwrap();
            let ba = geodesic(&b, &a).unwrap();
            let bc = geodesic(&b, &c).unwrap();
            let ac = geodesic(&a, &c).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-7);
            prop_assert!((0.0..=PI).contains(&ab));
        }

        #[test]
        fn slerp_has_constant_angular_velocity(a in aa_strategy(), b in aa_strategy()) {
            let qa = Quaternion::from_aa(&a).unwrap();
            let qb = Quaternion::from_aa(&b).unwrap();
            let n = 10;
            let pts: Vec<_> = (0..=n).map(|i| slerp(&qa, &qb, i as f64 / n as f64).unwrap()).collect();
            let steps: Vec<f64> = pts.windows(2).map(|w| geodesic(&w[0], &w[1]).unwrap()).collect();
            for s in &steps {
                prop_assert!((s - steps[0]).abs() < 1e-6);
            }
        }

        #[test]
        fn projection_is_depth_scale_covariant(x in -0.3..0.3f64, y in -0.3..0.3f64, z in 0.2..2.0f64) {
            let k = CameraIntrinsics::default();
            let ext = CameraExtrinsics { rotation: RotationAA([0.05, -0.02, 0.1]), translation: [0.0, 0.0, 0.0] };
            let a = project([x, y, z], &k, &ext).unwrap();
            let b = project([2.0 * x, 2.0 * y, 2.0 * z], &k, &ext).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        }
    }
}
