//! Rigid-body transform algebra on SE(3).
//!
//! Rotations are unit quaternions stored as `(w, x, y, z)`. A [`Transform`]
//! maps a point `p` to `R p + t`. Composition follows matrix convention:
//! `a.compose(&b)` applies `b` first, then `a`.
//!
//! Euler angles use the intrinsic Z-Y-X convention throughout the crate:
//! `R = Rz(c) * Ry(b) * Rx(a)` for angles `(a, b, c)`.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

const SMALL_ANGLE: f64 = 1e-6;

/// Unit quaternion rotation, `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    q: [f64; 4],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        q: [1.0, 0.0, 0.0, 0.0],
    };

    /// Builds a rotation from a possibly unnormalized quaternion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = [w, x, y, z];
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("quaternion {q:?}")));
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegeneratePose(format!(
                "quaternion norm {norm:e} is too small to normalize"
            )));
        }
        Ok(Rotation {
            q: [w / norm, x / norm, y / norm, z / norm],
        })
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Rotation {
            q: [c, s * a.x, s * a.y, s * a.z],
        }
    }

    pub fn rx(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), angle)
    }

    pub fn ry(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), angle)
    }

    pub fn rz(angle: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), angle)
    }

    /// Exponential map from a rotation vector (axis scaled by angle).
    pub fn exp(omega: &Vec3) -> Self {
        let theta = omega.norm();
        if theta < SMALL_ANGLE {
            // sin(t/2)/t ~ 1/2 - t^2/48
            let k = 0.5 - theta * theta / 48.0;
            let w = 1.0 - theta * theta / 8.0;
            let q = [w, k * omega.x, k * omega.y, k * omega.z];
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            return Rotation {
                q: q.map(|v| v / n),
            };
        }
        Self::from_axis_angle(omega, theta)
    }

    /// Rotation vector with angle in `[0, pi]`.
    pub fn log(&self) -> Vec3 {
        let [w, x, y, z] = self.canonical().q;
        let v = Vec3::new(x, y, z);
        let s = v.norm();
        if s < 1e-300 {
            return Vec3::zeros();
        }
        let theta = 2.0 * s.atan2(w);
        v * (theta / s)
    }

    /// Proper rotation closest to a (numerically) orthonormal matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        Rotation {
            q: q.map(|v| v / n),
        }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    /// Representative with `w >= 0`.
    pub fn canonical(&self) -> Self {
        if self.q[0] < 0.0 {
            Rotation {
                q: self.q.map(|v| -v),
            }
        } else {
            *self
        }
    }

    /// `self * other`: rotate by `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let [w1, x1, y1, z1] = self.q;
        let [w2, x2, y2, z2] = other.q;
        let q = [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ];
        // renormalize so long products do not drift off the unit sphere
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        Rotation {
            q: q.map(|v| v / n),
        }
    }

    pub fn inverse(&self) -> Rotation {
        let [w, x, y, z] = self.q;
        Rotation { q: [w, -x, -y, -z] }
    }

    pub fn rotate(&self, p: &Vec3) -> Vec3 {
        let [w, x, y, z] = self.q;
        let u = Vec3::new(x, y, z);
        let uv = u.cross(p);
        let uuv = u.cross(&uv);
        p + (uv * w + uuv) * 2.0
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.q)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let [w, x, y, z] = self.canonical().q;
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub(crate) fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid-body transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Default for Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Transform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Transform {
            rotation: Rotation::IDENTITY,
            translation: Vec3::zeros(),
        }
    }

    pub fn from_rotation(rotation: Rotation) -> Self {
        Transform::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Transform::new(Rotation::IDENTITY, translation)
    }

    /// `self * other`: the result applies `other` first.
    pub fn compose(&self, other: &Transform) -> Transform {
        Transform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Transform {
        let r = self.rotation.inverse();
        Transform {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let r = self.rotation.matrix();
        PointCloud::new(
            cloud
                .points()
                .iter()
                .map(|p| r * p + self.translation)
                .collect(),
        )
    }

    /// 4x4 homogeneous matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Inverse of [`Transform::matrix`]; the rotation block is re-orthonormalized.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("transform matrix".into()));
        }
        let r: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
        if r.determinant() <= 0.0 {
            return Err(Error::DegeneratePose(
                "rotation block is not a proper rotation".into(),
            ));
        }
        Ok(Transform {
            rotation: Rotation::from_matrix(&r),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    /// SE(3) exponential of a twist `(omega, v)`.
    pub fn exp(twist: &[f64; 6]) -> Self {
        let omega = Vec3::new(twist[0], twist[1], twist[2]);
        let v = Vec3::new(twist[3], twist[4], twist[5]);
        let theta = omega.norm();
        let w = skew(&omega);
        let w2 = w * w;
        let (a, b) = if theta < SMALL_ANGLE {
            (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
        } else {
            let t2 = theta * theta;
            ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
        };
        let left_jacobian = Matrix3::identity() + w * a + w2 * b;
        Transform {
            rotation: Rotation::exp(&omega),
            translation: left_jacobian * v,
        }
    }

    /// SE(3) logarithm as a twist `(omega, v)` with rotation angle in `[0, pi]`.
    pub fn log(&self) -> [f64; 6] {
        let omega = self.rotation.log();
        let theta = omega.norm();
        let w = skew(&omega);
        let coef = if theta < SMALL_ANGLE {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let inv_left_jacobian = Matrix3::identity() - w * 0.5 + w * w * coef;
        let v = inv_left_jacobian * self.translation;
        [omega.x, omega.y, omega.z, v.x, v.y, v.z]
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.q.iter().all(|v| v.is_finite())
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Row-major 4x4 matrix as text: four lines of four numbers.
    pub fn to_matrix_text(&self) -> String {
        let m = self.matrix();
        let mut out = String::new();
        for i in 0..4 {
            let row: Vec<String> = (0..4).map(|j| format!("{}", m[(i, j)])).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses 16 whitespace-separated numbers (row-major).
    pub fn from_matrix_text(text: &str) -> Result<Self> {
        let mut vals = Vec::with_capacity(16);
        for (lineno, line) in text.lines().enumerate() {
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(lineno + 1, format!("bad number `{tok}`")))?;
                vals.push(v);
            }
        }
        if vals.len() != 16 {
            return Err(Error::parse(
                text.lines().count().max(1),
                format!("expected 16 matrix entries, found {}", vals.len()),
            ));
        }
        Transform::from_matrix(&Matrix4::from_row_slice(&vals))
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_matrix_text())
    }
}

/// Pose parameterizations produced by the alignment heads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoseVector {
    /// `(qw, qx, qy, qz, tx, ty, tz)`; the quaternion need not be normalized.
    Quaternion7([f64; 7]),
    /// `(omega, v)` twist coordinates.
    Twist6([f64; 6]),
}

pub fn pose_to_transform(pose: &PoseVector) -> Result<Transform> {
    match pose {
        PoseVector::Quaternion7(p) => {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("pose {p:?}")));
            }
            let rotation = Rotation::from_quaternion(p[0], p[1], p[2], p[3])?;
            Ok(Transform::new(rotation, Vec3::new(p[4], p[5], p[6])))
        }
        PoseVector::Twist6(t) => {
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("twist {t:?}")));
            }
            Ok(Transform::exp(t))
        }
    }
}

/// Intrinsic Z-Y-X Euler angles in degrees: `R = Rz(c) Ry(b) Rx(a)`.
pub fn euler_to_transform(angles_deg: [f64; 3], translation: [f64; 3]) -> Transform {
    let [a, b, c] = angles_deg.map(f64::to_radians);
    let r = Rotation::rz(c)
        .compose(&Rotation::ry(b))
        .compose(&Rotation::rx(a));
    Transform::new(r, Vec3::from(translation))
}

/// Angle of `pred.R * gt.R^T` in degrees, in `[0, 180]`.
pub fn rotation_error(pred: &Transform, gt: &Transform) -> f64 {
    pred.rotation
        .compose(&gt.rotation.inverse())
        .angle()
        .to_degrees()
        .clamp(0.0, 180.0)
}

pub fn translation_error(pred: &Transform, gt: &Transform) -> f64 {
    (pred.translation - gt.translation).norm()
}

/// `|| M(a) M(b)^-1 - I ||_F`, evaluated as `|| (M(a) - M(b)) M(b)^-1 ||_F`
/// so that identical inputs give exactly zero.
pub fn frobenius_deviation(a: &Transform, b: &Transform) -> f64 {
    let diff = a.matrix() - b.matrix();
    let rb_t = b.rotation.matrix().transpose();
    let mut inv = Matrix4::identity();
    inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&rb_t);
    inv.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&(-(rb_t * b.translation)));
    (diff * inv).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_transform(rng: &mut impl Rng) -> Transform {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let r = Rotation::from_quaternion(q[0], q[1], q[2], q[3]).unwrap();
        let t = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        Transform::new(r, t)
    }

    fn max_abs(m: &Matrix4<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn compose_with_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng);
        let c = t.compose(&Transform::identity());
        assert!(max_abs(&(c.matrix() - t.matrix())) < 1e-15);
    }

    #[test]
    fn compose_commuting_axis_rotations() {
        let a = Transform::from_rotation(Rotation::rz(30f64.to_radians()));
        let b = Transform::from_rotation(Rotation::rz(15f64.to_radians()));
        let c = a.compose(&b);
        let expect = Transform::from_rotation(Rotation::rz(45f64.to_radians()));
        assert!(max_abs(&(c.matrix() - expect.matrix())) < 1e-12);
    }

    #[test]
    fn compose_chain_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ts: Vec<Transform> = (0..8).map(|_| random_transform(&mut rng)).collect();
        let composed = ts
            .iter()
            .fold(Transform::identity(), |acc, t| acc.compose(t));
        let oracle = ts
            .iter()
            .fold(Matrix4::identity(), |acc, t| acc * t.matrix());
        assert!(max_abs(&(composed.matrix() - oracle)) < 1e-9);
    }

    #[test]
    fn inverse_cases() {
        let id = Transform::identity().inverse();
        assert!(max_abs(&(id.matrix() - Matrix4::identity())) == 0.0);

        let t = Transform::from_translation(Vec3::new(1.0, 2.0, 3.0)).inverse();
        assert_abs_diff_eq!(t.translation, Vec3::new(-1.0, -2.0, -3.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let t = random_transform(&mut rng);
            let oracle = t.matrix().try_inverse().unwrap();
            assert!(max_abs(&(t.inverse().matrix() - oracle)) < 1e-9);
        }
    }

    #[test]
    fn apply_cases() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        let out = Transform::identity().apply(&cloud).unwrap();
        assert_eq!(out.points(), cloud.points());

        let rz = Transform::from_rotation(Rotation::rz(PI / 2.0));
        let out = rz.apply(&cloud).unwrap();
        assert!((out.points()[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec3> = (0..20)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let t = random_transform(&mut rng);
        let back = t.inverse().apply(&t.apply(&cloud).unwrap()).unwrap();
        for (a, b) in back.points().iter().zip(cloud.points()) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn apply_rejects_empty() {
        assert!(matches!(
            Transform::identity().apply(&PointCloud::empty()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn pose_quaternion7() {
        let t = pose_to_transform(&PoseVector::Quaternion7([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(t, Transform::identity());

        let t = pose_to_transform(&PoseVector::Quaternion7([2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]))
            .unwrap();
        assert_eq!(t.rotation, Rotation::IDENTITY);
        assert_eq!(t.translation, Vec3::new(1.0, 0.0, 0.0));

        let err = pose_to_transform(&PoseVector::Quaternion7([0.0; 7])).unwrap_err();
        assert!(matches!(err, Error::DegeneratePose(_)));
    }

    #[test]
    fn pose_twist_matches_rodrigues() {
        let t = pose_to_transform(&PoseVector::Twist6([0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0]))
            .unwrap();
        // Rodrigues: R = I + sin(th) K + (1 - cos(th)) K^2 with unit axis z
        let k = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let th = PI / 2.0;
        let oracle = Matrix3::identity() + k * th.sin() + k * k * (1.0 - th.cos());
        let diff = t.rotation.matrix() - oracle;
        assert!(diff.iter().all(|v| v.abs() < 1e-12));
        assert!(t.translation.norm() < 1e-15);
    }

    #[test]
    fn euler_cases() {
        assert_eq!(
            euler_to_transform([0.0; 3], [0.0; 3]).matrix(),
            Matrix4::identity()
        );
        let t = euler_to_transform([0.0, 0.0, 45.0], [0.0; 3]);
        let rz = Transform::from_rotation(Rotation::rz(PI / 4.0));
        assert!(max_abs(&(t.matrix() - rz.matrix())) < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-180.0..180.0));
            let t = euler_to_transform(a, [0.1, 0.2, 0.3]);
            // sequential single-axis matrices, applied x first then y then z
            let rx = Rotation::rx(a[0].to_radians()).matrix();
            let ry = Rotation::ry(a[1].to_radians()).matrix();
            let rz = Rotation::rz(a[2].to_radians()).matrix();
            let oracle = rz * ry * rx;
            let diff = t.rotation.matrix() - oracle;
            assert!(diff.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn rotation_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gt = random_transform(&mut rng);
        assert!(rotation_error(&gt, &gt) < 1e-6);

        let pred = gt.compose(&Transform::from_rotation(Rotation::rx(10f64.to_radians())));
        assert!((rotation_error(&pred, &gt) - 10.0).abs() < 1e-9);

        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let rel = a.rotation.matrix() * b.rotation.matrix().transpose();
            let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
            let oracle = c.acos().to_degrees();
            // arccos is ill-conditioned near 0 and 180 degrees
            assert!((rotation_error(&a, &b) - oracle).abs() < 1e-5);
        }
    }

    #[test]
    fn translation_error_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gt = random_transform(&mut rng);
        assert_eq!(translation_error(&gt, &gt), 0.0);
        let pred = Transform::new(gt.rotation, gt.translation + Vec3::new(3.0, 4.0, 0.0));
        assert!((translation_error(&pred, &gt) - 5.0).abs() < 1e-12);
        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let ss: f64 = (0..3)
                .map(|i| (a.translation[i] - b.translation[i]).powi(2))
                .sum();
            assert!((translation_error(&a, &b) - ss.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn frobenius_deviation_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random_transform(&mut rng);
        assert_eq!(frobenius_deviation(&a, &a), 0.0);
        let b = Transform::from_translation(Vec3::new(1.0, 0.0, 0.0));
        assert!((frobenius_deviation(&Transform::identity(), &b) - 1.0).abs() < 1e-15);
        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let oracle =
                (a.matrix() * b.matrix().try_inverse().unwrap() - Matrix4::identity()).norm();
            assert!((frobenius_deviation(&a, &b) - oracle).abs() < 1e-9);
        }
    }

    #[test]
    fn matrix_text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_transform(&mut rng);
        let text = t.to_matrix_text();
        assert_eq!(text.split_whitespace().count(), 16);
        let back = Transform::from_matrix_text(&text).unwrap();
        assert!(max_abs(&(back.matrix() - t.matrix())) < 1e-12);
        assert!(Transform::from_matrix_text("1 2 3").is_err());
    }

    #[test]
    fn log_exp_small_and_large_angles() {
        for twist in [
            [1e-9, -2e-9, 3e-9, 0.1, 0.2, 0.3],
            [0.0, 0.0, 0.0, 1.0, -1.0, 0.5],
            [0.3, -1.2, 2.0, -0.5, 0.25, 1.0],
        ] {
            let back = Transform::exp(&twist).log();
            for i in 0..6 {
                assert!((back[i] - twist[i]).abs() < 1e-9, "{twist:?} -> {back:?}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_transform() -> impl Strategy<Value = Transform> {
            (
                prop::array::uniform4(-1.0f64..1.0),
                prop::array::uniform3(-3.0f64..3.0),
            )
                .prop_filter_map("nonzero quaternion", |(q, t)| {
                    Rotation::from_quaternion(q[0], q[1], q[2], q[3])
                        .ok()
                        .map(|r| Transform::new(r, Vec3::from(t)))
                })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(1000))]

            #[test]
            fn associativity(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
                let l = a.compose(&b).compose(&c).matrix();
                let r = a.compose(&b.compose(&c)).matrix();
                prop_assert!(max_abs(&(l - r)) < 1e-9);
            }

            #[test]
            fn compose_inverse_is_identity(a in arb_transform()) {
                let m = a.compose(&a.inverse()).matrix();
                prop_assert!(max_abs(&(m - Matrix4::identity())) < 1e-9);
            }

            #[test]
            fn unit_norm_and_canonical(q in prop::array::uniform4(-5.0f64..5.0)) {
                if let Ok(r) = Rotation::from_quaternion(q[0], q[1], q[2], q[3]) {
                    let n: f64 = r.quaternion().iter().map(|v| v * v).sum::<f64>().sqrt();
                    prop_assert!((n - 1.0).abs() < 1e-9);
                    prop_assert!(r.canonical().quaternion()[0] >= 0.0);
                }
            }

            #[test]
            fn apply_preserves_distances(t in arb_transform(),
                                         p in prop::array::uniform3(-5.0f64..5.0),
                                         q in prop::array::uniform3(-5.0f64..5.0)) {
                let (p, q) = (Vec3::from(p), Vec3::from(q));
                let d0 = (p - q).norm();
                let d1 = (t.apply_point(&p) - t.apply_point(&q)).norm();
                prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
            }

            #[test]
            fn rotation_error_symmetric_and_left_invariant(
                a in arb_transform(), b in arb_transform(), c in arb_transform()
            ) {
                let e = rotation_error(&a, &b);
                prop_assert!((e - rotation_error(&b, &a)).abs() < 1e-6);
                let e2 = rotation_error(&c.compose(&a), &c.compose(&b));
                prop_assert!((e - e2).abs() < 1e-6);
                prop_assert!((0.0..=180.0).contains(&e));
            }

            #[test]
            fn quaternion7_scale_invariant(q in prop::array::uniform4(-1.0f64..1.0),
                                           t in prop::array::uniform3(-1.0f64..1.0),
                                           s in 0.01f64..100.0) {
                let p1 = [q[0], q[1], q[2], q[3], t[0], t[1], t[2]];
                let p2 = [s * q[0], s * q[1], s * q[2], s * q[3], t[0], t[1], t[2]];
                if let (Ok(a), Ok(b)) = (pose_to_transform(&PoseVector::Quaternion7(p1)),
                                         pose_to_transform(&PoseVector::Quaternion7(p2))) {
                    prop_assert!(max_abs(&(a.matrix() - b.matrix())) < 1e-12);
                }
            }

            #[test]
            fn exp_log_round_trip(axis in prop::array::uniform3(-1.0f64..1.0),
                                  angle in 0.0f64..(PI - 0.1),
                                  v in prop::array::uniform3(-2.0f64..2.0)) {
                let a = Vec3::from(axis);
                prop_assume!(a.norm() > 1e-3);
                let w = a.normalize() * angle;
                let twist = [w.x, w.y, w.z, v[0], v[1], v[2]];
                let back = Transform::exp(&twist).log();
                for i in 0..6 {
                    prop_assert!((back[i] - twist[i]).abs() < 1e-8);
                }
            }
        }
    }
}
