//! Points, oriented clouds, rigid transforms and rotation averaging.

use nalgebra::{Matrix3, Matrix4, Quaternion, Unit, UnitQuaternion, Vector3, Vector4, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::eigen::symmetric_eigen;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// A surface sample: position plus unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedPoint {
    pub position: Vec3,
    pub normal: Vec3,
}

impl OrientedPoint {
    /// Builds a point, normalizing `normal`.
    pub fn new(position: Vec3, normal: Vec3) -> Self {
        Self {
            position,
            normal: normal.normalize(),
        }
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            position: t.apply(&self.position),
            normal: t.rotate(&self.normal),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrameTag {
    #[default]
    Camera,
    Canonical,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OrientedCloud {
    pub points: Vec<OrientedPoint>,
    pub frame: FrameTag,
}

impl OrientedCloud {
    pub fn new(points: Vec<OrientedPoint>, frame: FrameTag) -> Self {
        Self { points, frame }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> + '_ {
        self.points.iter().map(|p| &p.position)
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum = self.positions().fold(Vec3::zeros(), |acc, p| acc + p);
        Some(sum / self.points.len() as f64)
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| p.transformed(t)).collect(),
            frame: self.frame,
        }
    }

    /// Points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            frame: self.frame,
        }
    }
}

/// Rigid motion `x -> R x + t` with the rotation stored as a unit
/// quaternion canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    // renormalize to keep drift out of long compositions
    let q = UnitQuaternion::new_normalize(*q.quaternion());
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: canonical(rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(q: UnitQuaternion<f64>) -> Self {
        Self::new(q, Vec3::zeros())
    }

    /// Quaternion given as `[w, x, y, z]`; normalized on construction.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Self {
        let q = UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]));
        Self::new(q, Vec3::from(t))
    }

    pub fn from_matrix(r: &Matrix3<f64>, t: Vec3) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_eps(r, 1e-15, 100, nalgebra::Rotation3::identity());
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    /// Rotation by `angle` radians about `axis` (normalized here).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_axis_angle(&Unit::new_normalize(*axis), angle))
    }

    pub fn rot_x_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::x(), deg.to_radians())
    }

    pub fn rot_y_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::y(), deg.to_radians())
    }

    pub fn rot_z_deg(deg: f64) -> Self {
        Self::from_axis_angle(&Vec3::z(), deg.to_radians())
    }

    /// Rotation by `angle` about the line through `center` with direction `axis`.
    pub fn about_line(center: &Vec3, axis: &Vec3, angle: f64) -> Self {
        let r = Self::from_axis_angle(axis, angle);
        let t = center - r.rotate(center);
        Self::new(r.rotation, t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform::new(inv, -(inv * self.translation))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .coords
            .iter()
            .chain(self.translation.iter())
            .all(|x| x.is_finite())
    }

    /// Rotation angle of this transform in radians, in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let q = self.rotation.quaternion();
        2.0 * q.imag().norm().atan2(q.w.abs())
    }
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn apply(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// Angle of the relative rotation between two poses, in degrees.
pub fn rotation_geodesic_deg(a: &RigidTransform, b: &RigidTransform) -> f64 {
    let rel = a.rotation.inverse() * b.rotation;
    let q = rel.quaternion();
    (2.0 * q.imag().norm().atan2(q.w.abs())).to_degrees()
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    q: [f64; 4],
    t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr {
            q: self.wxyz(),
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = TransformRepr::deserialize(d)?;
        let n = r.q.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(serde::de::Error::custom("quaternion must be non-zero and finite"));
        }
        Ok(RigidTransform::from_wxyz(r.q, r.t))
    }
}

/// Linearized rigid motion: rotation vector `r` and translation `t`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub r: Vec3,
    pub t: Vec3,
}

impl Twist {
    pub fn new(r: Vec3, t: Vec3) -> Self {
        Self { r, t }
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            r: x.fixed_rows::<3>(0).into_owned(),
            t: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.r.x, self.r.y, self.r.z, self.t.x, self.t.y, self.t.z)
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }
}

/// Exact exponential of the rotational part; translation copied verbatim.
pub fn twist_to_transform(x: &Twist) -> RigidTransform {
    RigidTransform::new(UnitQuaternion::from_scaled_axis(x.r), x.t)
}

/// First-order rotation `I + [r]×` for a small rotation vector.
pub fn linearized_rotation(r: &Vec3) -> Matrix3<f64> {
    Matrix3::new(1.0, -r.z, r.y, r.z, 1.0, -r.x, -r.y, r.x, 1.0)
}

/// Weighted rotation average: the principal eigenvector of
/// `Σ wᵢ qᵢ qᵢᵀ`. Insensitive to the sign of each quaternion. Entries with
/// non-positive weight are ignored.
pub fn weighted_rotation_mean(entries: &[(UnitQuaternion<f64>, f64)]) -> Result<UnitQuaternion<f64>> {
    let mut m = Matrix4::<f64>::zeros();
    let mut total = 0.0;
    for (q, w) in entries {
        if !(*w > 0.0) {
            continue;
        }
        let v: Vector4<f64> = q.coords;
        m += v * v.transpose() * *w;
        total += *w;
    }
    if total <= 0.0 {
        return Err(Error::AllZeroWeights);
    }
    let eig = symmetric_eigen(&(m / total))?;
    let v = eig.vector(3);
    let q = UnitQuaternion::new_normalize(Quaternion::from(v));
    Ok(canonical(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn compose_examples() {
        let t = RigidTransform::new(
            UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1),
            Vec3::new(1.0, 2.0, 3.0),
        );
        assert_eq!(t.compose(&RigidTransform::identity()), t);
        let id = t.compose(&t.inverse());
        assert!(id.angle() < 1e-9 && id.translation().norm() < 1e-9);
        let r = RigidTransform::rot_z_deg(90.0).compose(&RigidTransform::rot_z_deg(90.0));
        assert!(rotation_geodesic_deg(&r, &RigidTransform::rot_z_deg(180.0)) < 1e-9);
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(RigidTransform::identity().apply(&p), p);
        let q = RigidTransform::rot_z_deg(90.0).apply(&Vec3::x());
        assert!((q - Vec3::y()).norm() < 1e-9);
        let s = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0)).apply(&Vec3::new(1.0, 1.0, 1.0));
        assert_eq!(s, Vec3::new(1.0, 1.0, 6.0));
    }

    #[test]
    fn geodesic_examples() {
        let id = RigidTransform::identity();
        assert_eq!(rotation_geodesic_deg(&id, &id), 0.0);
        assert_relative_eq!(
            rotation_geodesic_deg(&id, &RigidTransform::rot_z_deg(10.0)),
            10.0,
            epsilon = 1e-9
        );
        assert_relative_eq!(
            rotation_geodesic_deg(&RigidTransform::rot_x_deg(30.0), &RigidTransform::rot_x_deg(-30.0)),
            60.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn quaternion_is_canonical() {
        let t = RigidTransform::rot_z_deg(350.0);
        assert!(t.wxyz()[0] >= 0.0);
        let t = RigidTransform::from_wxyz([-1.0, 0.0, 0.0, 0.0], [0.0; 3]);
        assert_eq!(t.wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn json_layout() {
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"q":[1.0,0.0,0.0,0.0],"t":[1.0,2.0,3.0]}"#);
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<RigidTransform>(r#"{"q":[0,0,0,0],"t":[0,0,0]}"#).is_err());
    }

    #[test]
    fn twist_examples() {
        let id = twist_to_transform(&Twist::default());
        assert_eq!(id, RigidTransform::identity());
        let r = twist_to_transform(&Twist::new(Vec3::new(0.0, 0.0, PI / 2.0), Vec3::zeros()));
        assert!(rotation_geodesic_deg(&r, &RigidTransform::rot_z_deg(90.0)) < 1e-9);
    }

    #[test]
    fn linearized_rotation_is_second_order() {
        // finite comparison of I + [r]x against the exact exponential
        let dir = Vec3::new(0.3, -0.5, 0.8).normalize();
        let mut errs = vec![];
        for &mag in &[1e-2, 1e-3] {
            let r = dir * mag;
            let exact = twist_to_transform(&Twist::new(r, Vec3::zeros())).rotation_matrix();
            errs.push((linearized_rotation(&r) - exact).norm());
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!((slope - 2.0).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn rotation_mean_examples() {
        let q = UnitQuaternion::from_euler_angles(0.4, 0.1, -0.7);
        let m = weighted_rotation_mean(&[(q, 1.0)]).unwrap();
        assert!(m.angle_to(&q) < 1e-9);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        let m = weighted_rotation_mean(&[(q, 1.0), (neg, 1.0)]).unwrap();
        assert!(m.angle_to(&q) < 1e-9);
        assert_eq!(weighted_rotation_mean(&[(q, 0.0)]), Err(Error::AllZeroWeights));
        assert_eq!(weighted_rotation_mean(&[]), Err(Error::AllZeroWeights));
    }

    #[test]
    fn rotation_mean_matches_brute_force_geodesic_mean() {
        let a = *RigidTransform::rot_z_deg(10.0).rotation();
        let b = *RigidTransform::rot_z_deg(20.0).rotation();
        let m = weighted_rotation_mean(&[(a, 1.0), (b, 1.0)]).unwrap();
        // golden-section search over the angle about z
        let cost = |deg: f64| {
            let c = *RigidTransform::rot_z_deg(deg).rotation();
            c.angle_to(&a).powi(2) + c.angle_to(&b).powi(2)
        };
        let (mut lo, mut hi) = (0.0_f64, 30.0_f64);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = hi - g * (hi - lo);
            let x2 = lo + g * (hi - lo);
            if cost(x1) < cost(x2) {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let best = *RigidTransform::rot_z_deg(0.5 * (lo + hi)).rotation();
        assert!(m.angle_to(&best) < 1e-6);
    }
}
