//! Rigid transforms, quaternion algebra, box pose interpolation and
//! per-object motion compensation.
//!
//! Rotations are stored as unit quaternions `(w, x, y, z)` and only turned
//! into matrices when a point warp needs one. Timestamps are seconds relative
//! to the scene start.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Largest deviation of `|q|` from 1 accepted at API boundaries before the
/// quaternion is renormalized.
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Below this geodesic angle `slerp` falls back to normalized lerp.
pub const SLERP_MIN_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    /// Rotation of `angle` radians about `axis` (need not be normalized).
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Quat::IDENTITY;
        }
        let a = axis / n;
        let (s, c) = (0.5 * angle).sin_cos();
        Quat::new(c, a.x * s, a.y * s, a.z * s)
    }

    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (0.5 * yaw).sin_cos();
        Quat::new(c, 0.0, 0.0, s)
    }

    /// Heading angle about +z, assuming the rotation is (close to) a pure yaw.
    pub fn yaw(&self) -> f64 {
        let siny = 2.0 * (self.w * self.z + self.x * self.y);
        let cosy = 1.0 - 2.0 * (self.y * self.y + self.z * self.z);
        siny.atan2(cosy)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, other: &Quat) -> f64 {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn scale(&self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn add(&self, other: &Quat) -> Quat {
        Quat::new(
            self.w + other.w,
            self.x + other.x,
            self.y + other.y,
            self.z + other.z,
        )
    }

    pub fn neg(&self) -> Quat {
        self.scale(-1.0)
    }

    pub fn conjugate(&self) -> Quat {
        Quat::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Returns `self / |self|`. Zero quaternions are rejected.
    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::invalid(format!(
                "cannot normalize quaternion with norm {n}"
            )));
        }
        Ok(self.scale(1.0 / n))
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= UNIT_TOLERANCE
    }

    /// Checks unit norm within [`UNIT_TOLERANCE`] and renormalizes.
    pub fn checked_unit(&self) -> Result<Quat> {
        if !self.is_unit() {
            return Err(Error::invalid(format!(
                "quaternion ({}, {}, {}, {}) has norm {}, expected 1",
                self.w,
                self.x,
                self.y,
                self.z,
                self.norm()
            )));
        }
        self.normalized()
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        // v' = v + 2 u x (u x v + w v), u = vector part
        let u = Vec3::new(self.x, self.y, self.z);
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    pub fn to_rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
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

    /// Geodesic rotation angle between two unit quaternions, sign-invariant.
    pub fn angle_to(&self, other: &Quat) -> f64 {
        let d = self.conjugate() * *other;
        let v = (d.x * d.x + d.y * d.y + d.z * d.z).sqrt();
        2.0 * v.atan2(d.w.abs())
    }
}

impl Mul for Quat {
    type Output = Quat;

    /// Hamilton product; `(a * b).rotate(v) == a.rotate(&b.rotate(v))`.
    fn mul(self, r: Quat) -> Quat {
        Quat::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

/// Spherical linear interpolation along the shorter geodesic.
///
/// `alpha = 0` returns `q1` and `alpha = 1` returns `q2` bit for bit (`-q2`
/// when the inputs lie in opposite hemispheres).
pub fn slerp(q1: &Quat, q2: &Quat, alpha: f64) -> Result<Quat> {
    let q1 = q1.checked_unit()?;
    let mut q2 = q2.checked_unit()?;
    if !alpha.is_finite() {
        return Err(Error::invalid(format!("slerp parameter {alpha} is not finite")));
    }
    let mut cos_theta = q1.dot(&q2);
    if cos_theta < 0.0 {
        q2 = q2.neg();
        cos_theta = -cos_theta;
    }
    if alpha == 0.0 {
        return Ok(q1);
    }
    if alpha == 1.0 {
        return Ok(q2);
    }
    // angle from atan2 stays accurate near 0 where acos loses digits
    let sin_theta = q1.scale(cos_theta).neg().add(&q2).norm();
    let theta = sin_theta.atan2(cos_theta);
    if theta < SLERP_MIN_ANGLE {
        return q1.scale(1.0 - alpha).add(&q2.scale(alpha)).normalized();
    }
    let s = theta.sin();
    let a = ((1.0 - alpha) * theta).sin() / s;
    let b = (alpha * theta).sin() / s;
    q1.scale(a).add(&q2.scale(b)).normalized()
}

/// `T^a_b`: maps coordinates in frame `b` to frame `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct RigidTransform {
    rotation: Quat,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    rotation: Quat,
    translation: Vec3,
}

impl TryFrom<RawTransform> for RigidTransform {
    type Error = Error;

    fn try_from(raw: RawTransform) -> Result<Self> {
        RigidTransform::new(raw.rotation, raw.translation)
    }
}

impl From<RigidTransform> for RawTransform {
    fn from(t: RigidTransform) -> Self {
        RawTransform {
            rotation: t.rotation,
            translation: t.translation,
        }
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Quat::IDENTITY,
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Quat, translation: Vec3) -> Result<Self> {
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(RigidTransform {
            rotation: rotation.checked_unit()?,
            translation,
        })
    }

    pub fn from_translation(translation: Vec3) -> Self {
        RigidTransform {
            rotation: Quat::IDENTITY,
            translation,
        }
    }

    pub fn from_rotation(rotation: Quat) -> Result<Self> {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn rotation(&self) -> Quat {
        self.rotation
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation.rotate(v)
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = (self.rotation * other.rotation)
            .normalized()
            .expect("product of unit quaternions is non-zero");
        RigidTransform {
            rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let inv = self.rotation.conjugate();
        RigidTransform {
            rotation: inv,
            translation: -inv.rotate(&self.translation),
        }
    }

    pub fn to_matrix(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation.to_rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Left-to-right product `T1 * T2 * ... * Tn` of a transform chain, so the
/// last transform is applied to a point first.
pub fn compose_chain(transforms: &[RigidTransform]) -> Result<RigidTransform> {
    let (first, rest) = transforms
        .split_first()
        .ok_or_else(|| Error::invalid("transform chain is empty"))?;
    // transforms built outside `new` (e.g. via serde bypass) are re-checked
    let mut acc = RigidTransform::new(first.rotation, first.translation)?;
    for t in rest {
        let t = RigidTransform::new(t.rotation, t.translation)?;
        acc = acc.compose(&t);
    }
    Ok(acc)
}

/// Annotated oriented box: center, heading quaternion, `(l, w, h)` extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub center: Vec3,
    pub orientation: Quat,
    pub size: Vec3,
    pub timestamp: f64,
}

impl BoxPose {
    pub fn new(center: Vec3, orientation: Quat, size: Vec3, timestamp: f64) -> Result<Self> {
        if !size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::invalid(format!(
                "box size must be positive, got {size:?}"
            )));
        }
        if !center.iter().all(|c| c.is_finite()) || !timestamp.is_finite() {
            return Err(Error::invalid("box center/timestamp not finite"));
        }
        Ok(BoxPose {
            center,
            orientation: orientation.checked_unit()?,
            size,
            timestamp,
        })
    }

    /// Box-to-frame transform (box frame: x along length, z up).
    pub fn transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.orientation,
            translation: self.center,
        }
    }

    /// Re-express the box in another frame: `frame_from_here * box`.
    pub fn transformed(&self, frame_from_here: &RigidTransform) -> BoxPose {
        let t = frame_from_here.compose(&self.transform());
        BoxPose {
            center: t.translation,
            orientation: t.rotation,
            size: self.size,
            timestamp: self.timestamp,
        }
    }

    /// The eight corners, ordered by the sign pattern of `(±l/2, ±w/2, ±h/2)`.
    pub fn corners(&self) -> [Vec3; 8] {
        let half = self.size * 0.5;
        let t = self.transform();
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
            let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
            let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
            *c = t.apply(&Vec3::new(sx * half.x, sy * half.y, sz * half.z));
        }
        out
    }

    /// Whether `p` (same frame as the box) lies inside the box grown by
    /// `margin` on every side.
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        let local = self.orientation.conjugate().rotate(&(p - self.center));
        let half = self.size * 0.5;
        local.x.abs() <= half.x + margin
            && local.y.abs() <= half.y + margin
            && local.z.abs() <= half.z + margin
    }
}

/// Box pose at `t` between two annotations: linear center, slerped heading.
pub fn interpolate_pose(prev: &BoxPose, cur: &BoxPose, t: f64) -> Result<BoxPose> {
    let m = cur.timestamp - prev.timestamp;
    if !(m > 0.0) {
        return Err(Error::invalid(format!(
            "annotation interval must be positive, got {m}"
        )));
    }
    if !(t >= prev.timestamp && t <= cur.timestamp) {
        return Err(Error::invalid(format!(
            "t={t} outside [{}, {}]",
            prev.timestamp, cur.timestamp
        )));
    }
    let t0 = cur.timestamp;
    let center = cur.center + ((t - t0) / m) * (cur.center - prev.center);
    let orientation = slerp(&cur.orientation, &prev.orientation, (t0 - t) / m)?;
    Ok(BoxPose {
        center,
        orientation,
        size: cur.size,
        timestamp: t,
    })
}

/// Constant linear velocity over `[prev.timestamp, cur.timestamp]`.
pub fn estimate_velocity(prev: &BoxPose, cur: &BoxPose) -> Result<Vec3> {
    let m = cur.timestamp - prev.timestamp;
    if !(m > 0.0) {
        return Err(Error::invalid(format!(
            "annotation interval must be positive, got {m}"
        )));
    }
    Ok((cur.center - prev.center) / m)
}

/// Constant-velocity motion model anchored at the reference pose `t0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectMotion {
    pub velocity: Vec3,
    pub reference: BoxPose,
    rotation: Matrix3<f64>,
}

impl ObjectMotion {
    pub fn new(reference: BoxPose, velocity: Vec3) -> Self {
        ObjectMotion {
            velocity,
            rotation: reference.orientation.to_rotation_matrix(),
            reference,
        }
    }

    pub fn stationary(reference: BoxPose) -> Self {
        Self::new(reference, Vec3::zeros())
    }

    pub fn from_annotations(prev: &BoxPose, cur: &BoxPose) -> Result<Self> {
        Ok(Self::new(*cur, estimate_velocity(prev, cur)?))
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }
}

/// Forward-warps points observed at sweep time `t` into the object frame at
/// `t0`: `R(t0)^T [p + (t0 - t) v - c(t0)]`.
pub fn warp_to_canonical(points: &[Vec3], motion: &ObjectMotion, t: f64, t0: f64) -> Vec<Vec3> {
    let shift = (t0 - t) * motion.velocity - motion.reference.center;
    let rt = motion.rotation.transpose();
    points.iter().map(|p| rt * (p + shift)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn rot_z(angle: f64) -> Quat {
        Quat::from_axis_angle(Vec3::z(), angle)
    }

    fn assert_quat_eq(a: &Quat, b: &Quat, eps: f64) {
        assert_abs_diff_eq!(a.w, b.w, epsilon = eps);
        assert_abs_diff_eq!(a.x, b.x, epsilon = eps);
        assert_abs_diff_eq!(a.y, b.y, epsilon = eps);
        assert_abs_diff_eq!(a.z, b.z, epsilon = eps);
    }

    #[test]
    fn chain_of_identities_is_identity() {
        let c = compose_chain(&[RigidTransform::IDENTITY, RigidTransform::IDENTITY]).unwrap();
        assert_eq!(c, RigidTransform::IDENTITY);
    }

    #[test]
    fn chain_of_translations_adds() {
        let c = compose_chain(&[
            RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)),
            RigidTransform::from_translation(Vec3::new(0.0, 2.0, 0.0)),
        ])
        .unwrap();
        assert_eq!(c.translation(), Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(c.rotation(), Quat::IDENTITY);
    }

    #[test]
    fn chain_rotation_then_translation_on_origin() {
        let c = compose_chain(&[
            RigidTransform::from_rotation(rot_z(FRAC_PI_2)).unwrap(),
            RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)),
        ])
        .unwrap();
        let p = c.apply(&Vec3::zeros());
        // hand product: Rz(90) * (1,0,0) = (0,1,0)
        assert_abs_diff_eq!(p, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        let m = c.to_matrix();
        assert_abs_diff_eq!(m[(0, 3)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 3)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn chain_rejects_empty_and_non_unit() {
        assert!(compose_chain(&[]).is_err());
        assert!(RigidTransform::new(Quat::new(2.0, 0.0, 0.0, 0.0), Vec3::zeros()).is_err());
        let bad: std::result::Result<RigidTransform, _> = serde_json::from_str(
            r#"{"rotation":{"w":0.5,"x":0.0,"y":0.0,"z":0.0},"translation":[0,0,0]}"#,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn slerp_identical_endpoints() {
        let q = rot_z(0.7);
        assert_quat_eq(&slerp(&q, &q, 0.5).unwrap(), &q, 1e-15);
    }

    #[test]
    fn slerp_endpoint_and_midpoint() {
        let q = rot_z(FRAC_PI_2);
        assert_quat_eq(&slerp(&Quat::IDENTITY, &q, 1.0).unwrap(), &q, 1e-15);
        assert_quat_eq(&slerp(&Quat::IDENTITY, &q, 0.0).unwrap(), &Quat::IDENTITY, 1e-15);
        // half of a 90 degree turn: matrix square root of Rz(90) is Rz(45),
        // whose quaternion is (cos 22.5, 0, 0, sin 22.5)
        let half = slerp(&Quat::IDENTITY, &q, 0.5).unwrap();
        assert_quat_eq(&half, &Quat::new(0.923_879_532_511_286_7, 0.0, 0.0, 0.382_683_432_365_089_8), 1e-12);
        let m = half.to_rotation_matrix();
        assert_abs_diff_eq!(m * m, q.to_rotation_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn slerp_takes_short_path_for_antipodal_sign() {
        let q = rot_z(0.4);
        let r = slerp(&Quat::IDENTITY, &q.neg(), 0.5).unwrap();
        assert_abs_diff_eq!(r.angle_to(&rot_z(0.2)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn slerp_tiny_angle_falls_back_to_lerp() {
        let q = rot_z(1e-12);
        let r = slerp(&Quat::IDENTITY, &q, 0.5).unwrap();
        assert!((r.norm() - 1.0).abs() < 1e-12);
        assert!(r.angle_to(&Quat::IDENTITY) <= 1e-12);
    }

    fn pose(c: [f64; 3], yaw: f64, t: f64) -> BoxPose {
        BoxPose::new(Vec3::from(c), Quat::from_yaw(yaw), Vec3::new(4.0, 2.0, 1.5), t).unwrap()
    }

    #[test]
    fn interpolate_endpoints_and_midpoint() {
        let prev = pose([0.0, 0.0, 0.0], 0.0, 1.0);
        let cur = pose([2.0, 0.0, 0.0], 0.3, 1.5);
        let at_cur = interpolate_pose(&prev, &cur, 1.5).unwrap();
        assert_eq!(at_cur.center, cur.center);
        assert_quat_eq(&at_cur.orientation, &cur.orientation, 1e-15);
        let at_prev = interpolate_pose(&prev, &cur, 1.0).unwrap();
        assert_abs_diff_eq!(at_prev.center, prev.center, epsilon = 1e-12);
        assert_quat_eq(&at_prev.orientation, &prev.orientation, 1e-12);
        let mid = interpolate_pose(&prev, &cur, 1.25).unwrap();
        assert_abs_diff_eq!(mid.center, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(mid.orientation.yaw(), 0.15, epsilon = 1e-12);
        assert_eq!(mid.size, cur.size);
        assert!(interpolate_pose(&prev, &cur, 1.6).is_err());
        assert!(interpolate_pose(&prev, &cur, 0.9).is_err());
    }

    #[test]
    fn velocity_examples() {
        let a = pose([1.0, 2.0, 3.0], 0.0, 0.0);
        let b = pose([1.0, 2.0, 3.0], 0.0, 0.7);
        assert_eq!(estimate_velocity(&a, &b).unwrap(), Vec3::zeros());
        let a = pose([0.0, 0.0, 0.0], 0.0, 2.0);
        let b = pose([5.0, 0.0, 0.0], 0.0, 2.5);
        assert_abs_diff_eq!(estimate_velocity(&a, &b).unwrap(), Vec3::new(10.0, 0.0, 0.0), epsilon = 1e-12);
        assert!(estimate_velocity(&b, &a).is_err());
        assert!(estimate_velocity(&a, &a).is_err());
    }

    #[test]
    fn warp_examples() {
        let c = Vec3::new(3.0, -1.0, 0.5);
        let m = ObjectMotion::stationary(pose([3.0, -1.0, 0.5], 0.0, 0.0));
        assert_abs_diff_eq!(warp_to_canonical(&[c], &m, 0.0, 0.0)[0], Vec3::zeros(), epsilon = 1e-12);

        let m = ObjectMotion::new(pose([0.0; 3], 0.0, 2.0), Vec3::new(1.0, 0.0, 0.0));
        let out = warp_to_canonical(&[Vec3::new(-2.0, 0.0, 0.0)], &m, 0.0, 2.0);
        assert_abs_diff_eq!(out[0], Vec3::zeros(), epsilon = 1e-12);

        // R = Rz(90): R^T (0,1,0) = (1,0,0)
        let m = ObjectMotion::stationary(pose([0.0; 3], FRAC_PI_2, 0.0));
        let out = warp_to_canonical(&[Vec3::new(0.0, 1.0, 0.0)], &m, 0.0, 0.0);
        assert_abs_diff_eq!(out[0], Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
        let r = m.rotation();
        assert_abs_diff_eq!(r * r.transpose(), Matrix3::identity(), epsilon = 1e-8);
    }

    #[test]
    fn box_contains_respects_margin() {
        let b = pose([0.0; 3], 0.5, 0.0);
        let inside = b.transform().apply(&Vec3::new(2.05, 0.0, 0.0));
        assert!(!b.contains(&inside, 0.0));
        assert!(b.contains(&inside, 0.1));
        assert_eq!(b.corners().len(), 8);
    }
}
