//! Foundational 3D types shared by every other module.
//!
//! Frame convention for the whole crate: `+z` is up, the operator stands on
//! the `+y` side of the workcell, and yaw is `atan2(dx, dy)`, so `+y` is zero
//! yaw and `+x` is `+π/2`. Orientation vectors follow `[sin γ, cos γ, 0]`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Position in meters.
pub type Vec3 = Vector3<f64>;

/// Below this horizontal norm a direction has no defined yaw.
pub const DEGENERATE_DIRECTION_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("horizontal projection of direction is degenerate (norm {0:e})")]
    DegenerateDirection(f64),
    #[error("rotation matrix is not orthonormal with det +1")]
    InvalidRotation,
}

/// Rigid transform `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self, GeometryError> {
        let t = Self {
            rotation,
            translation,
        };
        if t.is_valid(1e-9) {
            Ok(t)
        } else {
            Err(GeometryError::InvalidRotation)
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn from_rotation(rotation: Matrix3<f64>) -> Self {
        Self {
            rotation,
            translation: Vec3::zeros(),
        }
    }

    /// Rotation about `+z` by `angle` radians (counter-clockwise seen from above).
    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(*Rotation3::from_axis_angle(&Vec3::z_axis(), angle).matrix())
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_rotation(*Rotation3::from_axis_angle(&Vec3::x_axis(), angle).matrix())
    }

    pub fn from_axis_angle(axis: &Unit<Vec3>, angle: f64) -> Self {
        Self::from_rotation(*Rotation3::from_axis_angle(axis, angle).matrix())
    }

    /// Roll-pitch-yaw about fixed x, y, z axes (applied in that order).
    pub fn from_rpy(translation: Vec3, rpy: [f64; 3]) -> Self {
        let r = Rotation3::from_euler_angles(rpy[0], rpy[1], rpy[2]);
        Self {
            rotation: *r.matrix(),
            translation,
        }
    }

    /// Camera-style pose at `eye` whose `+z` axis points at `target`.
    ///
    /// The camera `+x` axis is kept horizontal, so `+y` points down in the image.
    pub fn look_at(eye: Vec3, target: Vec3) -> Result<Self, GeometryError> {
        let z = target - eye;
        let n = z.norm();
        if n < DEGENERATE_DIRECTION_EPS {
            return Err(GeometryError::DegenerateDirection(n));
        }
        let z = z / n;
        let mut x = z.cross(&Vec3::z());
        if x.norm() < 1e-9 {
            x = Vec3::x();
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_columns(&[x, y, z]);
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        let det = self.rotation.determinant();
        ortho <= tol && (det - 1.0).abs() <= tol && self.translation.iter().all(|v| v.is_finite())
    }

    /// Axis of the frame, e.g. `axis(2)` is the local `+z` in parent coordinates.
    pub fn axis(&self, i: usize) -> Vec3 {
        self.rotation.column(i).into_owned()
    }
}

/// Free-function form of [`RigidTransform::compose`].
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

/// Free-function form of [`RigidTransform::apply`].
pub fn apply(t: &RigidTransform, p: &Vec3) -> Vec3 {
    t.apply(p)
}

/// Yaw of the horizontal part of `to − from`, in `(−π, π]`.
pub fn yaw_toward(from: &Vec3, to: &Vec3) -> Result<f64, GeometryError> {
    let d = to - from;
    yaw_of(&d)
}

pub fn yaw_of(d: &Vec3) -> Result<f64, GeometryError> {
    let h = d.x.hypot(d.y);
    if h < DEGENERATE_DIRECTION_EPS {
        return Err(GeometryError::DegenerateDirection(h));
    }
    let mut yaw = d.x.atan2(d.y);
    if yaw <= -std::f64::consts::PI {
        yaw += 2.0 * std::f64::consts::PI;
    }
    Ok(yaw)
}

/// Planar orientation `[sin γ, cos γ, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationVec {
    a: [f64; 3],
}

impl OrientationVec {
    pub fn from_yaw(yaw: f64) -> Self {
        Self {
            a: [yaw.sin(), yaw.cos(), 0.0],
        }
    }

    /// Projects an arbitrary direction onto the horizontal plane.
    pub fn from_direction(d: &Vec3) -> Result<Self, GeometryError> {
        yaw_of(d).map(Self::from_yaw)
    }

    pub fn yaw(&self) -> f64 {
        self.a[0].atan2(self.a[1])
    }

    pub fn as_vec3(&self) -> Vec3 {
        Vec3::new(self.a[0], self.a[1], self.a[2])
    }
}

impl Default for OrientationVec {
    fn default() -> Self {
        Self::from_yaw(0.0)
    }
}

/// Task-space state of the arm tip: position plus planar pointing direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: OrientationVec,
}

impl Pose {
    pub fn new(position: Vec3, orientation: OrientationVec) -> Self {
        Self {
            position,
            orientation,
        }
    }
}

/// Axis-aligned bounds on commanded tip positions and yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintBox {
    pub x: [f64; 2],
    pub y: [f64; 2],
    pub z: [f64; 2],
    pub yaw: [f64; 2],
}

impl Default for ConstraintBox {
    fn default() -> Self {
        let q = std::f64::consts::FRAC_PI_4;
        Self {
            x: [-0.9, 0.9],
            y: [-0.9, 0.9],
            z: [0.2, 1.2],
            yaw: [-q, q],
        }
    }
}

impl ConstraintBox {
    pub fn contains(&self, p: &Vec3) -> bool {
        let inside = |v: f64, r: [f64; 2]| v >= r[0] && v <= r[1];
        inside(p.x, self.x) && inside(p.y, self.y) && inside(p.z, self.z)
    }

    pub fn contains_yaw(&self, yaw: f64) -> bool {
        yaw >= self.yaw[0] && yaw <= self.yaw[1]
    }

    pub fn clamp(&self, p: &Vec3) -> Vec3 {
        Vec3::new(
            p.x.clamp(self.x[0], self.x[1]),
            p.y.clamp(self.y[0], self.y[1]),
            p.z.clamp(self.z[0], self.z[1]),
        )
    }

    pub fn clamp_yaw(&self, yaw: f64) -> f64 {
        yaw.clamp(self.yaw[0], self.yaw[1])
    }
}

/// Human-editable transform: translation plus fixed-axis roll/pitch/yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformSpec {
    pub translation: [f64; 3],
    pub rpy: [f64; 3],
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl TransformSpec {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rpy: [0.0; 3],
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_rpy(Vec3::from(self.translation), self.rpy)
    }
}

/// Rotation vector (axis·angle) of a rotation matrix.
pub fn rotation_log(r: &Matrix3<f64>) -> Vec3 {
    let rot = Rotation3::from_matrix_unchecked(*r);
    rot.scaled_axis()
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn close(a: &RigidTransform, b: &RigidTransform, tol: f64) -> bool {
        (a.rotation - b.rotation).abs().max() <= tol
            && (a.translation - b.translation).abs().max() <= tol
    }

    #[test]
    fn identity_compose() {
        let i = RigidTransform::identity();
        assert_eq!(compose(&i, &i), i);
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform::from_rpy(Vec3::new(0.3, -1.2, 2.0), [0.4, -0.7, 1.9]);
        assert!(close(
            &t.compose(&t.inverse()),
            &RigidTransform::identity(),
            1e-12
        ));
    }

    #[test]
    fn compose_rz90_example() {
        // a = Rz(90°) ∘ translate(1,0,0); by hand a(b(x)) = Rz90(Rz90(x) + (1,0,0))
        let a = RigidTransform::rot_z(FRAC_PI_2)
            .compose(&RigidTransform::from_translation(Vec3::new(1.0, 0.0, 0.0)));
        let b = RigidTransform::rot_z(FRAC_PI_2);
        let p = compose(&a, &b).apply(&Vec3::new(1.0, 0.0, 0.0));
        assert_abs_diff_eq!(p, Vec3::new(-1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn apply_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(apply(&RigidTransform::identity(), &p), p);
        let t = RigidTransform::from_translation(Vec3::new(0.0, 0.0, 0.5));
        assert_eq!(t.apply(&Vec3::zeros()), Vec3::new(0.0, 0.0, 0.5));
        let r = RigidTransform::rot_z(PI).apply(&Vec3::x());
        assert_abs_diff_eq!(r, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn yaw_examples() {
        let o = Vec3::zeros();
        assert_eq!(yaw_toward(&o, &Vec3::new(0.0, 1.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            yaw_toward(&o, &Vec3::new(1.0, 1.0, 0.0)).unwrap(),
            FRAC_PI_4,
            epsilon = 1e-15
        );
        assert!(matches!(
            yaw_toward(&o, &Vec3::new(0.0, 0.0, 1.0)),
            Err(GeometryError::DegenerateDirection(_))
        ));
        // straight back is +π, never −π
        assert_eq!(yaw_toward(&o, &Vec3::new(-0.0, -1.0, 0.0)).unwrap(), PI);
    }

    #[test]
    fn look_at_points_z_axis() {
        let t =
            RigidTransform::look_at(Vec3::new(1.0, -1.0, 1.6), Vec3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(t.is_valid(1e-12));
        let dir = (Vec3::new(0.0, 0.0, 0.5) - Vec3::new(1.0, -1.0, 1.6)).normalize();
        assert_abs_diff_eq!(t.axis(2), dir, epsilon = 1e-12);
        assert_abs_diff_eq!(t.axis(0).z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn new_rejects_reflection() {
        let m = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert_eq!(
            RigidTransform::new(m, Vec3::zeros()),
            Err(GeometryError::InvalidRotation)
        );
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-2.0..2.0f64),
            prop::array::uniform3(-PI..PI),
        )
            .prop_map(|(t, rpy)| RigidTransform::from_rpy(Vec3::from(t), rpy))
    }

    proptest! {
        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(close(&l, &r, 1e-12));
        }

        #[test]
        fn compose_applies_right_first(a in arb_transform(), b in arb_transform(),
                                      p in prop::array::uniform3(-2.0..2.0f64)) {
            let p = Vec3::from(p);
            let lhs = a.compose(&b).apply(&p);
            let rhs = a.apply(&b.apply(&p));
            prop_assert!((lhs - rhs).abs().max() <= 1e-12);
        }

        #[test]
        fn orientation_yaw_round_trip(yaw in -PI..PI) {
            // (−π, π]: exclude the −π endpoint itself
            prop_assume!(yaw > -PI);
            let a = OrientationVec::from_yaw(yaw);
            prop_assert!((a.as_vec3().norm() - 1.0).abs() <= 1e-9);
            prop_assert_eq!(a.as_vec3().z, 0.0);
            prop_assert!((a.yaw() - yaw).abs() <= 1e-12);
        }
    }
}
