//! Synthetic eye-to-hand RGB-D sensors and the arm-mounted stereo sensor.
//!
//! Detection is geometric: a sensor reports the center of the target shape
//! when that center lies in its view frustum, the target faces the sensor and
//! the line of sight is clear. Calibration error, Gaussian noise and stereo
//! depth quantization are then applied.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};
use crate::kinematics::{ArmModel, JointVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("invalid frustum: {0}")]
    InvalidFrustum(String),
    #[error("invalid sensor parameter: {0}")]
    InvalidParameter(String),
}

/// View cone with a full opening angle `fov` and depth bounds along the optical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrustumSpec {
    pub fov: f64,
    pub near: f64,
    pub far: f64,
}

impl FrustumSpec {
    /// Stereo sensor on the arm: 45° cone, 20–40 cm.
    pub fn einh_default() -> Self {
        Self {
            fov: 45f64.to_radians(),
            near: 0.20,
            far: 0.40,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(SensorError::InvalidFrustum(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        if !(self.fov > 0.0 && self.fov < std::f64::consts::PI) {
            return Err(SensorError::InvalidFrustum(format!(
                "fov {} outside (0, π)",
                self.fov
            )));
        }
        Ok(())
    }

    /// Membership test for a point already expressed in the camera frame.
    pub fn contains_local(&self, p: &Vec3) -> bool {
        self.contains_local_shrunk(p, 0.0)
    }

    /// Membership in the frustum shrunk by `margin`: depth in
    /// `[near + margin, far − margin]` and lateral offset at least `margin`
    /// inside the cone wall at the point's depth.
    pub fn contains_local_shrunk(&self, p: &Vec3, margin: f64) -> bool {
        let depth = p.z;
        if depth < self.near + margin || depth > self.far - margin {
            return false;
        }
        let lateral = p.x.hypot(p.y);
        let half = self.fov / 2.0;
        if margin == 0.0 {
            lateral.atan2(depth) <= half
        } else {
            lateral <= depth * half.tan() - margin
        }
    }
}

/// True iff `p` (world) lies in the frustum of a sensor at `sensor_pose`.
pub fn in_frustum(p: &Vec3, sensor_pose: &RigidTransform, f: &FrustumSpec) -> bool {
    let local = sensor_pose.inverse().apply(p);
    f.contains_local(&local)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetShape {
    Sphere {
        radius: f64,
    },
    /// Flat disc facing along `normal`.
    Disc {
        radius: f64,
        normal: [f64; 3],
    },
}

impl TargetShape {
    /// Signed distance from `p` to the surface of the shape centered at `center`.
    ///
    /// For a disc the backing surface is treated as solid: points behind the
    /// disc plane within its radius have negative distance.
    pub fn signed_distance(&self, center: &Vec3, p: &Vec3) -> f64 {
        match *self {
            TargetShape::Sphere { radius } => (p - center).norm() - radius,
            TargetShape::Disc { radius, normal } => {
                let n = Vec3::from(normal).normalize();
                let d = p - center;
                let h = d.dot(&n);
                let rho = (d - n * h).norm();
                if rho <= radius {
                    h
                } else {
                    (rho - radius).hypot(h.max(0.0))
                }
            }
        }
    }

    /// Distance from `p` to the target center measured in the disc plane
    /// (full 3D distance for spheres).
    pub fn center_offset(&self, center: &Vec3, p: &Vec3) -> f64 {
        match *self {
            TargetShape::Sphere { .. } => (p - center).norm(),
            TargetShape::Disc { normal, .. } => {
                let n = Vec3::from(normal).normalize();
                let d = p - center;
                (d - n * d.dot(&n)).norm()
            }
        }
    }

    /// Whether a viewer at `eye` sees the front of the shape.
    pub fn faces(&self, center: &Vec3, eye: &Vec3) -> bool {
        match *self {
            TargetShape::Sphere { .. } => true,
            TargetShape::Disc { normal, .. } => (eye - center).dot(&Vec3::from(normal)) > 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        let ok = match *self {
            TargetShape::Sphere { radius } => radius > 0.0,
            TargetShape::Disc { radius, normal } => {
                radius > 0.0 && Vec3::from(normal).norm() > 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(SensorError::InvalidParameter(format!(
                "bad target shape {self:?}"
            )))
        }
    }
}

/// Piecewise-linear target motion through timed keyframes, held constant
/// before the first and after the last keyframe.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPath {
    keyframes: Vec<(f64, Vec3)>,
}

impl TargetPath {
    pub fn fixed(p: Vec3) -> Self {
        Self {
            keyframes: vec![(0.0, p)],
        }
    }

    /// Keyframes must be time-ordered; an empty list is rejected.
    pub fn from_keyframes(keyframes: Vec<(f64, Vec3)>) -> Result<Self, SensorError> {
        if keyframes.is_empty() {
            return Err(SensorError::InvalidParameter("empty target path".into()));
        }
        if keyframes.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(SensorError::InvalidParameter(
                "keyframes not time-ordered".into(),
            ));
        }
        Ok(Self { keyframes })
    }

    /// Straight move from `from` to `to` at `speed`, starting at `start`.
    pub fn linear(from: Vec3, to: Vec3, start: f64, speed: f64) -> Self {
        let dist = (to - from).norm();
        if dist == 0.0 || speed <= 0.0 {
            return Self::fixed(to);
        }
        Self {
            keyframes: vec![(start, from), (start + dist / speed, to)],
        }
    }

    pub fn position(&self, t: f64) -> Vec3 {
        let k = &self.keyframes;
        if t <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            if t <= t1 {
                if t1 == t0 {
                    return p1;
                }
                let s = (t - t0) / (t1 - t0);
                return p0 + (p1 - p0) * s;
            }
        }
        k[k.len() - 1].1
    }

    /// Time at which the target reaches its final keyframe.
    pub fn arrival_time(&self) -> f64 {
        self.keyframes[self.keyframes.len() - 1].0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub shape: TargetShape,
    pub path: TargetPath,
}

impl Target {
    pub fn center(&self, t: f64) -> Vec3 {
        self.path.position(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Occluder {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Capsule {
        a: [f64; 3],
        b: [f64; 3],
        radius: f64,
    },
}

impl Occluder {
    fn blocks(&self, p: &Vec3, q: &Vec3) -> bool {
        match *self {
            Occluder::Sphere { center, radius } => {
                point_segment_distance(&Vec3::from(center), p, q) < radius
            }
            Occluder::Capsule { a, b, radius } => {
                segment_segment_distance(p, q, &Vec3::from(a), &Vec3::from(b)) < radius
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

/// Everything the sensors can see at one instant.
#[derive(Debug, Clone)]
pub struct Scene {
    pub target: Target,
    pub occluders: Vec<Occluder>,
    pub arm_links: Vec<Capsule>,
}

impl Scene {
    pub fn new(target: Target, occluders: Vec<Occluder>) -> Self {
        Self {
            target,
            occluders,
            arm_links: Vec::new(),
        }
    }

    /// Replaces the arm-link capsules with those of configuration `q`.
    pub fn set_arm(&mut self, model: &ArmModel, q: &JointVector) {
        let r = model.params.link_radius;
        self.arm_links = model
            .link_segments(q)
            .into_iter()
            .map(|(a, b)| Capsule { a, b, radius: r })
            .collect();
    }
}

pub fn point_segment_distance(c: &Vec3, p: &Vec3, q: &Vec3) -> f64 {
    let d = q - p;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (c - p).norm();
    }
    let s = ((c - p).dot(&d) / len2).clamp(0.0, 1.0);
    (c - (p + d * s)).norm()
}

/// Closest distance between segments `p1q1` and `p2q2`.
pub fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-15;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}

/// Line of sight test against free occluders only.
pub fn occluded_by(p: &Vec3, origin: &Vec3, occluders: &[Occluder]) -> bool {
    occluders.iter().any(|o| o.blocks(origin, p))
}

/// True iff the segment `sensor_origin → p` meets any occluder or arm link.
pub fn occluded(p: &Vec3, sensor_origin: &Vec3, scene: &Scene) -> bool {
    occluded_by(p, sensor_origin, &scene.occluders)
        || scene
            .arm_links
            .iter()
            .any(|c| segment_segment_distance(sensor_origin, p, &c.a, &c.b) < c.radius)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SensorId {
    EtoH(usize),
    EinH,
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensorId::EtoH(i) => write!(f, "etoh{i}"),
            SensorId::EinH => write!(f, "einh"),
        }
    }
}

/// One detection attempt. Invalid detections carry a zero position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub sensor_id: SensorId,
    pub position: Vec3,
    pub timestamp: f64,
    pub valid: bool,
}

impl Detection {
    pub fn invalid(sensor_id: SensorId, timestamp: f64) -> Self {
        Self {
            sensor_id,
            position: Vec3::zeros(),
            timestamp,
            valid: false,
        }
    }
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    // always draw three samples so streams stay aligned across noise settings
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vec3::new(x, y, z) * sigma
}

/// Fixed corner-mounted RGB-D sensor.
#[derive(Debug, Clone, PartialEq)]
pub struct EtoHSensor {
    pub id: usize,
    pub true_pose: RigidTransform,
    /// World-frame error `believed ∘ true⁻¹` left by extrinsic calibration.
    pub calibration_error: RigidTransform,
    /// Extra bias per meter of horizontal distance from the workcell center.
    pub bias_gain: Vec3,
    pub workcell_center: Vec3,
    pub frustum: FrustumSpec,
    pub noise_sigma: f64,
    pub detection_rate: f64,
}

impl EtoHSensor {
    pub fn ideal(
        id: usize,
        true_pose: RigidTransform,
        frustum: FrustumSpec,
        detection_rate: f64,
    ) -> Self {
        Self {
            id,
            true_pose,
            calibration_error: RigidTransform::identity(),
            bias_gain: Vec3::zeros(),
            workcell_center: Vec3::zeros(),
            frustum,
            noise_sigma: 0.0,
            detection_rate,
        }
    }

    pub fn believed_pose(&self) -> RigidTransform {
        self.calibration_error.compose(&self.true_pose)
    }

    pub fn origin(&self) -> Vec3 {
        self.true_pose.translation
    }

    pub fn sensor_id(&self) -> SensorId {
        SensorId::EtoH(self.id)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        self.frustum.validate()?;
        if !(self.noise_sigma >= 0.0) || !(self.detection_rate > 0.0) {
            return Err(SensorError::InvalidParameter(format!(
                "etoh{}: noise_sigma must be >= 0 and detection_rate > 0",
                self.id
            )));
        }
        Ok(())
    }

    /// Systematic world-frame error at `p` (calibration transform plus corner growth).
    pub fn bias_at(&self, p: &Vec3) -> Vec3 {
        let d = p - self.workcell_center;
        self.calibration_error.apply(p) - p + self.bias_gain * d.x.hypot(d.y)
    }
}

/// World-frame detection of the target center by an eye-to-hand sensor.
pub fn observe_etoh<R: Rng + ?Sized>(
    sensor: &EtoHSensor,
    scene: &Scene,
    t: f64,
    rng: &mut R,
) -> Detection {
    let noise = gaussian3(rng, sensor.noise_sigma);
    let c = scene.target.center(t);
    let eye = sensor.origin();
    let visible = in_frustum(&c, &sensor.true_pose, &sensor.frustum)
        && scene.target.shape.faces(&c, &eye)
        && !occluded(&c, &eye, scene);
    if !visible {
        return Detection::invalid(sensor.sensor_id(), t);
    }
    let d = c - sensor.workcell_center;
    let measured = sensor.calibration_error.apply(&c) + sensor.bias_gain * d.x.hypot(d.y);
    Detection {
        sensor_id: sensor.sensor_id(),
        position: measured + noise,
        timestamp: t,
        valid: true,
    }
}

/// Stereo sensor rigidly mounted on the tool.
#[derive(Debug, Clone, PartialEq)]
pub struct EinHSensor {
    /// Tool-to-camera transform; the camera looks along its `+z`.
    pub mount_transform: RigidTransform,
    pub frustum: FrustumSpec,
    /// Depth plane spacing; zero disables quantization.
    pub depth_quantum: f64,
    pub noise_sigma: f64,
    pub detection_rate: f64,
}

impl EinHSensor {
    pub fn camera_pose(&self, model: &ArmModel, q: &JointVector) -> RigidTransform {
        model.tool_transform(q).compose(&self.mount_transform)
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        self.frustum.validate()?;
        if !(self.depth_quantum >= 0.0)
            || !(self.noise_sigma >= 0.0)
            || !(self.detection_rate > 0.0)
        {
            return Err(SensorError::InvalidParameter(
                "einh: depth_quantum and noise_sigma must be >= 0, detection_rate > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Snaps a depth to the nearest multiple of `quantum` (identity for zero quantum).
pub fn quantize_depth(depth: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (depth / quantum).round() * quantum
    } else {
        depth
    }
}

/// Camera-frame detection by the arm-mounted stereo sensor at joint state `q`.
///
/// Only free occluders are tested: the camera looks forward from the flange,
/// away from the arm links.
pub fn observe_einh<R: Rng + ?Sized>(
    sensor: &EinHSensor,
    scene: &Scene,
    model: &ArmModel,
    q: &JointVector,
    t: f64,
    rng: &mut R,
) -> Detection {
    let noise = gaussian3(rng, sensor.noise_sigma);
    let cam = sensor.camera_pose(model, q);
    let c = scene.target.center(t);
    let local = cam.inverse().apply(&c);
    let visible = sensor.frustum.contains_local(&local)
        && scene.target.shape.faces(&c, &cam.translation)
        && !occluded_by(&c, &cam.translation, &scene.occluders);
    if !visible {
        return Detection::invalid(SensorId::EinH, t);
    }
    // depth is resolved by the disparity planes, noise only moves the blob laterally
    let p = Vec3::new(
        local.x + noise.x,
        local.y + noise.y,
        quantize_depth(local.z, sensor.depth_quantum),
    );
    Detection {
        sensor_id: SensorId::EinH,
        position: p,
        timestamp: t,
        valid: true,
    }
}
