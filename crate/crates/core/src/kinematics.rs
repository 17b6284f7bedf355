//! Forward, differential and inverse kinematics of the ceiling-mounted 6-DoF arm.
//!
//! Links follow the standard Denavit–Hartenberg convention
//! `Rz(θ + offset) · Tz(d) · Tx(a) · Rx(α)`. The tool point sits on the flange
//! `+z` axis, which is also the pointing axis reported as the planar
//! orientation of a [`Pose`].

use nalgebra::{Matrix3, Matrix6, SVector, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    rotation_log, wrap_angle, ConstraintBox, OrientationVec, Pose, RigidTransform, TransformSpec,
    Vec3,
};

pub const DOF: usize = 6;

/// Six joint angles in radians.
pub type JointVector = SVector<f64, DOF>;

/// Position tolerance the inverse solver guarantees on success (meters).
pub const IK_POSITION_TOL: f64 = 1e-4;
/// Yaw tolerance the inverse solver guarantees on success (radians).
pub const IK_YAW_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("goal {0:?} lies outside the constraint box")]
    OutOfWorkspace([f64; 3]),
    #[error("inverse kinematics did not converge (position residual {position:.3e} m, yaw residual {yaw:.3e} rad)")]
    NoConvergence { position: f64, yaw: f64 },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
}

/// One DH row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    pub theta_offset: f64,
}

impl DhRow {
    fn transform(&self, theta: f64) -> RigidTransform {
        let (st, ct) = (theta + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        RigidTransform {
            rotation: Matrix3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca),
            translation: Vec3::new(self.a * ct, self.a * st, self.d),
        }
    }
}

/// Serializable arm description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmParams {
    pub dh: [DhRow; DOF],
    /// World pose of the arm base; the default rolls the base by π for the ceiling mount.
    pub base: TransformSpec,
    /// Distance from the flange to the tool tip along the flange `+z` axis.
    pub tool_length: f64,
    pub joint_min: [f64; DOF],
    pub joint_max: [f64; DOF],
    pub max_velocity: [f64; DOF],
    pub max_acceleration: [f64; DOF],
    /// Radius of the capsules used to model links as occluders.
    pub link_radius: f64,
    pub home: [f64; DOF],
    pub ik: IkParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IkParams {
    pub damping: f64,
    pub step_clamp: f64,
    pub max_iterations: usize,
}

impl Default for IkParams {
    fn default() -> Self {
        Self {
            damping: 0.01,
            step_clamp: 0.2,
            max_iterations: 200,
        }
    }
}

/// Published UR10 link parameters.
pub fn ur10_dh() -> [DhRow; DOF] {
    use std::f64::consts::FRAC_PI_2;
    let row = |a, d, alpha| DhRow {
        a,
        d,
        alpha,
        theta_offset: 0.0,
    };
    [
        row(0.0, 0.1273, FRAC_PI_2),
        row(-0.612, 0.0, 0.0),
        row(-0.5723, 0.0, 0.0),
        row(0.0, 0.163941, FRAC_PI_2),
        row(0.0, 0.1157, -FRAC_PI_2),
        row(0.0, 0.0922, 0.0),
    ]
}

impl Default for ArmParams {
    fn default() -> Self {
        use std::f64::consts::{PI, TAU};
        Self {
            dh: ur10_dh(),
            base: TransformSpec {
                translation: [0.0, -0.7, 1.2],
                rpy: [PI, 0.0, 0.0],
            },
            tool_length: 0.35,
            joint_min: [-TAU; DOF],
            joint_max: [TAU; DOF],
            max_velocity: [1.0; DOF],
            max_acceleration: [2.0; DOF],
            link_radius: 0.05,
            home: [
                1.157081791,
                -1.701153141,
                2.358768227,
                2.483977577,
                -1.157081784,
                3.141592647,
            ],
            ik: IkParams::default(),
        }
    }
}

/// Immutable arm model.
#[derive(Debug, Clone)]
pub struct ArmModel {
    pub params: ArmParams,
    pub base_transform: RigidTransform,
    pub tool_offset: RigidTransform,
    /// World rotation of the tool frame at zero yaw: pointing `+y`, `+x` horizontal.
    pub nominal_tool_rotation: Matrix3<f64>,
    pub workspace: ConstraintBox,
}

/// Solver output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub q: JointVector,
    pub iterations: usize,
    pub position_residual: f64,
    pub yaw_residual: f64,
}

impl ArmModel {
    pub fn new(params: ArmParams, workspace: ConstraintBox) -> Result<Self, KinematicsError> {
        for j in 0..DOF {
            if params.joint_min[j] >= params.joint_max[j] {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {j} has min >= max"
                )));
            }
            if params.max_velocity[j] <= 0.0 || params.max_acceleration[j] <= 0.0 {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {j} velocity/acceleration bound must be positive"
                )));
            }
        }
        let base_transform = params.base.to_transform();
        let tool_offset = RigidTransform::from_translation(Vec3::new(0.0, 0.0, params.tool_length));
        let nominal_tool_rotation = Matrix3::from_columns(&[Vec3::x(), -Vec3::z(), Vec3::y()]);
        Ok(Self {
            params,
            base_transform,
            tool_offset,
            nominal_tool_rotation,
            workspace,
        })
    }

    pub fn home(&self) -> JointVector {
        JointVector::from(self.params.home)
    }

    pub fn max_velocity(&self) -> JointVector {
        JointVector::from(self.params.max_velocity)
    }

    pub fn max_acceleration(&self) -> JointVector {
        JointVector::from(self.params.max_acceleration)
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        (0..DOF).all(|j| q[j] >= self.params.joint_min[j] && q[j] <= self.params.joint_max[j])
    }

    /// World frames of the base and of each joint output, `frames[0]` is the base.
    pub fn link_frames(&self, q: &JointVector) -> [RigidTransform; DOF + 1] {
        let mut frames = [self.base_transform; DOF + 1];
        for j in 0..DOF {
            frames[j + 1] = frames[j].compose(&self.params.dh[j].transform(q[j]));
        }
        frames
    }

    pub fn flange_transform(&self, q: &JointVector) -> RigidTransform {
        self.link_frames(q)[DOF]
    }

    /// Full world pose of the tool tip frame.
    pub fn tool_transform(&self, q: &JointVector) -> RigidTransform {
        self.flange_transform(q).compose(&self.tool_offset)
    }

    /// Tool-tip pose reduced to position and planar pointing direction.
    pub fn forward_kinematics(&self, q: &JointVector) -> Pose {
        let t = self.tool_transform(q);
        let orientation = OrientationVec::from_direction(&t.axis(2)).unwrap_or_default();
        Pose::new(t.translation, orientation)
    }

    /// Link segments from the base through the flange, for occlusion tests.
    pub fn link_segments(&self, q: &JointVector) -> Vec<(Vec3, Vec3)> {
        let frames = self.link_frames(q);
        frames
            .windows(2)
            .map(|w| (w[0].translation, w[1].translation))
            .filter(|(a, b)| (a - b).norm() > 1e-9)
            .collect()
    }

    /// Geometric Jacobian at the tool tip; rows 0..3 linear, 3..6 angular (world frame).
    pub fn jacobian(&self, q: &JointVector) -> Matrix6<f64> {
        let frames = self.link_frames(q);
        let tip = frames[DOF].compose(&self.tool_offset).translation;
        let mut jac = Matrix6::zeros();
        for j in 0..DOF {
            let z = frames[j].axis(2);
            let o = frames[j].translation;
            let lin = z.cross(&(tip - o));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&z);
        }
        jac
    }

    /// World rotation the tool must take for a given yaw.
    pub fn goal_rotation(&self, yaw: f64) -> Matrix3<f64> {
        RigidTransform::rot_z(-yaw).rotation * self.nominal_tool_rotation
    }

    fn task_error(
        &self,
        q: &JointVector,
        goal_pos: &Vec3,
        goal_rot: &Matrix3<f64>,
    ) -> Vector6<f64> {
        let t = self.tool_transform(q);
        let dp = goal_pos - t.translation;
        let dr = rotation_log(&(goal_rot * t.rotation.transpose()));
        Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
    }

    fn residuals(&self, q: &JointVector, goal: &Pose) -> (f64, f64) {
        let p = self.forward_kinematics(q);
        let pos = (p.position - goal.position).norm();
        let yaw = wrap_angle(p.orientation.yaw() - goal.orientation.yaw()).abs();
        (pos, yaw)
    }

    /// Damped least-squares solve for a tip position and yaw, starting at `seed`.
    ///
    /// The tool keeps the nominal approach frame rotated by the goal yaw, which
    /// makes the 6×6 problem square; the seed selects the solution branch.
    pub fn inverse_kinematics(
        &self,
        goal: &Pose,
        seed: &JointVector,
    ) -> Result<IkSolution, KinematicsError> {
        if !self.workspace.contains(&goal.position) {
            return Err(KinematicsError::OutOfWorkspace(goal.position.into()));
        }
        let (p0, y0) = self.residuals(seed, goal);
        if p0 <= IK_POSITION_TOL && y0 <= IK_YAW_TOL && self.within_limits(seed) {
            return Ok(IkSolution {
                q: *seed,
                iterations: 0,
                position_residual: p0,
                yaw_residual: y0,
            });
        }
        let goal_rot = self.goal_rotation(goal.orientation.yaw());
        let ik = self.params.ik;
        let lo = JointVector::from(self.params.joint_min);
        let hi = JointVector::from(self.params.joint_max);

        // damping adapts: shrinks after an improving step, grows after a rejected one
        let mut lambda2 = ik.damping * ik.damping;
        let mut q = seed.zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
        let mut e = self.task_error(&q, &goal.position, &goal_rot);
        let mut norm = e.norm();
        let mut iterations = 0;
        for it in 1..=ik.max_iterations {
            iterations = it;
            if norm < 1e-10 {
                break;
            }
            let jac = self.jacobian(&q);
            let jjt = jac * jac.transpose() + Matrix6::identity() * lambda2;
            let Some(y) = jjt.cholesky().map(|c| c.solve(&e)) else {
                break;
            };
            let mut dq = jac.transpose() * y;
            let m = dq.amax();
            if m > ik.step_clamp {
                dq *= ik.step_clamp / m;
            }
            let trial = (q + dq).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
            let e_trial = self.task_error(&trial, &goal.position, &goal_rot);
            if e_trial.norm() < norm {
                q = trial;
                e = e_trial;
                norm = e.norm();
                lambda2 = (lambda2 * 0.25).max(1e-12);
            } else {
                lambda2 = (lambda2 * 4.0).max(1e-8);
                if lambda2 > 1e6 {
                    break;
                }
            }
        }
        let (pos, yaw) = self.residuals(&q, goal);
        if pos <= IK_POSITION_TOL && yaw <= IK_YAW_TOL {
            Ok(IkSolution {
                q,
                iterations,
                position_residual: pos,
                yaw_residual: yaw,
            })
        } else {
            Err(KinematicsError::NoConvergence { position: pos, yaw })
        }
    }
}

/// Robot state `[y, a, q]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub y: Vec3,
    pub a: OrientationVec,
    pub q: JointVector,
}

impl RobotState {
    pub fn from_joints(model: &ArmModel, q: JointVector) -> Self {
        let pose = model.forward_kinematics(&q);
        Self {
            y: pose.position,
            a: pose.orientation,
            q,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn model() -> ArmModel {
        ArmModel::new(ArmParams::default(), ConstraintBox::default()).unwrap()
    }

    #[test]
    fn zero_configuration_matches_hand_evaluated_chain() {
        // Base-frame flange position of the UR chain at q = 0, hand-evaluated:
        // (a2 + a3, -(d4 + d6), d1 - d5), flange z along base -y.
        let mut params = ArmParams::default();
        params.base = TransformSpec::identity();
        params.tool_length = 0.0;
        let m = ArmModel::new(params, ConstraintBox::default()).unwrap();
        let t = m.tool_transform(&JointVector::zeros());
        let expected = Vec3::new(-0.612 - 0.5723, -(0.163941 + 0.0922), 0.1273 - 0.1157);
        assert_abs_diff_eq!(t.translation, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(t.axis(2), -Vec3::y(), epsilon = 1e-12);
    }

    #[test]
    fn inverted_zero_configuration_points_at_operator() {
        let m = model();
        let t = m.tool_transform(&JointVector::zeros());
        assert_abs_diff_eq!(t.rotation, m.nominal_tool_rotation, epsilon = 1e-12);
        assert_abs_diff_eq!(
            m.forward_kinematics(&JointVector::zeros())
                .orientation
                .yaw(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn base_joint_rotation_preserves_axis_distance() {
        let m = model();
        let q = m.home();
        let mut q2 = q;
        q2[0] += PI;
        let axis_o = m.base_transform.translation;
        let axis = m.base_transform.axis(2);
        let radial = |p: Vec3| {
            let d = p - axis_o;
            (d - axis * d.dot(&axis)).norm()
        };
        let a = radial(m.forward_kinematics(&q).position);
        let b = radial(m.forward_kinematics(&q2).position);
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn forward_kinematics_is_2pi_periodic() {
        let m = model();
        let q = m.home();
        for j in 0..DOF {
            let mut q2 = q;
            q2[j] += 2.0 * PI;
            assert_abs_diff_eq!(
                m.forward_kinematics(&q).position,
                m.forward_kinematics(&q2).position,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn first_column_is_tangential() {
        let m = model();
        let q = m.home();
        let jac = m.jacobian(&q);
        let z0 = m.base_transform.axis(2);
        let tip = m.forward_kinematics(&q).position;
        let d = tip - m.base_transform.translation;
        let radial = d - z0 * d.dot(&z0);
        let col: Vec3 = jac.fixed_view::<3, 1>(0, 0).into_owned();
        assert_abs_diff_eq!(col.dot(&radial), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(col.dot(&z0), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn first_column_ignores_last_joint() {
        let m = model();
        let q = m.home();
        let mut q2 = q;
        q2[5] += 0.7;
        let a = m.jacobian(&q);
        let b = m.jacobian(&q2);
        assert_abs_diff_eq!(
            a.column(0).into_owned(),
            b.column(0).into_owned(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn jacobian_matches_forward_differences() {
        let m = model();
        let q = m.home();
        let jac = m.jacobian(&q);
        let h = 1e-6;
        for j in 0..DOF {
            let mut qp = q;
            qp[j] += h;
            let dp = (m.forward_kinematics(&qp).position - m.forward_kinematics(&q).position) / h;
            let col: Vec3 = jac.fixed_view::<3, 1>(0, j).into_owned();
            assert!((dp - col).amax() <= 1e-5, "joint {j}");
        }
    }

    #[test]
    fn ik_fixed_point_returns_seed() {
        let m = model();
        let q = m.home();
        let sol = m.inverse_kinematics(&m.forward_kinematics(&q), &q).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.q, q);
    }

    #[test]
    fn ik_recovers_small_perturbation() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seed = m.home();
        let mut q = seed;
        for j in 0..DOF {
            q[j] += rng.random_range(-0.05..0.05);
        }
        let goal = m.forward_kinematics(&q);
        let sol = m.inverse_kinematics(&goal, &seed).unwrap();
        assert!(sol.position_residual <= IK_POSITION_TOL);
        assert!(sol.yaw_residual <= IK_YAW_TOL);
        assert!(m.within_limits(&sol.q));
    }

    #[test]
    fn ik_rejects_goal_outside_box() {
        let m = model();
        let goal = Pose::new(Vec3::new(1.0, 0.0, 0.6), OrientationVec::default());
        assert!(matches!(
            m.inverse_kinematics(&goal, &m.home()),
            Err(KinematicsError::OutOfWorkspace(_))
        ));
    }

    #[test]
    fn invalid_limits_rejected() {
        let mut p = ArmParams::default();
        p.max_velocity[2] = 0.0;
        assert!(ArmModel::new(p, ConstraintBox::default()).is_err());
    }
}
