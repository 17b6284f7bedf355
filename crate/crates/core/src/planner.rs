//! Per-segment goal computation, task cost, and joint-space trajectory
//! generation with a synchronized trapezoidal velocity profile.
//!
//! The goal position moves a discounted fraction `α` of the way from the
//! current tip position to the last target estimate,
//! `y* = y₀ + α·(s − y₀)`, with `α` raised to 1 inside the near band. The
//! goal yaw points from the tip toward the target and is clamped to the
//! constraint box.

use nalgebra::SVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{yaw_toward, ConstraintBox, OrientationVec, Pose, Vec3};
use crate::kinematics::{ArmModel, JointVector, KinematicsError, RobotState, DOF};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("inverse kinematics failed: {0}")]
    IkFailure(#[from] KinematicsError),
    #[error("planned trajectory violates limits: {0}")]
    LimitViolation(String),
    #[error("invalid planner parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerWeights {
    pub w1: [f64; 3],
    pub w2: [f64; 3],
    pub c: [f64; DOF],
}

impl Default for PlannerWeights {
    fn default() -> Self {
        Self {
            w1: [10.0; 3],
            w2: [1.0; 3],
            c: [0.1; DOF],
        }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.w1.iter().chain(&self.w2).any(|w| !(*w > 0.0))
            || self.c.iter().any(|w| !(*w >= 0.0))
        {
            return Err(PlanError::InvalidParams(
                "W1, W2 must be > 0 and C >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerParams {
    /// Discount applied to the tip-to-target displacement.
    pub alpha: f64,
    /// Discount used once the target is closer than `near_distance`.
    pub near_alpha: f64,
    pub near_distance: f64,
    pub weights: PlannerWeights,
    /// Task-space spacing between interpolated joint waypoints.
    pub waypoint_spacing: f64,
    /// Plan durations are whole multiples of this.
    pub timing_quantum: f64,
    /// Maximum spacing between emitted waystates.
    pub waystate_interval: f64,
    /// Below this horizontal tip-to-target distance the previous goal yaw is kept.
    pub yaw_deadband: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            near_alpha: 1.0,
            near_distance: 0.02,
            weights: PlannerWeights::default(),
            waypoint_spacing: 0.05,
            timing_quantum: 0.01,
            waystate_interval: 0.05,
            yaw_deadband: 0.05,
        }
    }
}

impl PlannerParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        self.weights.validate()?;
        let ok = self.alpha > 0.0
            && self.alpha <= 1.0
            && self.near_alpha > 0.0
            && self.near_alpha <= 1.0
            && self.near_distance >= 0.0
            && self.waypoint_spacing > 0.0
            && self.timing_quantum > 0.0
            && self.waystate_interval > 0.0
            && self.yaw_deadband >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(PlanError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalPose {
    pub y_star: Vec3,
    pub a_star: OrientationVec,
}

impl GoalPose {
    pub fn as_pose(&self) -> Pose {
        Pose::new(self.y_star, self.a_star)
    }
}

/// Discounted step toward the target, clamped into the box.
pub fn compute_goal_position(
    y0: &Vec3,
    s_prev: &Vec3,
    distance_to_target: f64,
    params: &PlannerParams,
    bounds: &ConstraintBox,
) -> Vec3 {
    let alpha = if distance_to_target < params.near_distance {
        params.near_alpha
    } else {
        params.alpha
    };
    bounds.clamp(&(y0 + (s_prev - y0) * alpha))
}

/// Yaw toward the target clamped to the box, or `previous` when the
/// horizontal offset is inside the dead band (or degenerate).
pub fn compute_goal_orientation(
    y0: &Vec3,
    s_prev: &Vec3,
    previous: OrientationVec,
    params: &PlannerParams,
    bounds: &ConstraintBox,
) -> OrientationVec {
    let d = s_prev - y0;
    if d.x.hypot(d.y) < params.yaw_deadband {
        return previous;
    }
    match yaw_toward(y0, s_prev) {
        Ok(yaw) => OrientationVec::from_yaw(bounds.clamp_yaw(yaw)),
        Err(_) => previous,
    }
}

fn weighted_sq<const N: usize>(d: &SVector<f64, N>, w: &[f64; N]) -> f64 {
    d.iter().zip(w).map(|(x, w)| w * x * x).sum()
}

/// `‖y*−y‖²_W1 + ‖a*−a‖²_W2 + ‖q*−q‖²_C` with diagonal weights.
pub fn task_cost(r: &RobotState, goal: &GoalPose, q_star: &JointVector, w: &PlannerWeights) -> f64 {
    let dy = goal.y_star - r.y;
    let da = goal.a_star.as_vec3() - r.a.as_vec3();
    let dq = q_star - r.q;
    weighted_sq(&dy, &w.w1) + weighted_sq(&da, &w.w2) + weighted_sq(&dq, &w.c)
}

/// Joint-space trajectory sample `Θ = [q, q̇, q̈]` at time `t` (seconds from plan start).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waystate {
    pub t: f64,
    pub q: JointVector,
    pub q_dot: JointVector,
    pub q_ddot: JointVector,
}

impl Waystate {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            t: 0.0,
            q,
            q_dot: JointVector::zeros(),
            q_ddot: JointVector::zeros(),
        }
    }

    /// Same kinematic state ignoring time stamps.
    pub fn same_state(&self, other: &Waystate) -> bool {
        self.q == other.q && self.q_dot == other.q_dot && self.q_ddot == other.q_ddot
    }
}

/// Rest-to-rest trapezoidal profile of the path parameter `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    pub accel: f64,
    pub peak_velocity: f64,
    pub t_accel: f64,
    pub t_cruise: f64,
    pub duration: f64,
}

impl TrapezoidProfile {
    /// Fastest profile under `v_max`, `a_max`, stretched to a whole number of `quantum`s.
    pub fn new(v_max: f64, a_max: f64, quantum: f64) -> Self {
        if !v_max.is_finite() || !a_max.is_finite() {
            // zero-length motion
            return Self {
                accel: 0.0,
                peak_velocity: 0.0,
                t_accel: 0.0,
                t_cruise: quantum,
                duration: quantum,
            };
        }
        let (t_accel, t_cruise, v) = if v_max * v_max / a_max >= 1.0 {
            let ta = (1.0 / a_max).sqrt();
            (ta, 0.0, a_max * ta)
        } else {
            let ta = v_max / a_max;
            (ta, (1.0 - v_max * ta) / v_max, v_max)
        };
        let raw = 2.0 * t_accel + t_cruise;
        let duration = ((raw / quantum) - 1e-9).ceil().max(1.0) * quantum;
        // stretching time by k scales velocity by 1/k and acceleration by 1/k²
        let k = duration / raw;
        let v = v / k;
        let ta = t_accel * k;
        let tc = t_cruise * k;
        Self {
            accel: v / ta,
            peak_velocity: v,
            t_accel: ta,
            t_cruise: tc,
            duration,
        }
    }

    /// `(s, ṡ, s̈)` at time `t`; `s̈` is the right-hand limit.
    pub fn sample(&self, t: f64) -> (f64, f64, f64) {
        if self.peak_velocity == 0.0 {
            return (if t >= self.duration { 1.0 } else { 0.0 }, 0.0, 0.0);
        }
        let t = t.clamp(0.0, self.duration);
        let (a, v, ta, tc) = (self.accel, self.peak_velocity, self.t_accel, self.t_cruise);
        let s_acc = 0.5 * a * ta * ta;
        if t < ta {
            (0.5 * a * t * t, a * t, a)
        } else if t < ta + tc {
            (s_acc + v * (t - ta), v, 0.0)
        } else if t < self.duration {
            let r = self.duration - t;
            (1.0 - 0.5 * a * r * r, a * r, -a)
        } else {
            (1.0, 0.0, 0.0)
        }
    }

    /// Time at which the path parameter reaches `s`.
    pub fn time_at(&self, s: f64) -> f64 {
        if self.peak_velocity == 0.0 {
            return if s <= 0.0 { 0.0 } else { self.duration };
        }
        let s = s.clamp(0.0, 1.0);
        let (a, v, ta) = (self.accel, self.peak_velocity, self.t_accel);
        let s_acc = 0.5 * a * ta * ta;
        if s <= s_acc {
            (2.0 * s / a).sqrt()
        } else if s <= 1.0 - s_acc {
            ta + (s - s_acc) / v
        } else {
            self.duration - (2.0 * (1.0 - s) / a).sqrt()
        }
    }

    fn phase_boundaries(&self) -> Vec<f64> {
        if self.peak_velocity == 0.0 {
            return vec![];
        }
        vec![self.t_accel, self.t_accel + self.t_cruise]
    }
}

/// Timed joint-space trajectory for one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPlan {
    pub k: usize,
    pub waystates: Vec<Waystate>,
    /// Absolute start time, set by the executor.
    pub t0: f64,
    pub te: f64,
    pub goal: GoalPose,
    pub q_star: JointVector,
    /// Number of joint-space waypoints the path was interpolated through.
    pub waypoint_count: usize,
    start: JointVector,
    profile: TrapezoidProfile,
}

impl SegmentPlan {
    pub fn duration(&self) -> f64 {
        self.profile.duration
    }

    pub fn profile(&self) -> &TrapezoidProfile {
        &self.profile
    }

    pub fn first(&self) -> &Waystate {
        &self.waystates[0]
    }

    pub fn last(&self) -> &Waystate {
        &self.waystates[self.waystates.len() - 1]
    }

    /// Places the plan on the absolute time line.
    pub fn schedule(&mut self, k: usize, t0: f64) {
        self.k = k;
        self.t0 = t0;
        self.te = t0 + self.profile.duration;
    }

    /// Exact state at relative time `t` (clamped to the plan).
    pub fn sample(&self, t: f64) -> Waystate {
        let (s, sd, sdd) = self.profile.sample(t);
        let delta = self.q_star - self.start;
        let at_end = t >= self.profile.duration;
        let q = if at_end {
            self.q_star
        } else {
            self.start + delta * s
        };
        let (q_dot, q_ddot) = if t <= 0.0 || at_end {
            (JointVector::zeros(), JointVector::zeros())
        } else {
            (delta * sd, delta * sdd)
        };
        Waystate {
            t: t.clamp(0.0, self.profile.duration),
            q,
            q_dot,
            q_ddot,
        }
    }

    /// Checks joint, velocity and acceleration limits plus the `q̇ ≈ Δq/Δt`
    /// consistency of consecutive waystates (trapezoid rule, 5 %).
    pub fn check_limits(&self, model: &ArmModel) -> Result<(), PlanError> {
        let vmax = model.max_velocity();
        let amax = model.max_acceleration();
        let tol = 1e-9;
        for (i, w) in self.waystates.iter().enumerate() {
            if !model.within_limits(&w.q) {
                return Err(PlanError::LimitViolation(format!(
                    "waystate {i} outside joint limits"
                )));
            }
            for j in 0..DOF {
                if w.q_dot[j].abs() > vmax[j] * (1.0 + tol) {
                    return Err(PlanError::LimitViolation(format!(
                        "waystate {i} joint {j} velocity {}",
                        w.q_dot[j]
                    )));
                }
                if w.q_ddot[j].abs() > amax[j] * (1.0 + tol) {
                    return Err(PlanError::LimitViolation(format!(
                        "waystate {i} joint {j} acceleration {}",
                        w.q_ddot[j]
                    )));
                }
            }
        }
        for (i, pair) in self.waystates.windows(2).enumerate() {
            let (a, b) = (&pair[0], &pair[1]);
            let dt = b.t - a.t;
            if dt < 0.0 {
                return Err(PlanError::LimitViolation(format!(
                    "waystates {i},{} out of order",
                    i + 1
                )));
            }
            let dq = b.q - a.q;
            let predicted = (a.q_dot + b.q_dot) * (dt / 2.0);
            let scale = dq.amax().max(1e-9);
            if (dq - predicted).amax() > 0.05 * scale {
                return Err(PlanError::LimitViolation(format!(
                    "waystates {i},{} inconsistent",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Plans one segment from `start` (at rest) to `goal`.
pub fn plan_segment(
    start: &Waystate,
    goal: &GoalPose,
    model: &ArmModel,
    params: &PlannerParams,
) -> Result<SegmentPlan, PlanError> {
    // a seed stuck near the reach boundary can miss a reachable goal; retry from home
    let pose = goal.as_pose();
    let sol = match model.inverse_kinematics(&pose, &start.q) {
        Ok(s) => s,
        Err(e) => model
            .inverse_kinematics(&pose, &model.home())
            .map_err(|_| e)?,
    };
    let q_star = sol.q;
    let delta = q_star - start.q;

    let start_tip = model.forward_kinematics(&start.q).position;
    let distance = (goal.y_star - start_tip).norm();
    let waypoint_count = ((distance / params.waypoint_spacing) - 1e-9)
        .ceil()
        .max(2.0) as usize;

    let vmax = model.max_velocity();
    let amax = model.max_acceleration();
    let mut s_vel = f64::INFINITY;
    let mut s_acc = f64::INFINITY;
    for j in 0..DOF {
        let d = delta[j].abs();
        if d > 0.0 {
            s_vel = s_vel.min(vmax[j] / d);
            s_acc = s_acc.min(amax[j] / d);
        }
    }
    let profile = TrapezoidProfile::new(s_vel, s_acc, params.timing_quantum);

    let mut times: Vec<f64> = (0..waypoint_count)
        .map(|i| profile.time_at(i as f64 / (waypoint_count - 1) as f64))
        .collect();
    times.extend(profile.phase_boundaries());
    let grid = (profile.duration / params.waystate_interval).floor() as usize;
    times.extend((1..=grid).map(|i| i as f64 * params.waystate_interval));
    times.push(0.0);
    times.push(profile.duration);
    times.retain(|t| *t >= 0.0 && *t <= profile.duration);
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut plan = SegmentPlan {
        k: 0,
        waystates: Vec::new(),
        t0: 0.0,
        te: profile.duration,
        goal: *goal,
        q_star,
        waypoint_count,
        start: start.q,
        profile,
    };
    let mut waystates: Vec<Waystate> = times.iter().map(|&t| plan.sample(t)).collect();
    // the boundary waystate is the predecessor's final state, bit for bit
    waystates[0] = Waystate { t: 0.0, ..*start };
    plan.waystates = waystates;
    plan.check_limits(model)?;
    Ok(plan)
}
