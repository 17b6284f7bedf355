//! Virtual-time servo loop: segment `k` executes plan `T_k` while `T_{k+1}`
//! is planned from the predicted end state of `T_k`.
//!
//! ```text
//!  preamble      segment 1            segment 2
//! |--plan T1--|--exec T1-----------|--exec T2---------|
//!             |--plan T2--|        |--plan T3--|
//!             ^ snapshot s_1       ^ snapshot s_2
//! ```
//!
//! A segment ends when both its execution and the concurrent planning are
//! done. Sensor ticks fall on fixed grids of the shared clock and see the arm
//! where the executing plan puts it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OrientationVec, Pose, Vec3};
use crate::kinematics::{ArmModel, JointVector, RobotState};
use crate::master::{update_mode, MasterState, ServoMode};
use crate::planner::{
    compute_goal_orientation, compute_goal_position, plan_segment, task_cost, GoalPose, PlanError,
    PlannerParams, SegmentPlan, Waystate,
};
use crate::rng::{stream, stream_rng, StreamRng};
use crate::sensors::{observe_einh, observe_etoh, Detection, EinHSensor, EtoHSensor, Scene};
use crate::tracking::{einh_to_global, EstimateSource, TargetEstimate, Tracker};

/// Monotone clock counting whole ticks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VirtualClock {
    ticks: u64,
    resolution: f64,
}

impl VirtualClock {
    pub fn new(resolution: f64) -> Self {
        assert!(resolution > 0.0, "clock resolution must be positive");
        Self {
            ticks: 0,
            resolution,
        }
    }

    pub fn now(&self) -> f64 {
        self.to_seconds(self.ticks)
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn to_ticks(&self, seconds: f64) -> u64 {
        (seconds / self.resolution).round().max(0.0) as u64
    }

    pub fn to_seconds(&self, ticks: u64) -> f64 {
        ticks as f64 * self.resolution
    }

    /// Moves to `ticks`; never goes backwards.
    pub fn advance_to(&mut self, ticks: u64) {
        self.ticks = self.ticks.max(ticks);
    }

    pub fn advance_by(&mut self, ticks: u64) {
        self.ticks += ticks;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopParams {
    /// Virtual time one planning call takes.
    pub plan_latency: f64,
    pub tick: f64,
    /// An estimate older than this many sensor periods is not used.
    pub stale_periods: f64,
}

impl Default for LoopParams {
    fn default() -> Self {
        Self {
            plan_latency: 0.03,
            tick: 0.001,
            stale_periods: 2.0,
        }
    }
}

/// When a goal counts as reached, and how long to try.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCondition {
    /// Signed tip-to-surface distance that counts as touching.
    pub threshold: f64,
    /// Consecutive converged segments required.
    pub consecutive: usize,
    pub timeout: f64,
}

impl Default for StopCondition {
    fn default() -> Self {
        Self {
            threshold: 0.005,
            consecutive: 2,
            timeout: 60.0,
        }
    }
}

/// True iff the tool tip is within `threshold` of the target surface.
pub fn convergence_check(tool: &Pose, scene: &Scene, t: f64, threshold: f64) -> bool {
    let c = scene.target.center(t);
    scene.target.shape.signed_distance(&c, &tool.position) <= threshold
}

/// Everything the loop needs that does not change while it runs.
#[derive(Debug, Clone)]
pub struct ServoSystem {
    pub model: ArmModel,
    pub etoh: Vec<EtoHSensor>,
    pub einh: EinHSensor,
    pub planner: PlannerParams,
    pub timing: LoopParams,
}

struct SensorStreams {
    etoh: Vec<StreamRng>,
    einh: StreamRng,
}

/// Mutable loop state carried across goals of one run.
pub struct LoopState {
    pub clock: VirtualClock,
    /// Arm configuration (at rest between segments).
    pub q: JointVector,
    pub tracker: Tracker,
    pub master: MasterState,
    pub last_a_star: OrientationVec,
    streams: SensorStreams,
    next_etoh: Vec<u64>,
    next_einh: u64,
}

impl LoopState {
    pub fn new(sys: &ServoSystem, q: JointVector, master: MasterState, seed: u64) -> Self {
        let clock = VirtualClock::new(sys.timing.tick);
        Self {
            clock,
            q,
            tracker: Tracker::new(),
            master,
            last_a_star: sys.model.forward_kinematics(&q).orientation,
            streams: SensorStreams {
                etoh: sys
                    .etoh
                    .iter()
                    .map(|s| stream_rng(seed, stream::ETOH_BASE + s.id as u64))
                    .collect(),
                einh: stream_rng(seed, stream::EINH),
            },
            next_etoh: vec![0; sys.etoh.len()],
            next_einh: 0,
        }
    }

    fn period_ticks(&self, rate: f64) -> u64 {
        self.clock.to_ticks(1.0 / rate).max(1)
    }

    /// Runs every sensor tick at or before `upto` (EtoH before EinH at equal times).
    fn process_ticks(
        &mut self,
        sys: &ServoSystem,
        scene: &mut Scene,
        upto: u64,
        arm: &dyn Fn(u64) -> JointVector,
        events: &mut Vec<LoopEvent>,
    ) {
        loop {
            let next_e = self.next_etoh.iter().copied().min().unwrap_or(u64::MAX);
            let tick = next_e.min(self.next_einh);
            if tick > upto {
                break;
            }
            let t = self.clock.to_seconds(tick);
            let q = arm(tick);
            scene.set_arm(&sys.model, &q);
            if next_e == tick {
                let mut detections: Vec<Detection> = Vec::new();
                for (i, s) in sys.etoh.iter().enumerate() {
                    if self.next_etoh[i] == tick {
                        detections.push(observe_etoh(s, scene, t, &mut self.streams.etoh[i]));
                        self.next_etoh[i] += self.period_ticks(s.detection_rate);
                    }
                }
                if let Some(est) = self.tracker.update_etoh(&detections, &sys.etoh, t) {
                    events.push(LoopEvent::Estimate(est));
                }
            }
            if self.next_einh == tick {
                let d = observe_einh(&sys.einh, scene, &sys.model, &q, t, &mut self.streams.einh);
                self.next_einh += self.period_ticks(sys.einh.detection_rate);
                if let Ok(est) = einh_to_global(&d, &q, &sys.einh, &sys.model) {
                    self.tracker.update_einh(est.clone());
                    events.push(LoopEvent::Estimate(est));
                }
                let seen = d.valid.then_some(d.position);
                let before = self.master.mode;
                self.master = update_mode(self.master, seen.as_ref(), &sys.einh.frustum);
                if self.master.mode != before {
                    events.push(LoopEvent::ModeSwitch {
                        t,
                        from: before,
                        to: self.master.mode,
                    });
                }
            }
        }
    }

    /// Runs the sensors with the arm at rest until the current mode has a
    /// fresh estimate or `max_wait` seconds have passed.
    pub fn acquire(
        &mut self,
        sys: &ServoSystem,
        scene: &mut Scene,
        max_wait: f64,
    ) -> Vec<LoopEvent> {
        let mut events = Vec::new();
        let deadline = self.clock.ticks() + self.clock.to_ticks(max_wait);
        let rest = self.q;
        loop {
            let now = self.clock.ticks();
            self.process_ticks(sys, scene, now, &|_| rest, &mut events);
            if self.snapshot(sys).is_some() || now >= deadline {
                return events;
            }
            self.clock.advance_by(1);
        }
    }

    /// Estimate used for planning under the current mode, if fresh enough.
    fn snapshot(&self, sys: &ServoSystem) -> Option<TargetEstimate> {
        let now = self.clock.now();
        let (source, rate) = match self.master.mode {
            ServoMode::EtoH => (
                EstimateSource::EtoH,
                sys.etoh
                    .iter()
                    .map(|s| s.detection_rate)
                    .fold(f64::INFINITY, f64::min),
            ),
            ServoMode::EinH => (EstimateSource::EinH, sys.einh.detection_rate),
        };
        let max_age = sys.timing.stale_periods / rate;
        self.tracker.fresh(source, now, max_age).cloned()
    }

    /// Plans the next segment from `start` toward the current snapshot.
    fn plan_next(&mut self, sys: &ServoSystem, start: &Waystate) -> Result<Pending, PlanError> {
        let estimate = self.snapshot(sys);
        let mode = self.master.mode;
        let tip = sys.model.forward_kinematics(&start.q);
        let goal = match &estimate {
            Some(est) => {
                let s = est.position;
                let bounds = &sys.model.workspace;
                let y_star = compute_goal_position(
                    &tip.position,
                    &s,
                    (s - tip.position).norm(),
                    &sys.planner,
                    bounds,
                );
                let a_star = compute_goal_orientation(
                    &tip.position,
                    &s,
                    self.last_a_star,
                    &sys.planner,
                    bounds,
                );
                GoalPose { y_star, a_star }
            }
            // stale sensing: hold position
            None => GoalPose {
                y_star: tip.position,
                a_star: self.last_a_star,
            },
        };
        let (plan, goal) = plan_reachable(start, &tip.position, &goal, self.last_a_star, sys)?;
        self.last_a_star = goal.a_star;
        Ok(Pending {
            plan,
            mode,
            estimate,
        })
    }
}

/// Plans toward `goal`, falling back when it is out of reach.
///
/// Near the reach boundary the aimed yaw, then the full step, can be
/// unreachable: the previous and the neutral yaw are tried next, then shorter
/// steps along the same line. The first IK error is returned if all fail.
fn plan_reachable(
    start: &Waystate,
    tip: &Vec3,
    goal: &GoalPose,
    previous: OrientationVec,
    sys: &ServoSystem,
) -> Result<(SegmentPlan, GoalPose), PlanError> {
    let mut yaws = vec![goal.a_star];
    for a in [previous, OrientationVec::from_yaw(0.0)] {
        if !yaws.contains(&a) {
            yaws.push(a);
        }
    }
    let mut first_err = None;
    for f in [1.0, 0.5, 0.25, 0.125] {
        let y_star = if f == 1.0 {
            goal.y_star
        } else {
            tip + (goal.y_star - tip) * f
        };
        for &a_star in &yaws {
            let g = GoalPose { y_star, a_star };
            match plan_segment(start, &g, &sys.model, &sys.planner) {
                Ok(plan) => return Ok((plan, g)),
                Err(PlanError::IkFailure(e)) => {
                    first_err.get_or_insert(e);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Err(PlanError::IkFailure(
        first_err.expect("at least one attempt"),
    ))
}

struct Pending {
    plan: SegmentPlan,
    mode: ServoMode,
    estimate: Option<TargetEstimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    pub k: usize,
    pub plan: SegmentPlan,
    pub plan_latency: f64,
    pub exec_duration: f64,
    /// Segment wall on the virtual clock: `[t_start, t_end]`.
    pub t_start: f64,
    pub t_end: f64,
    pub mode_at_plan: ServoMode,
    /// `None` when the estimate was stale and the plan holds position.
    pub target_estimate_used: Option<TargetEstimate>,
    pub tool_end: Pose,
    /// Signed tip-to-surface distance at `t_end`.
    pub signed_distance: f64,
    /// Task cost of the start state against this plan's goal.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoopEvent {
    Estimate(TargetEstimate),
    ModeSwitch {
        t: f64,
        from: ServoMode,
        to: ServoMode,
    },
    Segment(Box<SegmentRecord>),
}

impl LoopEvent {
    pub fn time(&self) -> f64 {
        match self {
            LoopEvent::Estimate(e) => e.timestamp,
            LoopEvent::ModeSwitch { t, .. } => *t,
            LoopEvent::Segment(s) => s.t_end,
        }
    }
}

/// Result of servoing to one goal.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutput {
    pub t_start: f64,
    pub events: Vec<LoopEvent>,
    pub converged: bool,
    pub final_q: JointVector,
}

impl LoopOutput {
    pub fn segments(&self) -> impl Iterator<Item = &SegmentRecord> {
        self.events.iter().filter_map(|e| match e {
            LoopEvent::Segment(s) => Some(s.as_ref()),
            _ => None,
        })
    }

    /// Completed segments.
    pub fn iterations(&self) -> usize {
        self.segments().count()
    }

    pub fn last_segment(&self) -> Option<&SegmentRecord> {
        self.segments().last()
    }

    /// Time from goal start to the end of the last segment.
    pub fn elapsed(&self) -> f64 {
        self.last_segment().map_or(0.0, |s| s.t_end - self.t_start)
    }
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("goal not reached within {timeout} s")]
    Timeout {
        timeout: f64,
        output: Box<LoopOutput>,
    },
    #[error("planning failed: {error}")]
    Plan {
        error: PlanError,
        output: Box<LoopOutput>,
    },
}

impl ExecutorError {
    pub fn output(&self) -> &LoopOutput {
        match self {
            ExecutorError::Timeout { output, .. } | ExecutorError::Plan { output, .. } => output,
        }
    }
}

/// Servos toward the scene target until `stop` is met.
///
/// The arm starts at rest at `state.q`; on return it is at rest at the end of
/// the last executed segment. Convergence only counts once the target has
/// reached the end of its path.
pub fn run_loop(
    sys: &ServoSystem,
    scene: &mut Scene,
    state: &mut LoopState,
    stop: &StopCondition,
) -> Result<LoopOutput, ExecutorError> {
    let goal_start = state.clock.ticks();
    let latency = state.clock.to_ticks(sys.timing.plan_latency);
    let timeout = state.clock.to_ticks(stop.timeout);
    let arrival = scene.target.path.arrival_time();
    let mut out = LoopOutput {
        t_start: state.clock.now(),
        events: Vec::new(),
        converged: false,
        final_q: state.q,
    };

    let rest = state.q;
    state.process_ticks(sys, scene, goal_start, &|_| rest, &mut out.events);
    let mut pending = match state.plan_next(sys, &Waystate::at_rest(state.q)) {
        Ok(p) => p,
        Err(error) => {
            return Err(ExecutorError::Plan {
                error,
                output: Box::new(out),
            })
        }
    };
    state.clock.advance_by(latency);

    let mut streak = 0;
    for k in 1.. {
        let Pending {
            mut plan,
            mode,
            estimate,
        } = pending;
        let t0 = state.clock.ticks();
        plan.schedule(k, state.clock.now());
        let rest = state.q;
        state.process_ticks(sys, scene, t0, &|_| rest, &mut out.events);

        let end = Waystate {
            t: 0.0,
            ..*plan.last()
        };
        let next = state.plan_next(sys, &end);

        let exec = state.clock.to_ticks(plan.duration());
        let t_end = t0 + exec.max(latency);
        let clock = state.clock;
        state.process_ticks(
            sys,
            scene,
            t_end - 1,
            &|tick| plan.sample(clock.to_seconds(tick - t0)).q,
            &mut out.events,
        );
        state.clock.advance_to(t_end);
        let start_state = RobotState::from_joints(&sys.model, plan.first().q);
        let cost = task_cost(&start_state, &plan.goal, &plan.q_star, &sys.planner.weights);
        state.q = plan.last().q;
        out.final_q = state.q;

        let now = state.clock.now();
        let tool_end = sys.model.forward_kinematics(&state.q);
        let center = scene.target.center(now);
        let signed_distance = scene
            .target
            .shape
            .signed_distance(&center, &tool_end.position);
        out.events.push(LoopEvent::Segment(Box::new(SegmentRecord {
            k,
            plan,
            plan_latency: sys.timing.plan_latency,
            exec_duration: state.clock.to_seconds(exec),
            t_start: state.clock.to_seconds(t0),
            t_end: now,
            mode_at_plan: mode,
            target_estimate_used: estimate,
            tool_end,
            signed_distance,
            cost,
        })));

        pending = match next {
            Ok(p) => p,
            Err(error) => {
                return Err(ExecutorError::Plan {
                    error,
                    output: Box::new(out),
                })
            }
        };

        let arrived = now >= arrival;
        if arrived && convergence_check(&tool_end, scene, now, stop.threshold) {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= stop.consecutive {
            out.converged = true;
            return Ok(out);
        }
        if t_end - goal_start > timeout {
            return Err(ExecutorError::Timeout {
                timeout: stop.timeout,
                output: Box::new(out),
            });
        }
    }
    unreachable!("segment loop only exits by returning")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConstraintBox, RigidTransform, Vec3};
    use crate::kinematics::ArmParams;
    use crate::sensors::{FrustumSpec, Target, TargetPath, TargetShape};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_4;

    pub(crate) fn ideal_system() -> ServoSystem {
        let model = ArmModel::new(ArmParams::default(), ConstraintBox::default()).unwrap();
        let frustum = FrustumSpec {
            fov: 70f64.to_radians(),
            near: 0.5,
            far: 4.5,
        };
        let look = Vec3::new(0.0, 0.0, 0.5);
        let etoh = [(1.2, -1.2), (-1.2, -1.2), (1.2, 1.2), (-1.2, 1.2)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let pose = RigidTransform::look_at(Vec3::new(x, y, 1.6), look).unwrap();
                EtoHSensor::ideal(i, pose, frustum, 5.0)
            })
            .collect();
        let einh = EinHSensor {
            mount_transform: RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.3)),
            frustum: FrustumSpec::einh_default(),
            depth_quantum: 0.0,
            noise_sigma: 0.0,
            detection_rate: 10.0,
        };
        ServoSystem {
            model,
            etoh,
            einh,
            planner: PlannerParams::default(),
            timing: LoopParams::default(),
        }
    }

    fn ball_at(p: Vec3) -> Scene {
        Scene::new(
            Target {
                shape: TargetShape::Sphere { radius: 0.01 },
                path: TargetPath::fixed(p),
            },
            vec![],
        )
    }

    #[test]
    fn reachable_goal_is_planned_as_given() {
        let sys = ideal_system();
        let start = Waystate::at_rest(sys.model.home());
        let tip = sys.model.forward_kinematics(&start.q).position;
        let goal = GoalPose {
            y_star: tip + Vec3::new(0.1, 0.05, 0.0),
            a_star: OrientationVec::from_yaw(0.3),
        };
        let (plan, used) =
            plan_reachable(&start, &tip, &goal, OrientationVec::default(), &sys).unwrap();
        assert_eq!(used, goal);
        assert_eq!(
            plan.q_star,
            plan_segment(&start, &goal, &sys.model, &sys.planner)
                .unwrap()
                .q_star
        );
    }

    #[test]
    fn unreachable_yaw_falls_back() {
        let sys = ideal_system();
        let near = Pose::new(Vec3::new(-0.4, 0.3, 0.6), OrientationVec::from_yaw(0.0));
        let q = sys
            .model
            .inverse_kinematics(&near, &sys.model.home())
            .unwrap()
            .q;
        let start = Waystate::at_rest(q);
        let tip = sys.model.forward_kinematics(&q).position;
        // wrist would have to sit beyond the arm's reach
        let goal = GoalPose {
            y_star: Vec3::new(-0.5, 0.4, 0.55),
            a_star: OrientationVec::from_yaw(FRAC_PI_4),
        };
        assert!(matches!(
            plan_segment(&start, &goal, &sys.model, &sys.planner),
            Err(PlanError::IkFailure(_))
        ));
        let (plan, used) = plan_reachable(&start, &tip, &goal, near.orientation, &sys).unwrap();
        assert_ne!(used.a_star, goal.a_star);
        let end = sys.model.forward_kinematics(&plan.q_star);
        assert!((end.position - used.y_star).norm() < 1e-4);
    }

    #[test]
    fn acquire_waits_for_first_estimate() {
        let sys = ideal_system();
        let home = sys.model.home();
        let mut scene = ball_at(Vec3::new(0.1, 0.45, 0.65));
        let mut state = LoopState::new(&sys, home, MasterState::pinned_etoh(), 3);
        state.clock.advance_to(77);
        let events = state.acquire(&sys, &mut scene, 1.0);
        assert!(events.iter().any(|e| matches!(e, LoopEvent::Estimate(_))));
        assert!(state.snapshot(&sys).is_some());
        assert!(state.clock.now() <= 0.077 + 0.2 + 1e-9);
        assert_eq!(state.q, home);
    }

    #[test]
    fn acquire_gives_up_after_max_wait() {
        let sys = ideal_system();
        // behind every corner sensor
        let mut scene = ball_at(Vec3::new(0.0, 0.0, 5.0));
        let mut state = LoopState::new(&sys, sys.model.home(), MasterState::pinned_etoh(), 3);
        state.acquire(&sys, &mut scene, 0.5);
        assert!(state.snapshot(&sys).is_none());
        assert_abs_diff_eq!(state.clock.now(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn clock_is_monotone() {
        let mut c = VirtualClock::new(0.001);
        c.advance_to(30);
        c.advance_to(10);
        assert_eq!(c.ticks(), 30);
        assert_abs_diff_eq!(c.now(), 0.03, epsilon = 1e-15);
        assert_eq!(c.to_ticks(0.3), 300);
    }

    #[test]
    fn convergence_examples() {
        let scene = ball_at(Vec3::new(0.0, 0.3, 0.7));
        let r = 0.01;
        let tip = |d: f64| Pose::new(Vec3::new(0.0, 0.3 - d, 0.7), OrientationVec::default());
        assert!(convergence_check(&tip(r), &scene, 0.0, 0.005));
        assert!(convergence_check(&tip(r + 0.004), &scene, 0.0, 0.005));
        assert!(!convergence_check(&tip(r + 0.006), &scene, 0.0, 0.005));
    }

    #[test]
    fn contraction_with_perfect_sensing() {
        let sys = ideal_system();
        let home = sys.model.home();
        let start = sys.model.forward_kinematics(&home).position;
        let target = start + Vec3::new(0.0, 0.6, 0.0);
        let mut scene = ball_at(target);
        let mut state = LoopState::new(&sys, home, MasterState::pinned_etoh(), 1);
        let out = run_loop(&sys, &mut scene, &mut state, &StopCondition::default()).unwrap();
        assert!(out.converged);
        let d: Vec<f64> = out
            .segments()
            .map(|s| (s.tool_end.position - target).norm())
            .collect();
        for (k, dk) in d.iter().take(3).enumerate() {
            assert_abs_diff_eq!(*dk, 0.6 * 0.2f64.powi(k as i32 + 1), epsilon = 1e-3);
        }
        assert!(d[3] <= 1e-4);
    }

    #[test]
    fn segment_duration_follows_the_slower_of_plan_and_exec() {
        let mut sys = ideal_system();
        let home = sys.model.home();
        let target = sys.model.forward_kinematics(&home).position + Vec3::new(0.0, 0.3, 0.0);
        for latency in [0.03, 0.5] {
            sys.timing.plan_latency = latency;
            let mut scene = ball_at(target);
            let mut state = LoopState::new(&sys, home, MasterState::pinned_etoh(), 1);
            let out = run_loop(&sys, &mut scene, &mut state, &StopCondition::default()).unwrap();
            for s in out.segments() {
                assert_abs_diff_eq!(
                    s.t_end - s.t_start,
                    s.exec_duration.max(latency),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn consecutive_plans_share_boundary_state() {
        let sys = ideal_system();
        let home = sys.model.home();
        let target = sys.model.forward_kinematics(&home).position + Vec3::new(0.2, 0.3, -0.1);
        let mut scene = ball_at(target);
        let mut state = LoopState::new(&sys, home, MasterState::new(0.05), 3);
        let out = run_loop(&sys, &mut scene, &mut state, &StopCondition::default()).unwrap();
        let segs: Vec<_> = out.segments().collect();
        for w in segs.windows(2) {
            assert!(w[1].plan.first().same_state(w[0].plan.last()));
            assert_eq!(w[1].t_start, w[0].t_end);
        }
        for s in &segs {
            if let Some(e) = &s.target_estimate_used {
                // planned one segment earlier
                assert!(e.timestamp <= s.t_start);
            }
        }
    }

    #[test]
    fn unreachable_sensing_times_out() {
        let sys = ideal_system();
        let home = sys.model.home();
        // outside every frustum: the arm holds and the goal times out
        let mut scene = ball_at(Vec3::new(0.0, 0.0, 5.0));
        let mut state = LoopState::new(&sys, home, MasterState::pinned_etoh(), 1);
        let stop = StopCondition {
            timeout: 2.0,
            ..StopCondition::default()
        };
        let err = run_loop(&sys, &mut scene, &mut state, &stop).unwrap_err();
        assert!(matches!(err, ExecutorError::Timeout { .. }));
        assert!(err
            .output()
            .segments()
            .all(|s| s.target_estimate_used.is_none()));
        assert_eq!(err.output().final_q, home);
    }
}
