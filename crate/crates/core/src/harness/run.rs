//! Scenario execution and the measurement protocols.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    fit_sphere_center, procrustes_align, CorrespondenceSet, RegistrationReport,
};
use crate::executor::{run_loop, ExecutorError, LoopEvent, LoopState, SegmentRecord, ServoSystem};
use crate::geometry::{OrientationVec, Pose, RigidTransform, Vec3};
use crate::kinematics::JointVector;
use crate::master::{MasterState, ServoMode};
use crate::rng::{derive_seed, stream, stream_rng};
use crate::sensors::{in_frustum, observe_einh, Scene, SensorId, Target, TargetPath, TargetShape};
use crate::stats::{mean, median};
use crate::tracking::Tracker;

use super::config::WorkcellConfig;
use super::scenario::{RunMode, Scenario, Script};
use super::trace::{
    EstimateLine, GoalEnd, GoalOutcome, ModeLine, RunTrace, SegmentLine, TraceHeader, TraceRecord,
    TRACE_FORMAT,
};
use super::HarnessError;

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn arr6(q: &JointVector) -> [f64; 6] {
    [q[0], q[1], q[2], q[3], q[4], q[5]]
}

fn segment_line(goal: usize, s: &SegmentRecord) -> SegmentLine {
    let mut peak_v = [0.0f64; 6];
    let mut peak_a = [0.0f64; 6];
    for w in &s.plan.waystates {
        for j in 0..6 {
            peak_v[j] = peak_v[j].max(w.q_dot[j].abs());
            peak_a[j] = peak_a[j].max(w.q_ddot[j].abs());
        }
    }
    SegmentLine {
        goal,
        k: s.k,
        t_start: s.t_start,
        t_end: s.t_end,
        plan_latency: s.plan_latency,
        exec_duration: s.exec_duration,
        mode: s.mode_at_plan,
        estimate: s.target_estimate_used.as_ref().map(|e| arr3(&e.position)),
        estimate_t: s.target_estimate_used.as_ref().map(|e| e.timestamp),
        goal_position: arr3(&s.plan.goal.y_star),
        goal_yaw: s.plan.goal.a_star.yaw(),
        q_start: arr6(&s.plan.first().q),
        q_end: arr6(&s.plan.last().q),
        waypoints: s.plan.waypoint_count,
        waystates: s.plan.waystates.len(),
        peak_velocity: peak_v,
        peak_acceleration: peak_a,
        tool: arr3(&s.tool_end.position),
        tool_yaw: s.tool_end.orientation.yaw(),
        signed_distance: s.signed_distance,
        cost: s.cost,
    }
}

fn push_events(trace: &mut RunTrace, goal: usize, events: &[LoopEvent]) {
    for e in events {
        let rec = match e {
            LoopEvent::Estimate(est) => TraceRecord::Estimate(EstimateLine {
                goal,
                t: est.timestamp,
                source: est.source,
                position: arr3(&est.position),
                sensors: est
                    .contributing_sensors
                    .iter()
                    .map(SensorId::to_string)
                    .collect(),
            }),
            LoopEvent::ModeSwitch { t, from, to } => TraceRecord::Mode(ModeLine {
                goal,
                t: *t,
                from: *from,
                to: *to,
            }),
            LoopEvent::Segment(s) => TraceRecord::Segment(Box::new(segment_line(goal, s))),
        };
        trace.records.push(rec);
    }
}

/// Longest wait for a first estimate before a static action starts.
const SETTLE_WAIT: f64 = 1.0;

fn master_for(mode: RunMode, config: &WorkcellConfig) -> MasterState {
    match mode {
        RunMode::Hybrid => MasterState::new(config.master.hysteresis_margin),
        RunMode::EtohOnly => MasterState::pinned_etoh(),
    }
}

/// Runs a scenario and returns its trace.
pub fn run_scenario(
    config: &WorkcellConfig,
    scenario: &Scenario,
) -> Result<RunTrace, HarnessError> {
    run_scenario_observed(config, scenario, &mut |_, _| {})
}

/// Like [`run_scenario`], also handing every executed segment to `observe`.
pub fn run_scenario_observed(
    config: &WorkcellConfig,
    scenario: &Scenario,
    observe: &mut dyn FnMut(usize, &SegmentRecord),
) -> Result<RunTrace, HarnessError> {
    config.validate()?;
    scenario.validate(&config.workspace)?;
    let seed = config.seed;
    let sys = config.build(seed)?;
    let stop = scenario.stop.unwrap_or(config.stop);
    let mut state = LoopState::new(
        &sys,
        sys.model.home(),
        master_for(scenario.mode, config),
        seed,
    );
    let mut trace = RunTrace::new(TraceHeader {
        format: TRACE_FORMAT,
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        seed,
        config_hash: config.hash(),
        config: config.clone(),
        scenario_def: scenario.clone(),
    });

    // (from, to, speed) moves start when their goal begins
    enum Goal {
        Move(Vec3, Vec3, f64),
        Static(Vec3, Pose),
    }
    let goals: Vec<Goal> = match &scenario.script {
        Script::Waypoints {
            start,
            points,
            speed,
        } => {
            let mut from = Vec3::from(*start);
            points
                .iter()
                .map(|p| {
                    let to = Vec3::from(*p);
                    let g = Goal::Move(from, to, *speed);
                    from = to;
                    g
                })
                .collect()
        }
        Script::Actions { actions } => actions
            .iter()
            .map(|a| {
                let start = Pose::new(Vec3::from(a.start), OrientationVec::from_yaw(a.start_yaw));
                Goal::Static(Vec3::from(a.target), start)
            })
            .collect(),
    };

    for (goal, spec) in goals.into_iter().enumerate() {
        let settle = matches!(spec, Goal::Static(..));
        let path = match spec {
            Goal::Move(from, to, speed) => TargetPath::linear(from, to, state.clock.now(), speed),
            Goal::Static(target, pose) => {
                let q = sys
                    .model
                    .inverse_kinematics(&pose, &sys.model.home())
                    .map_err(|e| {
                        HarnessError::Scenario(format!(
                            "start pose of action {goal} unreachable: {e}"
                        ))
                    })?;
                state.q = q.q;
                state.last_a_star = pose.orientation;
                // estimates of the previous target must not leak into this action
                state.tracker = Tracker::new();
                TargetPath::fixed(target)
            }
        };
        state.master.mode = ServoMode::EtoH;
        let mut scene = Scene::new(
            Target {
                shape: scenario.shape,
                path,
            },
            scenario.occluders.clone(),
        );
        if settle {
            // the arm is set up with the target already in view
            let events = state.acquire(&sys, &mut scene, SETTLE_WAIT);
            push_events(&mut trace, goal, &events);
        }
        let (out, end, detail) = match run_loop(&sys, &mut scene, &mut state, &stop) {
            Ok(out) => (out, GoalEnd::Converged, None),
            Err(ExecutorError::Timeout { output, .. }) => (*output, GoalEnd::Timeout, None),
            Err(ExecutorError::Plan { error, output }) => {
                (*output, GoalEnd::PlanFailure, Some(error.to_string()))
            }
        };
        for s in out.segments() {
            observe(goal, s);
        }
        push_events(&mut trace, goal, &out.events);
        let t_end = state.clock.now();
        let tip = sys.model.forward_kinematics(&state.q).position;
        let center = scene.target.center(t_end);
        trace.records.push(TraceRecord::Outcome(GoalOutcome {
            goal,
            t: t_end,
            success: end == GoalEnd::Converged,
            end,
            time_to_goal: (end == GoalEnd::Converged).then(|| out.elapsed()),
            iterations: out.iterations(),
            final_error: scene.target.shape.center_offset(&center, &tip),
            signed_distance: scene.target.shape.signed_distance(&center, &tip),
            detail,
        }));
        if let Some(budget) = scenario.time_budget {
            if t_end > budget {
                return Err(HarnessError::Timeout {
                    budget,
                    trace: Box::new(trace),
                });
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracySource {
    EtoH,
    EinH,
}

impl std::str::FromStr for AccuracySource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "etoh" => Ok(AccuracySource::EtoH),
            "einh" => Ok(AccuracySource::EinH),
            other => Err(format!("unknown source `{other}` (expected etoh or einh)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyResult {
    pub source: AccuracySource,
    pub repetitions: usize,
    pub samples: usize,
    pub median: f64,
    pub mean: f64,
}

/// Speed of the tool-carried marker in the corner-sensor protocol.
pub const ACCURACY_SPEED: f64 = 0.10;

/// Loop the tool-carried marker follows: corners of a box inside the workcell.
fn accuracy_path() -> Vec<Vec3> {
    [
        [-0.4, 0.1, 0.5],
        [0.4, 0.1, 0.5],
        [0.4, 0.5, 0.5],
        [-0.4, 0.5, 0.5],
        [-0.4, 0.5, 0.9],
        [0.4, 0.5, 0.9],
        [0.4, 0.1, 0.9],
        [-0.4, 0.1, 0.9],
        [-0.4, 0.1, 0.5],
    ]
    .into_iter()
    .map(Vec3::from)
    .collect()
}

/// Median tracking error of one source, pooled over `repetitions` runs with
/// freshly drawn calibration errors.
///
/// Corner sensors: the marker rides on the tool tip along a scripted loop at
/// [`ACCURACY_SPEED`]; every fused estimate is compared with the true tip.
/// Arm sensor: a static marker is placed on a grid across the frustum interior.
pub fn tracking_accuracy_experiment(
    config: &WorkcellConfig,
    source: AccuracySource,
    repetitions: usize,
) -> Result<AccuracyResult, HarnessError> {
    config.validate()?;
    let mut errors = Vec::new();
    for rep in 0..repetitions.max(1) {
        let seed = derive_seed(config.seed, rep as u64);
        let sys = config.build(seed)?;
        match source {
            AccuracySource::EtoH => etoh_accuracy_run(&sys, seed, &mut errors)?,
            AccuracySource::EinH => einh_accuracy_run(&sys, seed, &mut errors),
        }
    }
    if errors.is_empty() {
        return Err(HarnessError::Scenario(
            "no valid estimates were produced".into(),
        ));
    }
    Ok(AccuracyResult {
        source,
        repetitions: repetitions.max(1),
        samples: errors.len(),
        median: median(&errors),
        mean: mean(&errors),
    })
}

fn etoh_accuracy_run(
    sys: &ServoSystem,
    seed: u64,
    errors: &mut Vec<f64>,
) -> Result<(), HarnessError> {
    let pts = accuracy_path();
    let mut keys = vec![(0.0, pts[0])];
    for w in pts.windows(2) {
        let t = keys.last().expect("non-empty").0 + (w[1] - w[0]).norm() / ACCURACY_SPEED;
        keys.push((t, w[1]));
    }
    let path =
        TargetPath::from_keyframes(keys).map_err(|e| HarnessError::Scenario(e.to_string()))?;
    let duration = path.arrival_time();
    let mut scene = Scene::new(
        Target {
            shape: TargetShape::Sphere {
                radius: super::scenario::BALL_RADIUS,
            },
            path,
        },
        Vec::new(),
    );
    let mut rngs: Vec<_> = sys
        .etoh
        .iter()
        .map(|s| stream_rng(seed, stream::ETOH_BASE + s.id as u64))
        .collect();
    let mut tracker = Tracker::new();
    let mut q = sys.model.home();
    let rate = sys
        .etoh
        .iter()
        .map(|s| s.detection_rate)
        .fold(f64::INFINITY, f64::min);
    let ticks = (duration * rate).floor() as usize;
    for i in 0..=ticks {
        let t = i as f64 / rate;
        let truth = scene.target.center(t);
        let pose = Pose::new(truth, OrientationVec::from_yaw(0.0));
        q = sys
            .model
            .inverse_kinematics(&pose, &q)
            .map_err(|e| {
                HarnessError::Scenario(format!("accuracy path unreachable at {t:.2} s: {e}"))
            })?
            .q;
        scene.set_arm(&sys.model, &q);
        let detections: Vec<_> = sys
            .etoh
            .iter()
            .zip(rngs.iter_mut())
            .map(|(s, rng)| crate::sensors::observe_etoh(s, &scene, t, rng))
            .collect();
        if let Some(est) = tracker.update_etoh(&detections, &sys.etoh, t) {
            errors.push((est.position - truth).norm());
        }
    }
    Ok(())
}

/// Camera-frame grid points strictly inside the frustum: five depth layers,
/// nine lateral spots per layer at up to half the cone radius.
pub fn einh_grid(f: &crate::sensors::FrustumSpec) -> Vec<Vec3> {
    let mut pts = Vec::new();
    let layers = 5;
    for i in 0..layers {
        let z = f.near + (f.far - f.near) * (i as f64 + 0.5) / layers as f64;
        let reach = 0.5 * z * (f.fov / 2.0).tan();
        for a in 0..8 {
            let phi = a as f64 * std::f64::consts::FRAC_PI_4;
            pts.push(Vec3::new(reach * phi.cos(), reach * phi.sin(), z));
        }
        pts.push(Vec3::new(0.0, 0.0, z));
    }
    pts
}

fn einh_accuracy_run(sys: &ServoSystem, seed: u64, errors: &mut Vec<f64>) {
    const DRAWS: usize = 20;
    let q = sys.model.home();
    let cam = sys.einh.camera_pose(&sys.model, &q);
    let mut rng = stream_rng(seed, stream::EINH);
    for local in einh_grid(&sys.einh.frustum) {
        let truth = cam.apply(&local);
        let scene = Scene::new(
            Target {
                shape: TargetShape::Sphere { radius: 0.01 },
                path: TargetPath::fixed(truth),
            },
            Vec::new(),
        );
        for _ in 0..DRAWS {
            let d = observe_einh(&sys.einh, &scene, &sys.model, &q, 0.0, &mut rng);
            if let Ok(est) = crate::tracking::einh_to_global(&d, &q, &sys.einh, &sys.model) {
                errors.push((est.position - truth).norm());
            }
        }
    }
}

/// Knobs of the simulated marker calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub locations: usize,
    pub marker_radius: f64,
    /// Surface samples each sensor sees per marker placement.
    pub samples_per_view: usize,
    /// Per-sample depth noise of the corner sensors.
    pub surface_noise: f64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        Self {
            locations: 12,
            marker_radius: 0.1,
            samples_per_view: 60,
            surface_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorRegistration {
    pub sensor: usize,
    pub correspondences: CorrespondenceSet,
    pub report: RegistrationReport,
    /// Distance between estimated and true sensor origins.
    pub position_error: f64,
    /// Rotation angle between estimated and true sensor orientation.
    pub rotation_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub locations: Vec<Vec3>,
    pub registrations: Vec<SensorRegistration>,
    /// Sensors that saw the marker at fewer than three shared locations.
    pub skipped: Vec<usize>,
}

/// Places a spherical marker at `locations` spots, fits its center in every
/// corner sensor's frame and registers each sensor to sensor 0 (whose pose
/// is taken as known). Placements missed by either sensor of a pair are dropped.
pub fn calibration_routine(
    config: &WorkcellConfig,
    params: &CalibrationParams,
) -> Result<CalibrationOutcome, HarnessError> {
    config.validate()?;
    if params.locations < 3 || params.samples_per_view < 4 || !(params.marker_radius > 0.0) {
        return Err(HarnessError::Scenario(
            "calibration needs >= 3 locations, >= 4 samples, radius > 0".into(),
        ));
    }
    let sys = config.build(config.seed)?;
    let mut rng = stream_rng(config.seed, stream::SCENARIO);
    let locations: Vec<Vec3> = (0..params.locations)
        .map(|_| {
            Vec3::new(
                rng.random_range(-0.6..0.6),
                rng.random_range(-0.2..0.7),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let mut noise = stream_rng(config.seed, stream::CALIBRATION);
    let empty = Scene::new(
        Target {
            shape: TargetShape::Sphere {
                radius: params.marker_radius,
            },
            path: TargetPath::fixed(Vec3::zeros()),
        },
        Vec::new(),
    );

    // fitted center per sensor (in that sensor's frame) per location
    let fits: Vec<Vec<Option<Vec3>>> = sys
        .etoh
        .iter()
        .map(|s| {
            let to_local = s.true_pose.inverse();
            locations
                .iter()
                .map(|c| {
                    if !in_frustum(c, &s.true_pose, &s.frustum)
                        || crate::sensors::occluded(c, &s.origin(), &empty)
                    {
                        return None;
                    }
                    let toward = (s.origin() - c).normalize();
                    let samples: Vec<Vec3> = (0..params.samples_per_view)
                        .map(|_| {
                            let n = cap_direction(&toward, &mut noise);
                            let p = c + n * params.marker_radius;
                            let d = p - s.workcell_center;
                            let distorted = p + s.bias_gain * d.x.hypot(d.y);
                            let depth_dir = (distorted - s.origin()).normalize();
                            let jitter: f64 = noise.sample(rand_distr::StandardNormal);
                            to_local.apply(&(distorted + depth_dir * jitter * params.surface_noise))
                        })
                        .collect();
                    fit_sphere_center(&samples, params.marker_radius).ok()
                })
                .collect()
        })
        .collect();

    let reference = sys.etoh[0].true_pose;
    let mut registrations = Vec::new();
    let mut skipped = Vec::new();
    for (i, s) in sys.etoh.iter().enumerate().skip(1) {
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = fits[i]
            .iter()
            .zip(&fits[0])
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .unzip();
        let Ok(set) = CorrespondenceSet::new(src, dst) else {
            skipped.push(i);
            continue;
        };
        let Ok(report) = procrustes_align(&set) else {
            skipped.push(i);
            continue;
        };
        let estimated: RigidTransform = reference.compose(&report.transform);
        let rel = estimated.rotation * s.true_pose.rotation.transpose();
        let rotation_error = crate::geometry::rotation_log(&rel).norm();
        registrations.push(SensorRegistration {
            sensor: i,
            position_error: (estimated.translation - s.true_pose.translation).norm(),
            rotation_error,
            correspondences: set,
            report,
        });
    }
    Ok(CalibrationOutcome {
        locations,
        registrations,
        skipped,
    })
}

/// Random unit vector within 60° of `axis`.
fn cap_direction<R: Rng + ?Sized>(axis: &Vec3, rng: &mut R) -> Vec3 {
    let cos_max = 0.5f64;
    let z: f64 = rng.random_range(cos_max..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    let local = Vec3::new(r * phi.cos(), r * phi.sin(), z);
    let frame = RigidTransform::look_at(Vec3::zeros(), *axis).unwrap_or_default();
    frame.apply_vector(&local)
}
