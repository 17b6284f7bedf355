//! Scenario definitions: what the target does and how runs are judged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::executor::StopCondition;
use crate::geometry::{ConstraintBox, Vec3};
use crate::sensors::{Occluder, TargetShape};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Corner sensors plus the arm-mounted sensor under the supervisor.
    Hybrid,
    /// Corner sensors only.
    EtohOnly,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Hybrid => "hybrid",
            RunMode::EtohOnly => "etoh_only",
        })
    }
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hybrid" => Ok(RunMode::Hybrid),
            "etoh" | "etoh_only" => Ok(RunMode::EtohOnly),
            other => Err(format!("unknown mode `{other}` (expected hybrid or etoh)")),
        }
    }
}

/// One static-target servo action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    /// Tool tip position the arm is placed at before the action.
    pub start: [f64; 3],
    pub start_yaw: f64,
    pub target: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Script {
    /// The target travels from `start` through `points` at `speed`, waiting
    /// at each point until the arm has converged (or the goal timed out).
    Waypoints {
        start: [f64; 3],
        points: Vec<[f64; 3]>,
        speed: f64,
    },
    /// Static targets; the arm is placed at each action's start pose first.
    Actions { actions: Vec<Action> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub mode: RunMode,
    pub shape: TargetShape,
    pub script: Script,
    #[serde(default)]
    pub occluders: Vec<Occluder>,
    /// Overrides the configured stop condition.
    #[serde(default)]
    pub stop: Option<StopCondition>,
    /// Virtual-time budget for the whole run; exceeding it is an error.
    #[serde(default)]
    pub time_budget: Option<f64>,
}

pub const BALL_RADIUS: f64 = 0.025;
pub const BULLSEYE_RADIUS: f64 = 0.10;
pub const BALL_SPEED: f64 = 0.05;

/// Corners and outer face centers of a box split into two cubes along x:
/// 12 corners plus 5 outer faces per cube.
pub fn split_box_waypoints(min: Vec3, size: Vec3) -> Vec<Vec3> {
    let xs = [min.x, min.x + size.x / 2.0, min.x + size.x];
    let ys = [min.y, min.y + size.y];
    let zs = [min.z, min.z + size.z];
    let mut pts = Vec::with_capacity(22);
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                pts.push(Vec3::new(x, y, z));
            }
        }
    }
    let (yc, zc) = (min.y + size.y / 2.0, min.z + size.z / 2.0);
    for (x_outer, xc) in [
        (xs[0], min.x + size.x / 4.0),
        (xs[2], min.x + 3.0 * size.x / 4.0),
    ] {
        pts.push(Vec3::new(x_outer, yc, zc));
        pts.push(Vec3::new(xc, ys[0], zc));
        pts.push(Vec3::new(xc, ys[1], zc));
        pts.push(Vec3::new(xc, yc, zs[0]));
        pts.push(Vec3::new(xc, yc, zs[1]));
    }
    pts
}

/// Greedy nearest-neighbour visiting order from `start` (ties by index).
pub fn tour(start: Vec3, points: &[Vec3]) -> Vec<Vec3> {
    let mut left: Vec<Vec3> = points.to_vec();
    let mut at = start;
    let mut out = Vec::with_capacity(points.len());
    while !left.is_empty() {
        let (i, _) = left
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - at).norm().total_cmp(&(b.1 - at).norm()))
            .expect("non-empty");
        at = left.remove(i);
        out.push(at);
    }
    out
}

fn arr(v: Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl Scenario {
    /// Ball touching: a 1 m × 0.5 m × 0.5 m box of 22 waypoints in front of the arm.
    pub fn ball(mode: RunMode) -> Self {
        let min = Vec3::new(-0.5, 0.0, 0.55);
        let size = Vec3::new(1.0, 0.5, 0.5);
        let start = min + size / 2.0;
        let points = tour(start, &split_box_waypoints(min, size))
            .into_iter()
            .map(arr)
            .collect();
        Self {
            name: "ball".into(),
            mode,
            shape: TargetShape::Sphere {
                radius: BALL_RADIUS,
            },
            script: Script::Waypoints {
                start: arr(start),
                points,
                speed: BALL_SPEED,
            },
            occluders: Vec::new(),
            stop: None,
            time_budget: None,
        }
    }

    /// Bulls-eye aiming: 3 disc targets × 4 start poses × 2 repetitions.
    pub fn bullseye(mode: RunMode) -> Self {
        let targets = [[-0.1, 0.5, 0.7], [0.0, 0.5, 0.6], [0.1, 0.5, 0.7]];
        let starts = [
            [0.0, 0.1, 0.55],
            [0.0, 0.1, 0.85],
            [-0.1, 0.05, 0.7],
            [0.1, 0.05, 0.7],
        ];
        let mut actions = Vec::with_capacity(24);
        for _rep in 0..2 {
            for target in targets {
                for start in starts {
                    actions.push(Action {
                        start,
                        start_yaw: 0.0,
                        target,
                    });
                }
            }
        }
        Self {
            name: "bullseye".into(),
            mode,
            shape: TargetShape::Disc {
                radius: BULLSEYE_RADIUS,
                normal: [0.0, -1.0, 0.0],
            },
            script: Script::Actions { actions },
            occluders: Vec::new(),
            stop: None,
            time_budget: None,
        }
    }

    pub fn builtin(name: &str, mode: RunMode) -> Option<Self> {
        match name {
            "ball" => Some(Self::ball(mode)),
            "bullseye" | "bulls-eye" => Some(Self::bullseye(mode)),
            _ => None,
        }
    }

    /// Built-in name or path to a JSON scenario file.
    pub fn resolve(name_or_path: &str, mode: RunMode) -> Result<Self, HarnessError> {
        if let Some(s) = Self::builtin(name_or_path, mode) {
            return Ok(s);
        }
        let text = std::fs::read_to_string(name_or_path).map_err(|e| {
            HarnessError::Scenario(format!(
                "`{name_or_path}` is neither a built-in scenario nor readable: {e}"
            ))
        })?;
        let mut s: Scenario = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Scenario(format!("{name_or_path}: {e}")))?;
        s.mode = mode;
        Ok(s)
    }

    pub fn goal_count(&self) -> usize {
        match &self.script {
            Script::Waypoints { points, .. } => points.len(),
            Script::Actions { actions } => actions.len(),
        }
    }

    pub fn validate(&self, bounds: &ConstraintBox) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Scenario(format!("{}: {m}", self.name)));
        if let Err(e) = self.shape.validate() {
            return err(e.to_string());
        }
        let inside = |p: &[f64; 3]| bounds.contains(&Vec3::from(*p));
        match &self.script {
            Script::Waypoints {
                start,
                points,
                speed,
            } => {
                if !(*speed > 0.0) {
                    return err("target speed must be positive".into());
                }
                if !inside(start) {
                    return err(format!("start {start:?} outside the constraint box"));
                }
                if let Some(p) = points.iter().find(|p| !inside(p)) {
                    return err(format!("waypoint {p:?} outside the constraint box"));
                }
            }
            Script::Actions { actions } => {
                if let Some(a) = actions
                    .iter()
                    .find(|a| !inside(&a.start) || !inside(&a.target))
                {
                    return err(format!("action {a:?} leaves the constraint box"));
                }
            }
        }
        if let Some(b) = self.time_budget {
            if !(b > 0.0) {
                return err("time budget must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_two_distinct_waypoints() {
        let pts = split_box_waypoints(Vec3::new(-0.5, 0.1, 0.45), Vec3::new(1.0, 0.5, 0.5));
        assert_eq!(pts.len(), 22);
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                assert!((a - b).norm() > 0.1);
            }
        }
        // the shared face between the two cubes is not a waypoint
        assert!(!pts
            .iter()
            .any(|p| (p - Vec3::new(0.0, 0.35, 0.7)).norm() < 1e-9));
    }

    #[test]
    fn tour_is_a_permutation() {
        let pts = split_box_waypoints(Vec3::zeros(), Vec3::new(1.0, 0.5, 0.5));
        let t = tour(Vec3::new(0.5, 0.25, 0.25), &pts);
        assert_eq!(t.len(), pts.len());
        assert!(pts.iter().all(|p| t.contains(p)));
    }

    #[test]
    fn builtins_are_valid() {
        let b = ConstraintBox::default();
        for mode in [RunMode::Hybrid, RunMode::EtohOnly] {
            let ball = Scenario::ball(mode);
            ball.validate(&b).unwrap();
            assert_eq!(ball.goal_count(), 22);
            let eye = Scenario::bullseye(mode);
            eye.validate(&b).unwrap();
            assert_eq!(eye.goal_count(), 24);
        }
    }

    #[test]
    fn waypoints_outside_box_are_rejected() {
        let mut s = Scenario::ball(RunMode::Hybrid);
        if let Script::Waypoints { points, .. } = &mut s.script {
            points.push([0.0, 0.0, 1.5]);
        }
        assert!(matches!(
            s.validate(&ConstraintBox::default()),
            Err(HarnessError::Scenario(_))
        ));
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::bullseye(RunMode::EtohOnly);
        let back: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("etoh".parse::<RunMode>().unwrap(), RunMode::EtohOnly);
        assert_eq!("hybrid".parse::<RunMode>().unwrap(), RunMode::Hybrid);
        assert!("both".parse::<RunMode>().is_err());
    }
}
