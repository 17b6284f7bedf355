//! Workcell configuration and its dotted-key text format.
//!
//! Each non-comment line is `dotted.key = <json value>`. Numeric key segments
//! index into arrays, so `etoh.sensors.2.position = [1.2, 1.2, 1.6]` sets the
//! third sensor's position. Missing keys keep their defaults; unknown keys are
//! rejected. Mentioning any index of an array replaces the whole array, with
//! each listed element inheriting unset fields from the default element at the
//! same index. A JSON document (first non-blank character `{`) is accepted too.

use std::f64::consts::PI;

use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::executor::{LoopParams, ServoSystem, StopCondition};
use crate::geometry::{ConstraintBox, RigidTransform, TransformSpec, Vec3};
use crate::kinematics::{ArmModel, ArmParams};
use crate::planner::PlannerParams;
use crate::rng::{stream, stream_rng};
use crate::sensors::{EinHSensor, EtoHSensor, FrustumSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EtohPlacement {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
}

/// Size of the per-run extrinsic calibration error of each corner sensor.
///
/// Magnitudes are fixed; each run draws only the directions, so every seed
/// sees a comparably miscalibrated workcell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Miscalibration {
    /// Rotation error (radians) about a random axis through the workcell center.
    pub rotation: f64,
    pub translation: f64,
    /// Bias growth per meter of horizontal distance from the center.
    pub bias_gain: f64,
}

impl Default for Miscalibration {
    fn default() -> Self {
        Self {
            rotation: 0.065,
            translation: 0.048,
            bias_gain: 0.035,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtohConfig {
    pub sensors: Vec<EtohPlacement>,
    pub frustum: FrustumSpec,
    pub noise_sigma: f64,
    pub rate: f64,
    pub workcell_center: [f64; 3],
    pub miscalibration: Miscalibration,
}

impl Default for EtohConfig {
    fn default() -> Self {
        let look_at = [0.0, 0.0, 0.5];
        let sensors = [[1.2, -1.2], [-1.2, -1.2], [1.2, 1.2], [-1.2, 1.2]]
            .into_iter()
            .map(|[x, y]| EtohPlacement {
                position: [x, y, 1.6],
                look_at,
            })
            .collect();
        Self {
            sensors,
            frustum: FrustumSpec {
                fov: 70f64.to_radians(),
                near: 0.5,
                far: 4.5,
            },
            noise_sigma: 0.016,
            rate: 5.0,
            workcell_center: [0.0, 0.3, 0.6],
            miscalibration: Miscalibration::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EinhConfig {
    /// Tool-to-camera transform; the camera looks along its `+z`.
    pub mount: TransformSpec,
    pub frustum: FrustumSpec,
    pub depth_quantum: f64,
    pub noise_sigma: f64,
    pub rate: f64,
}

impl Default for EinhConfig {
    fn default() -> Self {
        Self {
            mount: TransformSpec {
                translation: [0.0, 0.0, -0.3],
                rpy: [0.0; 3],
            },
            frustum: FrustumSpec::einh_default(),
            depth_quantum: 0.007,
            noise_sigma: 0.0152,
            rate: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasterConfig {
    pub hysteresis_margin: f64,
}

impl Default for MasterConfig {
    fn default() -> Self {
        Self {
            hysteresis_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkcellConfig {
    pub seed: u64,
    pub arm: ArmParams,
    pub workspace: ConstraintBox,
    pub etoh: EtohConfig,
    pub einh: EinhConfig,
    pub planner: PlannerParams,
    pub master: MasterConfig,
    pub timing: LoopParams,
    pub stop: StopCondition,
}

impl Default for WorkcellConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            arm: ArmParams::default(),
            workspace: ConstraintBox::default(),
            etoh: EtohConfig::default(),
            einh: EinhConfig::default(),
            planner: PlannerParams::default(),
            master: MasterConfig::default(),
            timing: LoopParams::default(),
            stop: StopCondition::default(),
        }
    }
}

impl WorkcellConfig {
    /// Parses dotted-key text or JSON.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| ConfigError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            parse_dotted(text)?
        };
        let mut merged =
            serde_json::to_value(WorkcellConfig::default()).expect("config serializes");
        merge(&mut merged, value);
        let config: WorkcellConfig =
            serde_json::from_value(merged).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Dotted-key text, one leaf per line in key order.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.etoh.sensors.is_empty() {
            return bad("at least one etoh sensor is required".into());
        }
        let w = &self.workspace;
        if !(w.x[0] < w.x[1] && w.y[0] < w.y[1] && w.z[0] < w.z[1] && w.yaw[0] <= w.yaw[1]) {
            return bad("workspace bounds are inverted".into());
        }
        if !(self.etoh.rate > 0.0 && self.einh.rate > 0.0) {
            return bad("sensor rates must be positive".into());
        }
        if !(self.timing.tick > 0.0
            && self.timing.plan_latency >= 0.0
            && self.timing.stale_periods > 0.0)
        {
            return bad("timing parameters out of range".into());
        }
        if !(self.stop.threshold >= 0.0 && self.stop.consecutive >= 1 && self.stop.timeout > 0.0) {
            return bad("stop condition out of range".into());
        }
        let m = &self.etoh.miscalibration;
        if !(m.rotation >= 0.0 && m.translation >= 0.0 && m.bias_gain >= 0.0) {
            return bad("miscalibration magnitudes must be >= 0".into());
        }
        if !(self.master.hysteresis_margin >= 0.0) {
            return bad("hysteresis margin must be >= 0".into());
        }
        if self.einh.depth_quantum < 0.0
            || self.einh.noise_sigma < 0.0
            || self.etoh.noise_sigma < 0.0
        {
            return bad("noise and quantum must be >= 0".into());
        }
        self.planner
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.build_ideal()?;
        Ok(())
    }

    /// Corner sensors exactly where the config says, with no calibration error.
    pub fn ideal_etoh(&self) -> Result<Vec<EtoHSensor>, ConfigError> {
        let center = Vec3::from(self.etoh.workcell_center);
        self.etoh
            .sensors
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let pose = RigidTransform::look_at(Vec3::from(p.position), Vec3::from(p.look_at))
                    .map_err(|e| ConfigError::Invalid(format!("etoh sensor {i}: {e}")))?;
                let mut s = EtoHSensor::ideal(i, pose, self.etoh.frustum, self.etoh.rate);
                s.noise_sigma = self.etoh.noise_sigma;
                s.workcell_center = center;
                s.validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
                Ok(s)
            })
            .collect()
    }

    pub fn einh_sensor(&self) -> EinHSensor {
        EinHSensor {
            mount_transform: self.einh.mount.to_transform(),
            frustum: self.einh.frustum,
            depth_quantum: self.einh.depth_quantum,
            noise_sigma: self.einh.noise_sigma,
            detection_rate: self.einh.rate,
        }
    }

    fn build_ideal(&self) -> Result<ServoSystem, ConfigError> {
        let model = ArmModel::new(self.arm.clone(), self.workspace)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let einh = self.einh_sensor();
        einh.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(ServoSystem {
            model,
            etoh: self.ideal_etoh()?,
            einh,
            planner: self.planner,
            timing: self.timing,
        })
    }

    /// Servo system for one run: corner sensors carry a calibration error drawn
    /// from the calibration stream of `seed`.
    pub fn build(&self, seed: u64) -> Result<ServoSystem, ConfigError> {
        let mut sys = self.build_ideal()?;
        let mut rng = stream_rng(seed, stream::CALIBRATION);
        let m = self.etoh.miscalibration;
        let center = Vec3::from(self.etoh.workcell_center);
        let mut draw = |magnitude: f64| -> Vec3 {
            let v: [f64; 3] = UnitSphere.sample(&mut rng);
            Vec3::from(v) * magnitude
        };
        for s in &mut sys.etoh {
            let rot = draw(m.rotation);
            let shift = draw(m.translation);
            let gain = draw(m.bias_gain);
            let r = rotation_from_vector(&rot);
            // rotate about the workcell center, then shift
            let about_center = RigidTransform::from_translation(center)
                .compose(&r)
                .compose(&RigidTransform::from_translation(-center));
            s.calibration_error = RigidTransform::from_translation(shift).compose(&about_center);
            s.bias_gain = gain;
        }
        Ok(sys)
    }
}

fn rotation_from_vector(v: &Vec3) -> RigidTransform {
    let angle = v.norm();
    if angle < 1e-15 {
        return RigidTransform::identity();
    }
    let axis = nalgebra::Unit::new_normalize(*v);
    RigidTransform::from_axis_angle(&axis, angle.min(PI))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (Value::Array(b), Value::Array(o)) => {
            let old = std::mem::take(b);
            for (i, v) in o.into_iter().enumerate() {
                match old.get(i) {
                    Some(d) if d.is_object() && v.is_object() => {
                        let mut d = d.clone();
                        merge(&mut d, v);
                        b.push(d);
                    }
                    _ => b.push(v),
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if prefix.is_empty() {
            k.to_string()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                flatten(&join(k), child, out);
            }
        }
        Value::Array(items) if items.iter().any(|i| i.is_object() || i.is_array()) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&join(&i.to_string()), child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}

/// Parses dotted-key lines into a nested JSON value.
pub fn parse_dotted(text: &str) -> Result<Value, ConfigError> {
    let mut root = Value::Object(Map::new());
    let mut seen = std::collections::BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ConfigError::Parse {
            line: line_no,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim();
        if key.is_empty() || key.split('.').any(str::is_empty) {
            return Err(err(format!("malformed key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        let value: Value =
            serde_json::from_str(value.trim()).map_err(|e| err(format!("`{key}`: {e}")))?;
        let path: Vec<&str> = key.split('.').collect();
        insert(&mut root, &path, value).map_err(err)?;
    }
    fill_check(&root)?;
    Ok(root)
}

fn insert(node: &mut Value, path: &[&str], value: Value) -> Result<(), String> {
    let (head, rest) = path.split_first().expect("non-empty key path");
    let slot: &mut Value = if let Ok(i) = head.parse::<usize>() {
        if node.is_null() {
            *node = Value::Array(Vec::new());
        }
        let arr = node
            .as_array_mut()
            .ok_or_else(|| format!("`{head}` indexes a non-array"))?;
        if arr.len() <= i {
            arr.resize(i + 1, Value::Null);
        }
        &mut arr[i]
    } else {
        if node.is_null() {
            *node = Value::Object(Map::new());
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| format!("`{head}` names a field of a non-object"))?;
        map.entry(head.to_string()).or_insert(Value::Null)
    };
    if rest.is_empty() {
        if !slot.is_null() {
            return Err(format!("`{head}` conflicts with another key"));
        }
        *slot = value;
        Ok(())
    } else {
        insert(slot, rest, value)
    }
}

fn fill_check(v: &Value) -> Result<(), ConfigError> {
    match v {
        Value::Array(items) => {
            if items.iter().any(Value::is_null) {
                return Err(ConfigError::Invalid(
                    "array indices must be contiguous from 0".into(),
                ));
            }
            items.iter().try_for_each(fill_check)
        }
        Value::Object(map) => map.values().try_for_each(fill_check),
        _ => Ok(()),
    }
}
