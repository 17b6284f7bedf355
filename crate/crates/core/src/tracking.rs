//! Turns per-sensor detections into one world-frame target estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::kinematics::{ArmModel, JointVector};
use crate::sensors::{Detection, EinHSensor, EtoHSensor, SensorId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("no valid detections to fuse")]
    NoValidDetections,
    #[error("detection from {0} is not valid")]
    InvalidDetection(SensorId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateSource {
    EtoH,
    EinH,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetEstimate {
    pub position: Vec3,
    pub timestamp: f64,
    pub source: EstimateSource,
    pub contributing_sensors: Vec<SensorId>,
}

/// Picks the two valid detections whose sensors are closest to `prior`.
///
/// Without a prior each sensor is ranked by the distance to its own
/// detection. Ties break by ascending sensor id; the result is sorted by id.
pub fn select_etoh_sensors(
    detections: &[Detection],
    prior: Option<&Vec3>,
    sensors: &[EtoHSensor],
) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = detections
        .iter()
        .filter(|d| d.valid)
        .filter_map(|d| match d.sensor_id {
            SensorId::EtoH(id) => sensors.iter().find(|s| s.id == id).map(|s| {
                let reference = prior.copied().unwrap_or(d.position);
                ((s.origin() - reference).norm(), id)
            }),
            SensorId::EinH => None,
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.dedup_by_key(|r| r.1);
    let mut ids: Vec<usize> = ranked.into_iter().take(2).map(|r| r.1).collect();
    ids.sort_unstable();
    ids
}

/// Unweighted mean of the valid detections.
pub fn fuse_etoh(
    detections: &[Detection],
    timestamp: f64,
) -> Result<TargetEstimate, TrackingError> {
    let mut mean = Vec3::zeros();
    let mut ids = Vec::new();
    for d in detections.iter().filter(|d| d.valid) {
        ids.push(d.sensor_id);
        // running mean keeps identical inputs exact
        mean += (d.position - mean) / ids.len() as f64;
    }
    if ids.is_empty() {
        return Err(TrackingError::NoValidDetections);
    }
    Ok(TargetEstimate {
        position: mean,
        timestamp,
        source: EstimateSource::EtoH,
        contributing_sensors: ids,
    })
}

/// Maps a camera-frame stereo detection into the world using joint state `q`.
pub fn einh_to_global(
    d: &Detection,
    q: &JointVector,
    sensor: &EinHSensor,
    model: &ArmModel,
) -> Result<TargetEstimate, TrackingError> {
    if !d.valid {
        return Err(TrackingError::InvalidDetection(d.sensor_id));
    }
    let cam = sensor.camera_pose(model, q);
    Ok(TargetEstimate {
        position: cam.apply(&d.position),
        timestamp: d.timestamp,
        source: EstimateSource::EinH,
        contributing_sensors: vec![SensorId::EinH],
    })
}

/// Per-run tracker state: the last fused estimate of each source and the
/// all-sensors escalation flag.
#[derive(Debug, Clone, Default)]
pub struct Tracker {
    pub last_etoh: Option<TargetEstimate>,
    pub last_einh: Option<TargetEstimate>,
    /// Set after a tick with no valid detections; the next tick fuses every
    /// valid sensor instead of the closest two.
    pub escalated: bool,
}

impl Tracker {
    pub fn new() -> Self {
        Self::default()
    }

    fn prior(&self) -> Option<Vec3> {
        match (&self.last_etoh, &self.last_einh) {
            (Some(a), Some(b)) => Some(if b.timestamp > a.timestamp {
                b.position
            } else {
                a.position
            }),
            (Some(a), None) => Some(a.position),
            (None, Some(b)) => Some(b.position),
            (None, None) => None,
        }
    }

    /// Consumes one EtoH tick; returns the new estimate when fusion succeeded.
    pub fn update_etoh(
        &mut self,
        detections: &[Detection],
        sensors: &[EtoHSensor],
        t: f64,
    ) -> Option<TargetEstimate> {
        let chosen: Vec<Detection> = if self.escalated {
            detections.iter().filter(|d| d.valid).copied().collect()
        } else {
            let prior = self.prior();
            let ids = select_etoh_sensors(detections, prior.as_ref(), sensors);
            detections
                .iter()
                .filter(|d| matches!(d.sensor_id, SensorId::EtoH(i) if ids.contains(&i)))
                .copied()
                .collect()
        };
        match fuse_etoh(&chosen, t) {
            Ok(est) => {
                self.escalated = false;
                self.last_etoh = Some(est.clone());
                Some(est)
            }
            Err(_) => {
                self.escalated = true;
                None
            }
        }
    }

    pub fn update_einh(&mut self, est: TargetEstimate) {
        self.last_einh = Some(est);
    }

    /// Latest estimate from `source` no older than `max_age` at time `now`.
    pub fn fresh(&self, source: EstimateSource, now: f64, max_age: f64) -> Option<&TargetEstimate> {
        let e = match source {
            EstimateSource::EtoH => self.last_etoh.as_ref(),
            EstimateSource::EinH => self.last_einh.as_ref(),
        }?;
        (now - e.timestamp <= max_age + 1e-12).then_some(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ConstraintBox, RigidTransform};
    use crate::kinematics::ArmParams;
    use crate::rng::stream_rng;
    use crate::sensors::FrustumSpec;
    use crate::stats::median;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn det(id: usize, p: Vec3) -> Detection {
        Detection {
            sensor_id: SensorId::EtoH(id),
            position: p,
            timestamp: 0.0,
            valid: true,
        }
    }

    fn corner_sensors() -> Vec<EtoHSensor> {
        let f = FrustumSpec {
            fov: 1.2,
            near: 0.5,
            far: 4.5,
        };
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let pose = RigidTransform::look_at(Vec3::new(x, y, 1.6), Vec3::new(0.0, 0.0, 0.5))
                    .unwrap();
                EtoHSensor::ideal(i, pose, f, 5.0)
            })
            .collect()
    }

    #[test]
    fn selects_two_closest_to_prior() {
        let sensors = corner_sensors();
        let dets: Vec<Detection> = (0..4).map(|i| det(i, Vec3::new(0.5, -0.1, 0.5))).collect();
        // prior near the +x side: sensors 1 and 2
        let ids = select_etoh_sensors(&dets, Some(&Vec3::new(0.8, 0.0, 0.8)), &sensors);
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn selection_degenerate_counts() {
        let sensors = corner_sensors();
        let mut dets: Vec<Detection> = (0..4)
            .map(|i| Detection::invalid(SensorId::EtoH(i), 0.0))
            .collect();
        assert!(select_etoh_sensors(&dets, None, &sensors).is_empty());
        dets[3] = det(3, Vec3::new(0.0, 0.0, 0.5));
        assert_eq!(select_etoh_sensors(&dets, None, &sensors), vec![3]);
    }

    #[test]
    fn tracker_escalates_after_failed_tick() {
        let sensors = corner_sensors();
        let mut tr = Tracker::new();
        let none: Vec<Detection> = (0..4)
            .map(|i| Detection::invalid(SensorId::EtoH(i), 0.0))
            .collect();
        assert!(tr.update_etoh(&none, &sensors, 0.0).is_none());
        assert!(tr.escalated);
        let all: Vec<Detection> = (0..4)
            .map(|i| det(i, Vec3::new(i as f64, 0.0, 0.0)))
            .collect();
        let est = tr.update_etoh(&all, &sensors, 0.2).unwrap();
        assert_eq!(est.contributing_sensors.len(), 4);
        assert!(!tr.escalated);
        let est = tr.update_etoh(&all, &sensors, 0.4).unwrap();
        assert_eq!(est.contributing_sensors.len(), 2);
    }

    #[test]
    fn fusion_examples() {
        let e = fuse_etoh(
            &[
                det(0, Vec3::new(1.0, 0.0, 0.0)),
                det(1, Vec3::new(0.0, 1.0, 0.0)),
            ],
            1.0,
        )
        .unwrap();
        assert_eq!(e.position, Vec3::new(0.5, 0.5, 0.0));
        assert_eq!(e.source, EstimateSource::EtoH);
        let single = fuse_etoh(&[det(2, Vec3::new(0.3, 0.2, 0.1))], 1.0).unwrap();
        assert_eq!(single.position, Vec3::new(0.3, 0.2, 0.1));
        assert_eq!(fuse_etoh(&[], 0.0), Err(TrackingError::NoValidDetections));
    }

    #[test]
    fn fusing_two_reduces_median_error() {
        let mut rng = stream_rng(21, 1);
        let sigma = 0.038;
        let mut g = || {
            Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ) * sigma
        };
        let (mut single, mut fused) = (Vec::new(), Vec::new());
        for _ in 0..10_000 {
            let a = g();
            let b = g();
            single.push(a.norm());
            fused.push(((a + b) / 2.0).norm());
        }
        assert!(median(&fused) < median(&single));
    }

    #[test]
    fn einh_to_global_examples() {
        let mut params = ArmParams::default();
        params.base = crate::geometry::TransformSpec::identity();
        let model = ArmModel::new(params, ConstraintBox::default()).unwrap();
        let q = model.home();
        // mount chosen so the camera sits at the world origin looking along +z
        let tool = model.tool_transform(&q);
        let sensor = EinHSensor {
            mount_transform: tool.inverse(),
            frustum: FrustumSpec::einh_default(),
            depth_quantum: 0.0,
            noise_sigma: 0.0,
            detection_rate: 10.0,
        };
        let d = Detection {
            sensor_id: SensorId::EinH,
            position: Vec3::new(0.0, 0.0, 0.3),
            timestamp: 0.0,
            valid: true,
        };
        let e = einh_to_global(&d, &q, &sensor, &model).unwrap();
        assert!((e.position - Vec3::new(0.0, 0.0, 0.3)).norm() < 1e-12);
        let bad = Detection { valid: false, ..d };
        assert!(einh_to_global(&bad, &q, &sensor, &model).is_err());
    }

    #[test]
    fn einh_round_trip() {
        let model = ArmModel::new(ArmParams::default(), ConstraintBox::default()).unwrap();
        let q = model.home();
        let sensor = EinHSensor {
            mount_transform: RigidTransform::from_translation(Vec3::new(0.0, 0.0, -0.3)),
            frustum: FrustumSpec::einh_default(),
            depth_quantum: 0.0,
            noise_sigma: 0.0,
            detection_rate: 10.0,
        };
        let world = Vec3::new(0.05, 0.25, 0.68);
        let cam = sensor.camera_pose(&model, &q).inverse().apply(&world);
        let d = Detection {
            sensor_id: SensorId::EinH,
            position: cam,
            timestamp: 0.0,
            valid: true,
        };
        let e = einh_to_global(&d, &q, &sensor, &model).unwrap();
        assert!((e.position - world).norm() < 1e-9);
    }

    #[test]
    fn stale_estimates_are_dropped() {
        let mut tr = Tracker::new();
        tr.last_etoh = fuse_etoh(&[det(0, Vec3::zeros())], 1.0).ok();
        assert!(tr.fresh(EstimateSource::EtoH, 1.4, 0.4).is_some());
        assert!(tr.fresh(EstimateSource::EtoH, 1.5, 0.4).is_none());
    }

    proptest! {
        #[test]
        fn selection_is_permutation_invariant(perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle(),
                                             px in -1.0..1.0f64, py in -1.0..1.0f64) {
            let sensors = corner_sensors();
            let dets: Vec<Detection> = (0..4).map(|i| det(i, Vec3::new(px, py, 0.5))).collect();
            let shuffled: Vec<Detection> = perm.iter().map(|&i| dets[i]).collect();
            let prior = Vec3::new(px, py, 0.5);
            prop_assert_eq!(
                select_etoh_sensors(&dets, Some(&prior), &sensors),
                select_etoh_sensors(&shuffled, Some(&prior), &sensors)
            );
        }

        #[test]
        fn fusing_identical_is_exact(x in -2.0..2.0f64, y in -2.0..2.0f64, z in -2.0..2.0f64, n in 1usize..5) {
            let p = Vec3::new(x, y, z);
            let dets: Vec<Detection> = (0..n).map(|i| det(i, p)).collect();
            prop_assert_eq!(fuse_etoh(&dets, 0.0).unwrap().position, p);
        }
    }
}
