//! Extrinsic calibration from a spherical marker: sphere-center fitting on
//! partial point clouds and rigid Procrustes (Kabsch) alignment of the
//! resulting center correspondences.

use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen};
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};
use crate::stats::{mean, median};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("sphere samples are degenerate: {0}")]
    DegenerateSamples(String),
    #[error("sphere fit did not converge after {0} iterations")]
    NoConvergence(usize),
    #[error("correspondence geometry is degenerate: {0}")]
    DegenerateGeometry(String),
    #[error("correspondence parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

const SPHERE_MAX_ITERATIONS: usize = 100;

fn sphere_cost(samples: &[Vec3], c: &Vec3, r: f64) -> f64 {
    samples.iter().map(|s| ((s - c).norm() - r).powi(2)).sum()
}

fn gauss_newton_sphere(
    samples: &[Vec3],
    r: f64,
    mut c: Vec3,
) -> Result<(Vec3, f64), CalibrationError> {
    for _ in 0..SPHERE_MAX_ITERATIONS {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vec3::zeros();
        for s in samples {
            let d = s - c;
            let n = d.norm();
            if n < 1e-15 {
                continue;
            }
            // residual ‖s − c‖ − r, gradient wrt c is −d/‖d‖
            let g = -d / n;
            let res = n - r;
            jtj += g * g.transpose();
            jtr += g * res;
        }
        let eig = SymmetricEigen::new(jtj);
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if hi <= 0.0 || lo <= 1e-12 * hi {
            return Err(CalibrationError::DegenerateSamples(
                "normal equations are rank deficient".into(),
            ));
        }
        let step = jtj.try_inverse().ok_or_else(|| {
            CalibrationError::DegenerateSamples("singular normal equations".into())
        })? * jtr;
        c -= step;
        if step.norm() < 1e-13 {
            return Ok((c, sphere_cost(samples, &c, r)));
        }
    }
    Err(CalibrationError::NoConvergence(SPHERE_MAX_ITERATIONS))
}

/// Least-squares center of a sphere of known radius through `samples`.
///
/// The samples usually cover only the cap facing the sensor. The start point
/// is the centroid pushed one radius along the cap normal; both normal signs
/// are tried and the lower-cost solution wins.
pub fn fit_sphere_center(samples: &[Vec3], known_radius: f64) -> Result<Vec3, CalibrationError> {
    if samples.len() < 4 {
        return Err(CalibrationError::DegenerateSamples(format!(
            "need ≥ 4 samples, got {}",
            samples.len()
        )));
    }
    if !(known_radius > 0.0) {
        return Err(CalibrationError::DegenerateSamples(
            "radius must be positive".into(),
        ));
    }
    let centroid = samples.iter().sum::<Vec3>() / samples.len() as f64;
    let mut cov = Matrix3::zeros();
    for s in samples {
        let d = s - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let order = {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        idx
    };
    if eig.eigenvalues[order[1]] <= 1e-18 * eig.eigenvalues[order[2]].max(1e-300) {
        return Err(CalibrationError::DegenerateSamples(
            "samples are collinear".into(),
        ));
    }
    let normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned();

    let mut best: Option<(Vec3, f64)> = None;
    let mut last_err = None;
    for sign in [1.0, -1.0] {
        match gauss_newton_sphere(
            samples,
            known_radius,
            centroid + normal * (sign * known_radius),
        ) {
            Ok((c, cost)) => {
                if best.is_none_or(|(_, b)| cost < b) {
                    best = Some((c, cost));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((c, _)), _) => Ok(c),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!(),
    }
}

/// Paired points: `source[i]` corresponds to `reference[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    source: Vec<Vec3>,
    reference: Vec<Vec3>,
}

impl CorrespondenceSet {
    pub fn new(source: Vec<Vec3>, reference: Vec<Vec3>) -> Result<Self, CalibrationError> {
        if source.len() != reference.len() {
            return Err(CalibrationError::DegenerateGeometry(format!(
                "length mismatch {} vs {}",
                source.len(),
                reference.len()
            )));
        }
        if source.len() < 3 {
            return Err(CalibrationError::DegenerateGeometry(format!(
                "need ≥ 3 correspondences, got {}",
                source.len()
            )));
        }
        Ok(Self { source, reference })
    }

    pub fn source(&self) -> &[Vec3] {
        &self.source
    }

    pub fn reference(&self) -> &[Vec3] {
        &self.reference
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// One pair per line: `sx sy sz rx ry rz` in meters.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (s, r) in self.source.iter().zip(&self.reference) {
            let _ = writeln!(out, "{} {} {} {} {} {}", s.x, s.y, s.z, r.x, r.y, r.z);
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, CalibrationError> {
        let mut source = Vec::new();
        let mut reference = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CalibrationError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if vals.len() != 6 || vals.iter().any(|v| !v.is_finite()) {
                return Err(CalibrationError::Parse {
                    line: i + 1,
                    message: format!("expected 6 finite fields, got {}", vals.len()),
                });
            }
            source.push(Vec3::new(vals[0], vals[1], vals[2]));
            reference.push(Vec3::new(vals[3], vals[4], vals[5]));
        }
        Self::new(source, reference)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationReport {
    pub transform: RigidTransform,
    pub per_point_residuals: Vec<f64>,
    pub mean_residual: f64,
    pub median_residual: f64,
}

/// Rigid transform minimizing `Σ‖T(srcᵢ) − refᵢ‖²`, reflections excluded.
pub fn procrustes_align(c: &CorrespondenceSet) -> Result<RegistrationReport, CalibrationError> {
    let n = c.len() as f64;
    let cs = c.source.iter().sum::<Vec3>() / n;
    let cr = c.reference.iter().sum::<Vec3>() / n;

    let mut spread = Matrix3::zeros();
    let mut h = Matrix3::zeros();
    for (s, r) in c.source.iter().zip(&c.reference) {
        let ds = s - cs;
        spread += ds * ds.transpose();
        h += ds * (r - cr).transpose();
    }
    let sv = spread.singular_values();
    let (s_max, s_mid) = {
        let mut v = [sv[0], sv[1], sv[2]];
        v.sort_by(|a, b| b.total_cmp(a));
        (v[0], v[1])
    };
    if s_max <= 0.0 || s_mid <= 1e-12 * s_max {
        return Err(CalibrationError::DegenerateGeometry(
            "source points are collinear".into(),
        ));
    }

    let svd = h.svd(true, true);
    let u = svd.u.expect("svd u");
    let v = svd.v_t.expect("svd v_t").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let translation = cr - rotation * cs;
    let transform = RigidTransform {
        rotation,
        translation,
    };

    let per_point_residuals: Vec<f64> = c
        .source
        .iter()
        .zip(&c.reference)
        .map(|(s, r)| (transform.apply(s) - r).norm())
        .collect();
    Ok(RegistrationReport {
        transform,
        mean_residual: mean(&per_point_residuals),
        median_residual: median(&per_point_residuals),
        per_point_residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn octant_cap(center: Vec3, r: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..6 {
            for j in 0..6 {
                let theta = 0.1 + 1.3 * i as f64 / 5.0;
                let phi = 0.1 + 1.3 * j as f64 / 5.0;
                pts.push(
                    center
                        + Vec3::new(
                            theta.sin() * phi.cos(),
                            theta.sin() * phi.sin(),
                            theta.cos(),
                        ) * r,
                );
            }
        }
        pts
    }

    #[test]
    fn sphere_fit_noiseless_octant() {
        let c = fit_sphere_center(&octant_cap(Vec3::zeros(), 1.0), 1.0).unwrap();
        assert_abs_diff_eq!(c, Vec3::zeros(), epsilon = 1e-9);
        let t = Vec3::new(1.0, 2.0, 3.0);
        let c = fit_sphere_center(&octant_cap(t, 1.0), 1.0).unwrap();
        assert_abs_diff_eq!(c, t, epsilon = 1e-9);
    }

    #[test]
    fn sphere_fit_noisy_cap() {
        // 200 points, σ = 1 mm on a 6 cm marker; expected error ~σ/√n·const
        let mut rng = stream_rng(11, 1);
        let r = 0.06;
        let center = Vec3::new(0.3, -0.2, 0.8);
        let mut pts = Vec::new();
        for _ in 0..200 {
            let theta: f64 = rng.random_range(0.0..1.2);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let n = Vec3::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            ) * 0.001;
            pts.push(
                center
                    + Vec3::new(
                        theta.sin() * phi.cos(),
                        theta.sin() * phi.sin(),
                        -theta.cos(),
                    ) * r
                    + n,
            );
        }
        let c = fit_sphere_center(&pts, r).unwrap();
        assert!(
            (c - center).norm() <= 0.001,
            "error {}",
            (c - center).norm()
        );
    }

    #[test]
    fn sphere_fit_rejects_too_few_or_collinear() {
        let few = vec![Vec3::x(), Vec3::y(), Vec3::z()];
        assert!(matches!(
            fit_sphere_center(&few, 1.0),
            Err(CalibrationError::DegenerateSamples(_))
        ));
        let line: Vec<Vec3> = (0..10).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(
            fit_sphere_center(&line, 1.0),
            Err(CalibrationError::DegenerateSamples(_))
        ));
    }

    fn cloud(seed: u64, n: usize) -> Vec<Vec3> {
        let mut rng = stream_rng(seed, 9);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.0..1.5),
                )
            })
            .collect()
    }

    #[test]
    fn procrustes_identity() {
        let pts = cloud(1, 12);
        let rep = procrustes_align(&CorrespondenceSet::new(pts.clone(), pts).unwrap()).unwrap();
        assert_abs_diff_eq!(rep.transform.rotation, Matrix3::identity(), epsilon = 1e-12);
        assert!(rep.per_point_residuals.iter().all(|r| *r <= 1e-12));
    }

    #[test]
    fn procrustes_recovers_rz30() {
        let pts = cloud(2, 12);
        let mut truth = RigidTransform::rot_z(30f64.to_radians());
        truth.translation = Vec3::new(0.1, 0.0, 0.0);
        let refs = pts.iter().map(|p| truth.apply(p)).collect();
        let rep = procrustes_align(&CorrespondenceSet::new(pts, refs).unwrap()).unwrap();
        assert!((rep.transform.rotation - truth.rotation).norm() <= 1e-9);
        assert!((rep.transform.translation - truth.translation).norm() <= 1e-9);
        assert!(rep.per_point_residuals.iter().all(|r| *r <= 1e-9));
    }

    #[test]
    fn procrustes_rejects_collinear() {
        let line: Vec<Vec3> = (0..5)
            .map(|i| Vec3::new(i as f64, 2.0 * i as f64, 0.0))
            .collect();
        let err = procrustes_align(&CorrespondenceSet::new(line.clone(), line).unwrap());
        assert!(matches!(err, Err(CalibrationError::DegenerateGeometry(_))));
        assert!(CorrespondenceSet::new(vec![Vec3::x(); 2], vec![Vec3::x(); 2]).is_err());
    }

    #[test]
    fn procrustes_never_reflects() {
        // reference is a mirror image: best proper rotation still has det +1
        let pts = cloud(3, 10);
        let refs = pts.iter().map(|p| Vec3::new(p.x, p.y, -p.z)).collect();
        let rep = procrustes_align(&CorrespondenceSet::new(pts, refs).unwrap()).unwrap();
        assert_abs_diff_eq!(rep.transform.rotation.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn correspondence_text_round_trip() {
        let pts = cloud(4, 5);
        let refs = cloud(5, 5);
        let set = CorrespondenceSet::new(pts, refs).unwrap();
        let text = format!("# header\n{}\n", set.to_text());
        assert_eq!(CorrespondenceSet::from_text(&text).unwrap(), set);
        assert!(matches!(
            CorrespondenceSet::from_text("1 2 3 4 5\n"),
            Err(CalibrationError::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn procrustes_left_invariant(seed in 0u64..1000, rpy in prop::array::uniform3(-3.0..3.0f64),
                                     t in prop::array::uniform3(-1.0..1.0f64)) {
            let mut rng = stream_rng(seed, 3);
            let src = cloud(seed, 8);
            let refs: Vec<Vec3> = src.iter().map(|p| p + Vec3::new(
                rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03))).collect();
            let base = procrustes_align(&CorrespondenceSet::new(src.clone(), refs.clone()).unwrap()).unwrap();
            let g = RigidTransform::from_rpy(Vec3::from(t), rpy);
            let moved = procrustes_align(&CorrespondenceSet::new(
                src.iter().map(|p| g.apply(p)).collect(),
                refs.iter().map(|p| g.apply(p)).collect()).unwrap()).unwrap();
            for (a, b) in base.per_point_residuals.iter().zip(&moved.per_point_residuals) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!((moved.transform.rotation.determinant() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn sphere_fit_equivariant(rpy in prop::array::uniform3(-3.0..3.0f64),
                                  t in prop::array::uniform3(-2.0..2.0f64)) {
            let g = RigidTransform::from_rpy(Vec3::from(t), rpy);
            let pts: Vec<Vec3> = octant_cap(Vec3::new(0.2, 0.1, -0.3), 0.5).iter().map(|p| g.apply(p)).collect();
            let c = fit_sphere_center(&pts, 0.5).unwrap();
            prop_assert!((c - g.apply(&Vec3::new(0.2, 0.1, -0.3))).norm() <= 1e-9);
        }
    }
}
