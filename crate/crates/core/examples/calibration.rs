//! Registering the corner sensors with a spherical marker, and the underlying
//! point-set alignment on a constructed example.

use hybrid_servo::calibration::{procrustes_align, CorrespondenceSet};
use hybrid_servo::geometry::{RigidTransform, Vec3};
use hybrid_servo::harness::{calibration_routine, CalibrationParams, WorkcellConfig};

fn main() {
    let src: Vec<Vec3> = (0..6)
        .map(|i| {
            let a = i as f64;
            Vec3::new(a.cos(), a.sin(), 0.2 * a)
        })
        .collect();
    let truth = RigidTransform::from_rpy(Vec3::new(0.1, -0.2, 0.3), [0.2, -0.1, 0.5]);
    let refs = src.iter().map(|p| truth.apply(p)).collect();
    let rep = procrustes_align(&CorrespondenceSet::new(src, refs).expect("six pairs"))
        .expect("non-degenerate");
    println!(
        "constructed transform recovered: rotation error {:.1e}, translation error {:.1e}",
        (rep.transform.rotation - truth.rotation).norm(),
        (rep.transform.translation - truth.translation).norm()
    );

    let config = WorkcellConfig::default();
    let outcome =
        calibration_routine(&config, &CalibrationParams::default()).expect("routine runs");
    println!("\nmarker placed at {} locations", outcome.locations.len());
    for r in &outcome.registrations {
        println!(
            "sensor {}: {} pairs, residual {:.1} mm, origin off by {:.1} mm, rotation off by {:.2} deg",
            r.sensor,
            r.correspondences.len(),
            r.report.mean_residual * 1e3,
            r.position_error * 1e3,
            r.rotation_error.to_degrees()
        );
    }
}
