//! Median tracking error of the corner sensors and of the arm camera under the
//! default noise and calibration-error settings.

use hybrid_servo::harness::{tracking_accuracy_experiment, AccuracySource, WorkcellConfig};

fn main() {
    let config = WorkcellConfig::default();
    for source in [AccuracySource::EtoH, AccuracySource::EinH] {
        let r = tracking_accuracy_experiment(&config, source, 20).expect("experiment runs");
        println!(
            "{source:?}: median {:.1} mm, mean {:.1} mm ({} estimates)",
            r.median * 1e3,
            r.mean * 1e3,
            r.samples
        );
    }
}
