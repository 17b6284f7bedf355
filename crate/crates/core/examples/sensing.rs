//! Corner sensors and the arm camera observing a ball, and the fused estimates
//! the tracker builds from them.

use hybrid_servo::geometry::Vec3;
use hybrid_servo::harness::WorkcellConfig;
use hybrid_servo::rng::stream_rng;
use hybrid_servo::sensors::{observe_einh, observe_etoh, Scene, Target, TargetPath, TargetShape};
use hybrid_servo::tracking::{einh_to_global, Tracker};

fn main() {
    let config = WorkcellConfig::default();
    let sys = config.build(config.seed).expect("default config builds");
    let q = sys.model.home();
    let tip = sys.model.forward_kinematics(&q).position;
    let ball = tip + Vec3::new(0.0, 0.06, 0.0);
    let mut scene = Scene::new(
        Target {
            shape: TargetShape::Sphere { radius: 0.025 },
            path: TargetPath::fixed(ball),
        },
        Vec::new(),
    );
    scene.set_arm(&sys.model, &q);
    println!("ball at {:.3?}", ball.as_slice());

    let mut rng = stream_rng(7, 0);
    let mut tracker = Tracker::new();
    for tick in 0..3 {
        let t = tick as f64 / 5.0;
        let detections: Vec<_> = sys
            .etoh
            .iter()
            .map(|s| observe_etoh(s, &scene, t, &mut rng))
            .collect();
        for d in &detections {
            let err = if d.valid {
                format!("{:5.1} mm", (d.position - ball).norm() * 1e3)
            } else {
                "  missed".into()
            };
            println!("t {t:.1}  {:<8} {err}", d.sensor_id.to_string());
        }
        if let Some(est) = tracker.update_etoh(&detections, &sys.etoh, t) {
            println!(
                "t {t:.1}  fused from {:?}: error {:.1} mm",
                est.contributing_sensors,
                (est.position - ball).norm() * 1e3
            );
        }
    }

    let d = observe_einh(&sys.einh, &scene, &sys.model, &q, 0.0, &mut rng);
    match einh_to_global(&d, &q, &sys.einh, &sys.model) {
        Ok(est) => println!(
            "arm camera: depth {:.3} m, error {:.1} mm",
            d.position.z,
            (est.position - ball).norm() * 1e3
        ),
        Err(e) => println!("arm camera: {e}"),
    }
}
