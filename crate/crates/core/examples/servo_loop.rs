//! The segment loop servoing to a static ball: each segment covers most of the
//! remaining distance until the last one lands on the target.

use hybrid_servo::executor::{run_loop, LoopState, StopCondition};
use hybrid_servo::geometry::Vec3;
use hybrid_servo::harness::WorkcellConfig;
use hybrid_servo::master::MasterState;
use hybrid_servo::sensors::{Scene, Target, TargetPath, TargetShape};

fn main() {
    let config = WorkcellConfig::default();
    let sys = config.build(config.seed).expect("default config builds");
    let home = sys.model.home();
    let target = sys.model.forward_kinematics(&home).position + Vec3::new(0.1, 0.45, 0.05);
    let mut scene = Scene::new(
        Target {
            shape: TargetShape::Sphere { radius: 0.025 },
            path: TargetPath::fixed(target),
        },
        Vec::new(),
    );
    let mut state = LoopState::new(
        &sys,
        home,
        MasterState::new(config.master.hysteresis_margin),
        config.seed,
    );
    let out = run_loop(&sys, &mut scene, &mut state, &StopCondition::default()).expect("loop runs");
    for s in out.segments() {
        println!(
            "segment {:>2}  {:.2}-{:.2} s  {:?}  tip to surface {:+6.1} mm",
            s.k,
            s.t_start,
            s.t_end,
            s.mode_at_plan,
            s.signed_distance * 1e3
        );
    }
    println!(
        "converged: {} after {} segments, {:.2} s",
        out.converged,
        out.iterations(),
        out.elapsed()
    );
}
