//! Forward kinematics, the tool Jacobian and yaw-constrained IK on the
//! ceiling-mounted arm.

use hybrid_servo::geometry::{OrientationVec, Pose, Vec3};
use hybrid_servo::kinematics::{ArmModel, ArmParams};

fn main() {
    let model = ArmModel::new(ArmParams::default(), Default::default()).expect("default arm");
    let home = model.home();
    let tip = model.forward_kinematics(&home);
    println!("home q      {:.3?}", home.as_slice());
    println!(
        "home tip    {:.3?}  yaw {:.3}",
        tip.position.as_slice(),
        tip.orientation.yaw()
    );

    let jac = model.jacobian(&home);
    println!(
        "jacobian rank-revealing singular values {:.3?}",
        jac.singular_values().as_slice()
    );

    for (p, yaw) in [
        ([0.2, 0.4, 0.8], 0.3),
        ([-0.3, 0.25, 0.6], -0.5),
        ([0.0, 0.6, 1.0], 0.0),
    ] {
        let goal = Pose::new(Vec3::from(p), OrientationVec::from_yaw(yaw));
        match model.inverse_kinematics(&goal, &home) {
            Ok(sol) => println!(
                "ik {p:?} yaw {yaw:+.2}: {} iterations, residual {:.1e} m / {:.1e} rad",
                sol.iterations, sol.position_residual, sol.yaw_residual
            ),
            Err(e) => println!("ik {p:?} yaw {yaw:+.2}: {e}"),
        }
    }
}
