//! One planner step: the discounted goal, its yaw, and the timed joint
//! trajectory that reaches it within the velocity and acceleration limits.

use hybrid_servo::geometry::Vec3;
use hybrid_servo::kinematics::{ArmModel, ArmParams};
use hybrid_servo::planner::{
    compute_goal_orientation, compute_goal_position, plan_segment, GoalPose, PlannerParams,
    Waystate,
};

fn main() {
    let model = ArmModel::new(ArmParams::default(), Default::default()).expect("default arm");
    let params = PlannerParams::default();
    let start = Waystate::at_rest(model.home());
    let tip = model.forward_kinematics(&start.q);
    let target = tip.position + Vec3::new(0.25, 0.4, 0.1);

    let dist = (target - tip.position).norm();
    let y_star = compute_goal_position(&tip.position, &target, dist, &params, &model.workspace);
    let a_star = compute_goal_orientation(
        &tip.position,
        &target,
        tip.orientation,
        &params,
        &model.workspace,
    );
    println!(
        "target {:.3} m away, goal covers {:.0}% of it",
        dist,
        100.0 * (y_star - tip.position).norm() / dist
    );
    println!(
        "goal {:.3?}, yaw {:.1} deg",
        y_star.as_slice(),
        a_star.yaw().to_degrees()
    );

    let plan = plan_segment(&start, &GoalPose { y_star, a_star }, &model, &params)
        .expect("reachable goal");
    plan.check_limits(&model).expect("plans respect the limits");
    println!(
        "{} waystates over {:.2} s through {} waypoints",
        plan.waystates.len(),
        plan.duration(),
        plan.waypoint_count
    );
    let vmax = model.max_velocity();
    let peak = plan
        .waystates
        .iter()
        .flat_map(|w| (0..6).map(move |j| w.q_dot[j].abs() / vmax[j]))
        .fold(0.0, f64::max);
    println!("peak joint speed {:.0}% of its limit", peak * 100.0);
}
