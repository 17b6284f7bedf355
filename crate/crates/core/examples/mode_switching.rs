//! The supervisor switching between corner sensors and the arm camera as a
//! target drifts in and out of the camera's depth range.

use hybrid_servo::geometry::Vec3;
use hybrid_servo::master::{update_mode, MasterState};
use hybrid_servo::sensors::FrustumSpec;

fn main() {
    let f = FrustumSpec::einh_default();
    let mut state = MasterState::new(0.05);
    for depth in [0.50, 0.38, 0.34, 0.30, 0.37, 0.39, 0.41, 0.37, 0.33] {
        let next = update_mode(state, Some(&Vec3::new(0.0, 0.0, depth)), &f);
        let note = if next.mode != state.mode {
            "  <- switch"
        } else {
            ""
        };
        println!("target at {depth:.2} m: {:?}{note}", next.mode);
        state = next;
    }
    let lost = update_mode(state, None, &f);
    println!("target lost: {:?}", lost.mode);
}
