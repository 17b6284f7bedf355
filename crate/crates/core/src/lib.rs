pub mod calibration;
pub mod executor;
pub mod geometry;
pub mod harness;
pub mod kinematics;
pub mod master;
pub mod planner;
pub mod rng;
pub mod sensors;
pub mod stats;
pub mod tracking;
