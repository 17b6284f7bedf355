//! The 22-waypoint ball-touching run in both modes, summarized side by side.
//!
//! `cargo run --release --example ball_touching -- 10` runs ten seeds.

use hybrid_servo::harness::{report, run_scenario, RunMode, Scenario, WorkcellConfig};

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let mut traces = Vec::new();
    for seed in 1..=seeds {
        let config = WorkcellConfig {
            seed,
            ..WorkcellConfig::default()
        };
        for mode in [RunMode::Hybrid, RunMode::EtohOnly] {
            traces.push(run_scenario(&config, &Scenario::ball(mode)).expect("ball run"));
        }
    }
    print!("{}", report(&traces).to_text());
}
