//! Bulls-eye aiming: 24 static actions per run; reports where each action
//! ended relative to the disc center.

use hybrid_servo::harness::{run_scenario, RunMode, Scenario, WorkcellConfig};

fn main() {
    let config = WorkcellConfig::default();
    for mode in [RunMode::Hybrid, RunMode::EtohOnly] {
        let trace = run_scenario(&config, &Scenario::bullseye(mode)).expect("bullseye run");
        let errors: Vec<String> = trace
            .outcomes()
            .map(|o| {
                if o.success {
                    format!("{:.0}", o.final_error * 1e3)
                } else {
                    "x".into()
                }
            })
            .collect();
        let s = trace.summary();
        println!(
            "{mode}: {}/{} reached, final error [mm] {}",
            s.successes,
            s.goals,
            errors.join(" ")
        );
        println!(
            "  median error {:.1} mm, median iterations {}",
            s.median_accuracy.unwrap_or(f64::NAN) * 1e3,
            s.median_iterations.unwrap_or(f64::NAN)
        );
    }
}
