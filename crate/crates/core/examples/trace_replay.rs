//! Saving a trace, loading it back, and re-running from its header alone.

use hybrid_servo::harness::{report, run_scenario, RunMode, RunTrace, Scenario, WorkcellConfig};

fn main() {
    let config = WorkcellConfig {
        seed: 42,
        ..WorkcellConfig::default()
    };
    let trace = run_scenario(&config, &Scenario::bullseye(RunMode::Hybrid)).expect("run");
    let path = std::env::temp_dir().join("hybrid-servo-example.jsonl");
    trace.save(&path).expect("trace written");
    let loaded = RunTrace::load(&path).expect("trace read");
    println!("{} records in {}", loaded.records.len(), path.display());

    let again = run_scenario(&loaded.header.config, &loaded.header.scenario_def).expect("replay");
    println!(
        "replay from header identical: {}",
        again.to_jsonl() == trace.to_jsonl()
    );
    print!("{}", report(&[loaded]).to_text());
}
