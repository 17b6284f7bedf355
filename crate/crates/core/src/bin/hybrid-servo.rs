use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hybrid_servo::harness::{
    calibration_routine, report, run_scenario, tracking_accuracy_experiment, AccuracySource,
    CalibrationParams, HarnessError, RunMode, RunTrace, Scenario, WorkcellConfig,
};

#[derive(Parser)]
#[command(
    name = "hybrid-servo",
    version,
    about = "Hybrid eye-in-hand / eye-to-hand servoing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace.
    Run {
        /// Built-in scenario (`ball`, `bullseye`) or a JSON scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value = "hybrid")]
        mode: RunMode,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trace file (JSON lines); stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register the corner sensors with a spherical marker.
    Calibrate {
        #[arg(long, default_value_t = 12)]
        locations: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Median tracking error of one sensor source.
    Accuracy {
        #[arg(long)]
        source: AccuracySource,
        #[arg(long, default_value_t = 20)]
        repetitions: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Summarize trace files.
    Report {
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Machine-readable output.
        #[arg(long)]
        json: bool,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SCENARIO: u8 = 3;
const EXIT_TIMEOUT: u8 = 4;
const EXIT_OTHER: u8 = 1;

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<WorkcellConfig, HarnessError> {
    let mut c = match path {
        Some(p) => WorkcellConfig::load(p)?,
        None => WorkcellConfig::default(),
    };
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn write_trace(trace: &RunTrace, out: Option<&PathBuf>) -> Result<(), HarnessError> {
    match out {
        Some(p) => trace.save(p),
        None => trace.write_jsonl(std::io::stdout().lock()),
    }
}

fn summarize(trace: &RunTrace) {
    let s = trace.summary();
    let ms = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.1} mm", x * 1000.0));
    let sec = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2} s"));
    eprintln!(
        "{} / {} seed {}: {}/{} goals succeeded, median time-to-goal {}, iterations {}, accuracy {}",
        trace.header.scenario,
        trace.header.mode,
        trace.header.seed,
        s.successes,
        s.goals,
        sec(s.median_time_to_goal),
        s.median_iterations.map_or("-".to_string(), |v| format!("{v:.1}")),
        ms(s.median_accuracy),
    );
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            scenario,
            mode,
            seed,
            config,
            out,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let scenario = Scenario::resolve(&scenario, mode)?;
            match run_scenario(&config, &scenario) {
                Ok(trace) => {
                    write_trace(&trace, out.as_ref())?;
                    summarize(&trace);
                    Ok(())
                }
                Err(HarnessError::Timeout { budget, trace }) => {
                    // keep what ran before the budget expired
                    write_trace(&trace, out.as_ref())?;
                    Err(HarnessError::Timeout { budget, trace })
                }
                Err(e) => Err(e),
            }
        }
        Command::Calibrate {
            locations,
            seed,
            config,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let params = CalibrationParams {
                locations,
                ..CalibrationParams::default()
            };
            let outcome = calibration_routine(&config, &params)?;
            let mut w = std::io::stdout().lock();
            writeln!(
                w,
                "{} marker locations, reference sensor 0",
                outcome.locations.len()
            )?;
            for r in &outcome.registrations {
                writeln!(
                    w,
                    "sensor {}: {} shared views, mean residual {:.1} mm, position error {:.1} mm, rotation error {:.2} deg",
                    r.sensor,
                    r.correspondences.len(),
                    r.report.mean_residual * 1000.0,
                    r.position_error * 1000.0,
                    r.rotation_error.to_degrees(),
                )?;
            }
            for s in &outcome.skipped {
                writeln!(w, "sensor {s}: skipped (too few shared views)")?;
            }
            Ok(())
        }
        Command::Accuracy {
            source,
            repetitions,
            seed,
            config,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let r = tracking_accuracy_experiment(&config, source, repetitions)?;
            println!(
                "{:?}: median {:.1} mm, mean {:.1} mm over {} estimates ({} runs)",
                r.source,
                r.median * 1000.0,
                r.mean * 1000.0,
                r.samples,
                r.repetitions
            );
            Ok(())
        }
        Command::Report { traces, json } => {
            let loaded = traces
                .iter()
                .map(|p| RunTrace::load(p))
                .collect::<Result<Vec<_>, _>>()?;
            let r = report(&loaded);
            if json {
                println!("{}", r.to_json());
            } else {
                print!("{}", r.to_text());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                HarnessError::Config(_) => EXIT_CONFIG,
                HarnessError::Scenario(_) => EXIT_SCENARIO,
                HarnessError::Timeout { .. } => EXIT_TIMEOUT,
                _ => EXIT_OTHER,
            })
        }
    }
}
