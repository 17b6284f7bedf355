//! Summary tables over run traces.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::stats::{median, quantile};

use super::scenario::RunMode;
use super::trace::RunTrace;

/// Median and quartiles of one metric across traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Spread {
    fn of(v: &[f64]) -> Option<Self> {
        (!v.is_empty()).then(|| Spread {
            median: median(v),
            q1: quantile(v, 0.25),
            q3: quantile(v, 0.75),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub success_rate: Option<Spread>,
    pub time_to_goal: Option<Spread>,
    pub iterations: Option<Spread>,
    pub accuracy: Option<Spread>,
}

/// Pooled metrics of all traces sharing a scenario and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub mode: RunMode,
    pub traces: usize,
    pub goals: usize,
    pub success_rate: f64,
    pub median_time_to_goal: Option<f64>,
    pub median_iterations: Option<f64>,
    pub median_accuracy: Option<f64>,
    /// Spread of per-trace metrics, present for more than one trace.
    pub batch: Option<BatchStats>,
}

/// `hybrid − etoh_only` for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub scenario: String,
    pub success_rate_delta: f64,
    pub time_to_goal_delta: Option<f64>,
    pub iterations_delta: Option<f64>,
    pub accuracy_delta: Option<f64>,
    /// Seeds present in both modes where hybrid had the higher success rate.
    pub hybrid_wins: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub paired: Vec<PairedRow>,
    pub note: String,
}

fn pooled_median(
    traces: &[&RunTrace],
    f: impl Fn(&super::trace::GoalOutcome) -> Option<f64>,
) -> Option<f64> {
    let v: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.outcomes())
        .filter(|o| o.success)
        .filter_map(f)
        .collect();
    (!v.is_empty()).then(|| median(&v))
}

/// Builds per-(scenario, mode) rows and paired hybrid/etoh rows.
pub fn report(traces: &[RunTrace]) -> Report {
    let mut groups: BTreeMap<(String, RunMode), Vec<&RunTrace>> = BTreeMap::new();
    for t in traces {
        groups
            .entry((t.header.scenario.clone(), t.header.mode))
            .or_default()
            .push(t);
    }
    let mut rows = Vec::new();
    for ((scenario, mode), ts) in &groups {
        let goals: usize = ts.iter().map(|t| t.outcomes().count()).sum();
        let successes: usize = ts
            .iter()
            .map(|t| t.outcomes().filter(|o| o.success).count())
            .sum();
        let batch = (ts.len() > 1).then(|| {
            let sums: Vec<_> = ts.iter().map(|t| t.summary()).collect();
            let col = |f: &dyn Fn(&super::trace::TraceSummary) -> Option<f64>| {
                Spread::of(&sums.iter().filter_map(f).collect::<Vec<_>>())
            };
            BatchStats {
                success_rate: col(&|s| (s.goals > 0).then_some(s.success_rate)),
                time_to_goal: col(&|s| s.median_time_to_goal),
                iterations: col(&|s| s.median_iterations),
                accuracy: col(&|s| s.median_accuracy),
            }
        });
        rows.push(ReportRow {
            scenario: scenario.clone(),
            mode: *mode,
            traces: ts.len(),
            goals,
            success_rate: if goals == 0 {
                0.0
            } else {
                successes as f64 / goals as f64
            },
            median_time_to_goal: pooled_median(ts, |o| o.time_to_goal),
            median_iterations: pooled_median(ts, |o| Some(o.iterations as f64)),
            median_accuracy: pooled_median(ts, |o| Some(o.final_error)),
            batch,
        });
    }

    let mut paired = Vec::new();
    for h in rows.iter().filter(|r| r.mode == RunMode::Hybrid) {
        let Some(e) = rows
            .iter()
            .find(|r| r.mode == RunMode::EtohOnly && r.scenario == h.scenario)
        else {
            continue;
        };
        let diff = |a: Option<f64>, b: Option<f64>| Some(a? - b?);
        let by_seed = |mode: RunMode| -> BTreeMap<u64, f64> {
            groups[&(h.scenario.clone(), mode)]
                .iter()
                .map(|t| (t.header.seed, t.summary().success_rate))
                .collect()
        };
        let (hs, es) = (by_seed(RunMode::Hybrid), by_seed(RunMode::EtohOnly));
        let common: Vec<u64> = hs.keys().filter(|k| es.contains_key(k)).copied().collect();
        paired.push(PairedRow {
            scenario: h.scenario.clone(),
            success_rate_delta: h.success_rate - e.success_rate,
            time_to_goal_delta: diff(h.median_time_to_goal, e.median_time_to_goal),
            iterations_delta: diff(h.median_iterations, e.median_iterations),
            accuracy_delta: diff(h.median_accuracy, e.median_accuracy),
            hybrid_wins: common.iter().filter(|k| hs[k] > es[k]).count(),
            pairs: common.len(),
        });
    }

    let mut latencies: Vec<f64> = traces
        .iter()
        .map(|t| t.header.config.timing.plan_latency)
        .collect();
    latencies.sort_by(f64::total_cmp);
    latencies.dedup();
    let lat = latencies
        .iter()
        .map(|l| format!("{:.0} ms", l * 1000.0))
        .collect::<Vec<_>>()
        .join(", ");
    let note = format!(
        "Times are virtual: each segment lasts max(plan latency, execution time) with plan latency {lat} and \
         execution timed by the configured joint velocity/acceleration limits. They scale with those constants \
         and say nothing about wall-clock speed."
    );
    Report { rows, paired, note }
}

fn opt(v: Option<f64>, scale: f64, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{:.*}", prec, x * scale))
}

fn spread(s: Option<Spread>, scale: f64, prec: usize) -> String {
    s.map_or("-".into(), |s| {
        format!(
            "{:.*} [{:.*}, {:.*}]",
            prec,
            s.median * scale,
            prec,
            s.q1 * scale,
            prec,
            s.q3 * scale
        )
    })
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:<10} {:>6} {:>6} {:>8} {:>12} {:>10} {:>14}",
            "scenario",
            "mode",
            "traces",
            "goals",
            "success",
            "time-to-goal",
            "iterations",
            "accuracy [mm]"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:<10} {:>6} {:>6} {:>7.1}% {:>11}s {:>10} {:>14}",
                r.scenario,
                r.mode.to_string(),
                r.traces,
                r.goals,
                r.success_rate * 100.0,
                opt(r.median_time_to_goal, 1.0, 2),
                opt(r.median_iterations, 1.0, 1),
                opt(r.median_accuracy, 1000.0, 1),
            );
        }
        let batches: Vec<_> = self
            .rows
            .iter()
            .filter_map(|r| r.batch.as_ref().map(|b| (r, b)))
            .collect();
        if !batches.is_empty() {
            let _ = writeln!(out, "\nper-trace median [IQR]");
            for (r, b) in batches {
                let _ = writeln!(
                    out,
                    "{:<10} {:<10} success {}%  time {} s  iterations {}  accuracy {} mm",
                    r.scenario,
                    r.mode.to_string(),
                    spread(b.success_rate, 100.0, 1),
                    spread(b.time_to_goal, 1.0, 2),
                    spread(b.iterations, 1.0, 1),
                    spread(b.accuracy, 1000.0, 1),
                );
            }
        }
        if !self.paired.is_empty() {
            let _ = writeln!(out, "\nhybrid - etoh_only");
            for p in &self.paired {
                let _ = writeln!(
                    out,
                    "{:<10} success {:+.1} pp  time {} s  iterations {}  accuracy {} mm  (hybrid better in {}/{} seeds)",
                    p.scenario,
                    p.success_rate_delta * 100.0,
                    p.time_to_goal_delta.map_or("-".into(), |v| format!("{v:+.2}")),
                    p.iterations_delta.map_or("-".into(), |v| format!("{v:+.1}")),
                    p.accuracy_delta.map_or("-".into(), |v| format!("{:+.1}", v * 1000.0)),
                    p.hybrid_wins,
                    p.pairs,
                );
            }
        }
        let _ = writeln!(out, "\nnote: {}", self.note);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
