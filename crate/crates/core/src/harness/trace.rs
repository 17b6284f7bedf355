//! Run traces: one JSON object per line.
//!
//! The first line is the header (`"record": "header"`) carrying the format
//! version, the full configuration, its hash, the seed and the scenario, so a
//! trace can be re-run on its own. Event lines follow in nondecreasing `t`:
//! `estimate`, `mode`, `segment` and, after each goal, `outcome`. Field order
//! within every record is the declaration order of the structs below.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::master::ServoMode;
use crate::stats::median;
use crate::tracking::EstimateSource;

use super::config::WorkcellConfig;
use super::scenario::{RunMode, Scenario};
use super::HarnessError;

pub const TRACE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: u32,
    pub scenario: String,
    pub mode: RunMode,
    pub seed: u64,
    pub config_hash: String,
    pub config: WorkcellConfig,
    pub scenario_def: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateLine {
    pub goal: usize,
    pub t: f64,
    pub source: EstimateSource,
    pub position: [f64; 3],
    pub sensors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeLine {
    pub goal: usize,
    pub t: f64,
    pub from: ServoMode,
    pub to: ServoMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentLine {
    pub goal: usize,
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub plan_latency: f64,
    pub exec_duration: f64,
    pub mode: ServoMode,
    pub estimate: Option<[f64; 3]>,
    pub estimate_t: Option<f64>,
    pub goal_position: [f64; 3],
    pub goal_yaw: f64,
    pub q_start: [f64; 6],
    pub q_end: [f64; 6],
    pub waypoints: usize,
    pub waystates: usize,
    /// Per-joint peak |q̇| and |q̈| over the plan's waystates.
    pub peak_velocity: [f64; 6],
    pub peak_acceleration: [f64; 6],
    pub tool: [f64; 3],
    pub tool_yaw: f64,
    pub signed_distance: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalEnd {
    Converged,
    Timeout,
    PlanFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub goal: usize,
    pub t: f64,
    pub success: bool,
    pub end: GoalEnd,
    pub time_to_goal: Option<f64>,
    pub iterations: usize,
    /// Tip distance to the target center (in-plane for a disc) at the end.
    pub final_error: f64,
    pub signed_distance: f64,
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(Box<TraceHeader>),
    Estimate(EstimateLine),
    Mode(ModeLine),
    Segment(Box<SegmentLine>),
    Outcome(GoalOutcome),
}

impl TraceRecord {
    fn time(&self) -> Option<f64> {
        match self {
            TraceRecord::Header(_) => None,
            TraceRecord::Estimate(e) => Some(e.t),
            TraceRecord::Mode(m) => Some(m.t),
            TraceRecord::Segment(s) => Some(s.t_end),
            TraceRecord::Outcome(o) => Some(o.t),
        }
    }
}

/// Aggregates of one trace; medians are over successful goals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub goals: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_time_to_goal: Option<f64>,
    pub median_iterations: Option<f64>,
    pub median_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new(header: TraceHeader) -> Self {
        Self {
            header,
            records: Vec::new(),
        }
    }

    pub fn outcomes(&self) -> impl Iterator<Item = &GoalOutcome> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Outcome(o) => Some(o),
            _ => None,
        })
    }

    pub fn segments(&self) -> impl Iterator<Item = &SegmentLine> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Segment(s) => Some(s.as_ref()),
            _ => None,
        })
    }

    pub fn summary(&self) -> TraceSummary {
        let outcomes: Vec<&GoalOutcome> = self.outcomes().collect();
        let ok: Vec<&&GoalOutcome> = outcomes.iter().filter(|o| o.success).collect();
        let med = |v: Vec<f64>| (!v.is_empty()).then(|| median(&v));
        TraceSummary {
            goals: outcomes.len(),
            successes: ok.len(),
            success_rate: if outcomes.is_empty() {
                0.0
            } else {
                ok.len() as f64 / outcomes.len() as f64
            },
            median_time_to_goal: med(ok.iter().filter_map(|o| o.time_to_goal).collect()),
            median_iterations: med(ok.iter().map(|o| o.iterations as f64).collect()),
            median_accuracy: med(ok.iter().map(|o| o.final_error).collect()),
        }
    }

    /// Timestamps nondecreasing and every `(goal, k)` segment present once, in order.
    pub fn check_invariants(&self) -> Result<(), HarnessError> {
        let mut last = f64::NEG_INFINITY;
        for r in &self.records {
            if let Some(t) = r.time() {
                if t < last {
                    return Err(HarnessError::Trace(format!("timestamp {t} after {last}")));
                }
                last = t;
            }
        }
        let mut expect: Option<(usize, usize)> = None;
        for s in self.segments() {
            let ok = match expect {
                Some((g, k)) if g == s.goal => s.k == k + 1,
                _ => s.k == 1,
            };
            if !ok {
                return Err(HarnessError::Trace(format!(
                    "segment {} of goal {} out of sequence",
                    s.k, s.goal
                )));
            }
            expect = Some((s.goal, s.k));
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<(), HarnessError> {
        let header = TraceRecord::Header(Box::new(self.header.clone()));
        for r in std::iter::once(&header).chain(&self.records) {
            serde_json::to_writer(&mut w, r).map_err(|e| HarnessError::Trace(e.to_string()))?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self, HarnessError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| HarnessError::Trace(format!("line {}: {e}", i + 1)))?;
            match rec {
                TraceRecord::Header(h) if header.is_none() && records.is_empty() => {
                    header = Some(*h)
                }
                TraceRecord::Header(_) => {
                    return Err(HarnessError::Trace(format!(
                        "line {}: unexpected header",
                        i + 1
                    )));
                }
                other if header.is_some() => records.push(other),
                _ => {
                    return Err(HarnessError::Trace(
                        "first record must be the header".into(),
                    ))
                }
            }
        }
        let header = header.ok_or_else(|| HarnessError::Trace("empty trace".into()))?;
        Ok(Self { header, records })
    }

    pub fn save(&self, path: &Path) -> Result<(), HarnessError> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_jsonl(f)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
