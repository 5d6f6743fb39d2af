//! Event log and trajectory log.
//!
//! The event log is JSON lines: a `meta` line, granular events as they
//! happen, and a closing `summary` line carrying the raw accumulator
//! totals. Replay rebuilds [`crate::metrics::Totals`] from the log and
//! runs it through the same `finalize` as the live run, so a replayed
//! metrics file is byte-identical to the original. serde_json sorts map
//! keys, which keeps every line deterministic.

use serde_json::{json, Value};
use thiserror::Error;

use crate::metrics::{finalize, RunMetrics, Totals, METRICS_SCHEMA_VERSION};

pub const EVENTS_SCHEMA_VERSION: u32 = 1;

/// First line of a trajectory file; doubles as its schema version.
pub const TRAJECTORY_HEADER: &str = "# amrsim-trajectory v1";
pub const TRAJECTORY_COLUMNS: &str = "t,robot,x,y,theta,v,mode";

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("corrupt event log: {0}")]
    Corrupt(String),
}

#[derive(Debug, Default)]
pub struct EventLog {
    buf: String,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, v: Value) {
        self.buf.push_str(&serde_json::to_string(&v).expect("event serialize"));
        self.buf.push('\n');
    }

    pub fn meta(&mut self, scenario: &str, seed: u64, duration_s: f64, dt: f64, tasks_total: u64) {
        self.push(json!({
            "event": "meta",
            "schema_version": EVENTS_SCHEMA_VERSION,
            "scenario": scenario,
            "seed": seed,
            "duration_s": duration_s,
            "dt": dt,
            "tasks_total": tasks_total,
        }));
    }

    pub fn task_assigned(&mut self, t: f64, task: u32, robot: u16) {
        self.push(json!({"event": "task_assigned", "t": t, "task": task, "robot": robot}));
    }

    pub fn task_completed(
        &mut self,
        t: f64,
        task: u32,
        robot: u16,
        pickup_tardiness_s: f64,
        delivery_tardiness_s: f64,
    ) {
        self.push(json!({
            "event": "task_completed",
            "t": t,
            "task": task,
            "robot": robot,
            "pickup_tardiness_s": pickup_tardiness_s,
            "delivery_tardiness_s": delivery_tardiness_s,
        }));
    }

    pub fn collision(&mut self, t: f64, a: &str, b: &str) {
        self.push(json!({"event": "collision", "t": t, "a": a, "b": b}));
    }

    pub fn clearance_min(&mut self, t: f64, value_m: f64) {
        self.push(json!({"event": "clearance_min", "t": t, "value_m": value_m}));
    }

    pub fn fix_stale(&mut self, t: f64, robot: u16, count: u64) {
        self.push(json!({"event": "fix_stale", "t": t, "robot": robot, "count": count}));
    }

    pub fn manual_override(&mut self, t: f64, robot: u16, engaged: bool) {
        self.push(json!({"event": "manual_override", "t": t, "robot": robot, "engaged": engaged}));
    }

    pub fn summary(&mut self, t: f64, totals: &Totals) {
        self.push(json!({
            "event": "summary",
            "t": t,
            "samples": totals.samples,
            "se_fused": totals.se_fused,
            "se_fix_only": totals.se_fix_only,
            "se_onboard": totals.se_onboard,
            "tasks_completed": totals.tasks_completed,
            "tardiness_total_s": totals.tardiness_total_s,
            "min_clearance_m": totals.min_clearance_m,
            "collisions": totals.collisions,
            "stale_fixes": totals.stale_fixes,
            "dropped_datagrams": totals.dropped_datagrams,
        }));
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

fn field<'a>(line: &'a Value, key: &str, lineno: usize) -> Result<&'a Value, ReplayError> {
    line.get(key)
        .ok_or_else(|| ReplayError::Corrupt(format!("line {lineno}: missing field `{key}`")))
}

fn f64_field(line: &Value, key: &str, lineno: usize) -> Result<f64, ReplayError> {
    field(line, key, lineno)?
        .as_f64()
        .ok_or_else(|| ReplayError::Corrupt(format!("line {lineno}: `{key}` is not a number")))
}

fn u64_field(line: &Value, key: &str, lineno: usize) -> Result<u64, ReplayError> {
    field(line, key, lineno)?
        .as_u64()
        .ok_or_else(|| ReplayError::Corrupt(format!("line {lineno}: `{key}` is not an integer")))
}

/// Recompute run metrics from an event log. An empty log is a valid record
/// of nothing and yields zeroed metrics. Anything structurally wrong is an
/// error; cross-checks catch logs whose granular events and summary
/// disagree.
pub fn replay(text: &str) -> Result<RunMetrics, ReplayError> {
    if text.is_empty() {
        return Ok(RunMetrics::zeroed());
    }
    let mut meta: Option<(String, u64, f64, u64)> = None;
    let mut summary: Option<Totals> = None;
    let mut summary_seen_at: Option<usize> = None;
    let mut completed_events: u64 = 0;
    let mut collision_events: u64 = 0;
    let mut tardiness_sum = 0.0;
    let mut clearance_floor = crate::metrics::CLEARANCE_CAP;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        if raw.trim().is_empty() {
            return Err(ReplayError::Corrupt(format!("line {lineno}: blank line")));
        }
        let line: Value = serde_json::from_str(raw)
            .map_err(|e| ReplayError::Corrupt(format!("line {lineno}: {e}")))?;
        let kind = field(&line, "event", lineno)?
            .as_str()
            .ok_or_else(|| ReplayError::Corrupt(format!("line {lineno}: `event` is not a string")))?
            .to_string();
        if idx == 0 && kind != "meta" {
            return Err(ReplayError::Corrupt("first line is not a meta event".into()));
        }
        if summary_seen_at.is_some() {
            return Err(ReplayError::Corrupt(format!(
                "line {lineno}: events after the summary line"
            )));
        }
        match kind.as_str() {
            "meta" => {
                if idx != 0 {
                    return Err(ReplayError::Corrupt(format!("line {lineno}: duplicate meta")));
                }
                let schema = u64_field(&line, "schema_version", lineno)?;
                if schema != EVENTS_SCHEMA_VERSION as u64 {
                    return Err(ReplayError::Corrupt(format!(
                        "unsupported event log schema version {schema}"
                    )));
                }
                meta = Some((
                    field(&line, "scenario", lineno)?
                        .as_str()
                        .ok_or_else(|| {
                            ReplayError::Corrupt(format!("line {lineno}: `scenario` is not a string"))
                        })?
                        .to_string(),
                    u64_field(&line, "seed", lineno)?,
                    f64_field(&line, "duration_s", lineno)?,
                    u64_field(&line, "tasks_total", lineno)?,
                ));
            }
            "task_assigned" | "fix_stale" | "manual_override" => {}
            "task_completed" => {
                completed_events += 1;
                tardiness_sum += f64_field(&line, "delivery_tardiness_s", lineno)?;
            }
            "collision" => collision_events += 1,
            "clearance_min" => {
                let v = f64_field(&line, "value_m", lineno)?;
                if v < clearance_floor {
                    clearance_floor = v;
                }
            }
            "summary" => {
                summary_seen_at = Some(lineno);
                summary = Some(Totals {
                    samples: u64_field(&line, "samples", lineno)?,
                    se_fused: f64_field(&line, "se_fused", lineno)?,
                    se_fix_only: f64_field(&line, "se_fix_only", lineno)?,
                    se_onboard: f64_field(&line, "se_onboard", lineno)?,
                    tasks_completed: u64_field(&line, "tasks_completed", lineno)?,
                    tardiness_total_s: f64_field(&line, "tardiness_total_s", lineno)?,
                    min_clearance_m: f64_field(&line, "min_clearance_m", lineno)?,
                    collisions: u64_field(&line, "collisions", lineno)?,
                    stale_fixes: u64_field(&line, "stale_fixes", lineno)?,
                    dropped_datagrams: u64_field(&line, "dropped_datagrams", lineno)?,
                });
            }
            other => {
                return Err(ReplayError::Corrupt(format!("line {lineno}: unknown event `{other}`")));
            }
        }
    }

    let (scenario, seed, duration_s, tasks_total) =
        meta.ok_or_else(|| ReplayError::Corrupt("no meta line".into()))?;
    let totals = summary.ok_or_else(|| ReplayError::Corrupt("no summary line".into()))?;

    if totals.tasks_completed != completed_events {
        return Err(ReplayError::Corrupt(format!(
            "summary says {} completed tasks but the log records {}",
            totals.tasks_completed, completed_events
        )));
    }
    if totals.collisions != collision_events {
        return Err(ReplayError::Corrupt(format!(
            "summary says {} collisions but the log records {}",
            totals.collisions, collision_events
        )));
    }
    if totals.min_clearance_m != clearance_floor {
        return Err(ReplayError::Corrupt(format!(
            "summary clearance {} disagrees with the logged minimum {}",
            totals.min_clearance_m, clearance_floor
        )));
    }
    if totals.tardiness_total_s != tardiness_sum {
        return Err(ReplayError::Corrupt(format!(
            "summary tardiness {} disagrees with the logged sum {}",
            totals.tardiness_total_s, tardiness_sum
        )));
    }

    let _ = METRICS_SCHEMA_VERSION;
    Ok(finalize(&scenario, seed, duration_s, tasks_total, &totals))
}

#[derive(Debug, Default)]
pub struct TrajectoryLog {
    buf: String,
}

impl TrajectoryLog {
    pub fn new() -> Self {
        let mut buf = String::new();
        buf.push_str(TRAJECTORY_HEADER);
        buf.push('\n');
        buf.push_str(TRAJECTORY_COLUMNS);
        buf.push('\n');
        Self { buf }
    }

    pub fn row(&mut self, t: f64, robot: u16, x: f64, y: f64, theta: f64, v: f64, mode: &str) {
        use std::fmt::Write as _;
        writeln!(
            self.buf,
            "{t:.3},{robot},{x:.6},{y:.6},{theta:.6},{v:.6},{mode}"
        )
        .expect("string write");
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub robot: u16,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

/// Parse a trajectory file; the mode column is ignored here because plots
/// only need geometry.
pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRAJECTORY_HEADER => {}
        Some(h) => return Err(format!("unsupported trajectory header `{h}`")),
        None => return Err("empty trajectory file".into()),
    }
    match lines.next() {
        Some(c) if c == TRAJECTORY_COLUMNS => {}
        _ => return Err("missing trajectory column row".into()),
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let lineno = idx + 3;
        let mut cols = raw.split(',');
        let mut next_f64 = |name: &str| -> Result<f64, String> {
            cols.next()
                .ok_or_else(|| format!("line {lineno}: missing column `{name}`"))?
                .parse::<f64>()
                .map_err(|e| format!("line {lineno}: bad `{name}`: {e}"))
        };
        let t = next_f64("t")?;
        let robot = next_f64("robot")? as u16;
        let x = next_f64("x")?;
        let y = next_f64("y")?;
        let theta = next_f64("theta")?;
        let v = next_f64("v")?;
        rows.push(TrajectoryRow { t, robot, x, y, theta, v });
    }
    Ok(rows)
}
