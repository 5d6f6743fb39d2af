//! Run metrics: what a run is judged by, and the single `finalize` path
//! that both a live run and a log replay go through so the two can never
//! disagree by a rounding step.

use serde::{Deserialize, Serialize};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Clearance tracking saturates here; pairs further apart than this are
/// not interesting.
pub const CLEARANCE_CAP: f64 = 5.0;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub tasks_total: u64,
    pub tasks_completed: u64,
    pub throughput_per_hour: f64,
    pub tardiness_total_s: f64,
    pub rmse_fused_m: f64,
    pub rmse_fix_only_m: f64,
    pub rmse_onboard_m: f64,
    pub min_clearance_m: f64,
    pub collisions: u64,
    pub stale_fixes: u64,
    pub dropped_datagrams: u64,
}

impl RunMetrics {
    pub fn zeroed() -> Self {
        Self {
            schema_version: METRICS_SCHEMA_VERSION,
            scenario: String::new(),
            seed: 0,
            duration_s: 0.0,
            tasks_total: 0,
            tasks_completed: 0,
            throughput_per_hour: 0.0,
            tardiness_total_s: 0.0,
            rmse_fused_m: 0.0,
            rmse_fix_only_m: 0.0,
            rmse_onboard_m: 0.0,
            min_clearance_m: 0.0,
            collisions: 0,
            stale_fixes: 0,
            dropped_datagrams: 0,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: Self = serde_json::from_str(text).map_err(|e| e.to_string())?;
        if m.schema_version != METRICS_SCHEMA_VERSION {
            return Err(format!(
                "unsupported metrics schema version {} (expected {})",
                m.schema_version, METRICS_SCHEMA_VERSION
            ));
        }
        Ok(m)
    }
}

/// Raw totals a run accumulates. Replay reconstructs the same totals from
/// the event log, then both call [`finalize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Totals {
    pub samples: u64,
    pub se_fused: f64,
    pub se_fix_only: f64,
    pub se_onboard: f64,
    pub tasks_completed: u64,
    pub tardiness_total_s: f64,
    pub min_clearance_m: f64,
    pub collisions: u64,
    pub stale_fixes: u64,
    pub dropped_datagrams: u64,
}

impl Default for Totals {
    fn default() -> Self {
        Self {
            samples: 0,
            se_fused: 0.0,
            se_fix_only: 0.0,
            se_onboard: 0.0,
            tasks_completed: 0,
            tardiness_total_s: 0.0,
            min_clearance_m: CLEARANCE_CAP,
            collisions: 0,
            stale_fixes: 0,
            dropped_datagrams: 0,
        }
    }
}

impl Totals {
    /// Squared position errors for one sampling instant.
    pub fn pose_sample(&mut self, fused: f64, fix_only: f64, onboard: f64) {
        self.se_fused += fused;
        self.se_fix_only += fix_only;
        self.se_onboard += onboard;
        self.samples += 1;
    }

    /// Track the running clearance minimum; true when it just dropped, so
    /// the caller can log the event.
    pub fn clearance(&mut self, c: f64) -> bool {
        if c < self.min_clearance_m {
            self.min_clearance_m = c;
            true
        } else {
            false
        }
    }
}

fn rmse(se: f64, samples: u64) -> f64 {
    if samples == 0 {
        0.0
    } else {
        (se / samples as f64).sqrt()
    }
}

pub fn finalize(
    scenario: &str,
    seed: u64,
    duration_s: f64,
    tasks_total: u64,
    t: &Totals,
) -> RunMetrics {
    let throughput_per_hour = if duration_s > 0.0 {
        t.tasks_completed as f64 / (duration_s / 3600.0)
    } else {
        0.0
    };
    RunMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: scenario.to_string(),
        seed,
        duration_s,
        tasks_total,
        tasks_completed: t.tasks_completed,
        throughput_per_hour,
        tardiness_total_s: t.tardiness_total_s,
        rmse_fused_m: rmse(t.se_fused, t.samples),
        rmse_fix_only_m: rmse(t.se_fix_only, t.samples),
        rmse_onboard_m: rmse(t.se_onboard, t.samples),
        min_clearance_m: t.min_clearance_m,
        collisions: t.collisions,
        stale_fixes: t.stale_fixes,
        dropped_datagrams: t.dropped_datagrams,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_handles_the_empty_run() {
        let m = finalize("x", 1, 0.0, 0, &Totals::default());
        assert_eq!(m.rmse_fused_m, 0.0);
        assert_eq!(m.throughput_per_hour, 0.0);
        assert_eq!(m.min_clearance_m, CLEARANCE_CAP);
    }

    #[test]
    fn clearance_reports_only_new_minima() {
        let mut t = Totals::default();
        assert!(t.clearance(2.0));
        assert!(!t.clearance(3.0));
        assert!(t.clearance(1.5));
        assert_eq!(t.min_clearance_m, 1.5);
    }

    #[test]
    fn metrics_json_round_trips() {
        let mut t = Totals::default();
        t.pose_sample(0.01, 0.04, 0.02);
        t.tasks_completed = 7;
        t.tardiness_total_s = 12.5;
        let m = finalize("demo", 42, 3600.0, 9, &t);
        let back = RunMetrics::from_json(&m.to_json_pretty()).unwrap();
        assert_eq!(m, back);
        assert!((m.throughput_per_hour - 7.0).abs() < 1e-12);
    }
}
