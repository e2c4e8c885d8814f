//! Per-unit recovery timings extracted from an event log.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::log::{EventLog, Payload};
use crate::clock::Millis;
use crate::model::UnitId;
use crate::protocol::UnitState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitClass {
    /// Mitigated its own partition.
    Failed,
    /// Went pending but recovered without mitigating.
    Affected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitTiming {
    pub class: UnitClass,
    pub t_detect: Millis,
    /// Last time the unit stopped being blocked by upstream failures before
    /// it mitigated (failed) or cleared (affected).
    pub t_unblocked: Option<Millis>,
    pub t_mitigate_start: Option<Millis>,
    pub t_restore_done: Option<Millis>,
    /// Clear beacon sent (failed) or return to normal (affected).
    pub t_clear: Option<Millis>,
    /// `t_clear − max(t_detect, t_unblocked)`.
    pub handling: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub units: BTreeMap<UnitId, UnitTiming>,
    pub failed_handling_avg: Option<Millis>,
    pub affected_clearing_avg: Option<Millis>,
    /// Last return to normal minus first detection.
    pub total_recovery: Option<Millis>,
    pub timed_out: bool,
    pub stuck: Vec<UnitId>,
}

fn average(v: &[Millis]) -> Option<Millis> {
    if v.is_empty() {
        return None;
    }
    let sum: i64 = v.iter().map(|m| m.hundredths()).sum();
    Some(Millis::from_hundredths((sum as f64 / v.len() as f64).round() as i64))
}

pub fn timing_report(log: &EventLog) -> TimingReport {
    #[derive(Default)]
    struct Acc {
        detect: Option<Millis>,
        mitigate: Option<Millis>,
        restore: Option<Millis>,
        clear_failed: Option<Millis>,
        clear_pending: Option<Millis>,
        unblocks: Vec<Millis>,
    }
    let mut acc: BTreeMap<UnitId, Acc> = BTreeMap::new();
    let mut first_detect: Option<Millis> = None;
    let mut last_normal: Option<Millis> = None;
    for e in &log.events {
        let Some(u) = e.unit else { continue };
        let a = acc.entry(u).or_default();
        match &e.payload {
            Payload::State { from, to } => match (from, to) {
                (UnitState::Normal, UnitState::Pending) => {
                    a.detect.get_or_insert(e.t);
                    first_detect = Some(first_detect.map_or(e.t, |f| f.min(e.t)));
                }
                (UnitState::Pending, UnitState::Failed) => {
                    a.mitigate.get_or_insert(e.t);
                }
                (UnitState::Failed, UnitState::Normal) => {
                    a.clear_failed = Some(e.t);
                    last_normal = Some(e.t);
                }
                (UnitState::Pending, UnitState::Normal) => {
                    a.clear_pending = Some(e.t);
                    last_normal = Some(e.t);
                }
                _ => {}
            },
            Payload::Restore => a.restore = Some(e.t),
            Payload::Unblock => a.unblocks.push(e.t),
            _ => {}
        }
    }
    let mut units = BTreeMap::new();
    let mut failed = Vec::new();
    let mut affected = Vec::new();
    for (u, a) in acc {
        let Some(t_detect) = a.detect else { continue };
        let (class, t_clear, horizon) = match a.mitigate {
            Some(m) => (UnitClass::Failed, a.clear_failed, Some(m)),
            None => (UnitClass::Affected, a.clear_pending, a.clear_pending),
        };
        let t_unblocked = a.unblocks.iter().copied().filter(|&t| horizon.is_none_or(|h| t <= h)).max();
        let handling = t_clear.map(|c| c - t_detect.max(t_unblocked.unwrap_or(t_detect)));
        match (class, handling) {
            (UnitClass::Failed, Some(h)) => failed.push(h),
            (UnitClass::Affected, Some(h)) => affected.push(h),
            _ => {}
        }
        units.insert(
            u,
            UnitTiming {
                class,
                t_detect,
                t_unblocked,
                t_mitigate_start: a.mitigate,
                t_restore_done: a.restore,
                t_clear,
                handling,
            },
        );
    }
    let total_recovery = match (first_detect, last_normal) {
        (Some(f), Some(l)) if log.stuck.is_empty() => Some(l - f),
        _ => None,
    };
    TimingReport {
        units,
        failed_handling_avg: average(&failed),
        affected_clearing_avg: average(&affected),
        total_recovery,
        timed_out: log.timed_out(),
        stuck: log.stuck.clone(),
    }
}

fn opt(m: Option<Millis>) -> String {
    m.map_or_else(|| "-".to_string(), |m| m.to_string())
}

impl TimingReport {
    /// Human-readable tables, a `---` line, then the report as JSON.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>4}  {:<8}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
            "unit", "class", "detect", "unblocked", "mitigate", "restored", "clear", "handling"
        );
        for (u, t) in &self.units {
            let class = match t.class {
                UnitClass::Failed => "failed",
                UnitClass::Affected => "affected",
            };
            let _ = writeln!(
                s,
                "{:>4}  {:<8}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}",
                u.0,
                class,
                t.t_detect.to_string(),
                opt(t.t_unblocked),
                opt(t.t_mitigate_start),
                opt(t.t_restore_done),
                opt(t.t_clear),
                opt(t.handling)
            );
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "failed handling (avg):   {}", opt(self.failed_handling_avg));
        let _ = writeln!(s, "affected clearing (avg): {}", opt(self.affected_clearing_avg));
        let _ = writeln!(s, "total recovery:          {}", opt(self.total_recovery));
        if self.timed_out {
            let stuck: Vec<String> = self.stuck.iter().map(UnitId::to_string).collect();
            let _ = writeln!(s, "TIMEOUT: units not recovered: {}", stuck.join(" "));
        }
        s.push_str("---\n");
        s.push_str(&serde_json::to_string_pretty(self).expect("report serializes"));
        s.push('\n');
        s
    }
}
