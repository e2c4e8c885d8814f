use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::UnitId;
use crate::policy::CanEvent;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProcessInfo {
    pub pid: u32,
    pub name: String,
    pub cr3: u64,
}

/// Observations of one unit over one monitoring window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TelemetrySample {
    pub unit_id: UnitId,
    pub window_index: u64,
    pub window_start_ms: u64,
    pub cpu_pct: f64,
    pub mem_pct: f64,
    pub processes: Vec<ProcessInfo>,
    pub syscall_counts: BTreeMap<u32, u64>,
    pub can_frames: Vec<CanEvent>,
    /// Commands the unit itself issued on the bus this window.
    pub can_commands: Vec<CanEvent>,
    pub heartbeat: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SampleError {
    #[error("unit {unit}: {field} = {value} outside [0, 100]")]
    OutOfRange { unit: UnitId, field: &'static str, value: f64 },
}

impl TelemetrySample {
    pub fn validate(&self) -> Result<(), SampleError> {
        for (field, value) in [("cpu_pct", self.cpu_pct), ("mem_pct", self.mem_pct)] {
            if !(0.0..=100.0).contains(&value) {
                return Err(SampleError::OutOfRange { unit: self.unit_id, field, value });
            }
        }
        Ok(())
    }

    pub fn usage(&self) -> ResourceUsage {
        ResourceUsage { cpu_pct: self.cpu_pct, mem_pct: self.mem_pct }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceUsage {
    pub cpu_pct: f64,
    pub mem_pct: f64,
}

/// Allowed process names, one per line in its text form.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ProcessWhitelist {
    pub names: BTreeSet<String>,
}

impl ProcessWhitelist {
    pub fn parse(text: &str) -> Self {
        let names = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        ProcessWhitelist { names }
    }

    pub fn to_text(&self) -> String {
        self.names.iter().map(|n| format!("{n}\n")).collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }
}

/// `(pid, cr3)` of each process as recorded when the component launched.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LaunchSnapshot {
    pub entries: BTreeMap<String, (u32, u64)>,
}

impl LaunchSnapshot {
    pub fn record(processes: &[ProcessInfo]) -> Self {
        LaunchSnapshot { entries: processes.iter().map(|p| (p.name.clone(), (p.pid, p.cr3))).collect() }
    }

    /// Snapshot names must all be whitelisted.
    pub fn is_consistent_with(&self, whitelist: &ProcessWhitelist) -> bool {
        self.entries.keys().all(|n| whitelist.contains(n))
    }
}
