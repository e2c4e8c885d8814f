use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::telemetry::{LaunchSnapshot, ProcessWhitelist, ResourceUsage, TelemetrySample};
use crate::policy::{evaluate_policy, CanEvent, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectorId {
    Resource,
    Process,
    Syscall,
    CanPolicy,
    Heartbeat,
}

impl DetectorId {
    pub const ALL: [DetectorId; 5] =
        [DetectorId::Resource, DetectorId::Process, DetectorId::Syscall, DetectorId::CanPolicy, DetectorId::Heartbeat];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorId::Resource => "resource",
            DetectorId::Process => "process",
            DetectorId::Syscall => "syscall",
            DetectorId::CanPolicy => "can_policy",
            DetectorId::Heartbeat => "heartbeat",
        }
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1 iff either usage exceeds the static threshold or its trailing
/// `mean + sigma_mult · stddev`. An empty history scores 0.
pub fn check_resources(
    sample: &TelemetrySample,
    history: &[ResourceUsage],
    static_threshold_pct: f64,
    sigma_mult: f64,
) -> u8 {
    if history.is_empty() {
        return 0;
    }
    let n = history.len() as f64;
    let exceeds = |value: f64, pick: fn(&ResourceUsage) -> f64| {
        let mean = history.iter().map(pick).sum::<f64>() / n;
        let var = history.iter().map(|h| (pick(h) - mean).powi(2)).sum::<f64>() / n;
        value > static_threshold_pct || value > mean + sigma_mult * var.sqrt()
    };
    u8::from(exceeds(sample.cpu_pct, |h| h.cpu_pct) || exceeds(sample.mem_pct, |h| h.mem_pct))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessFinding {
    NotWhitelisted(String),
    Changed { name: String, expected: (u32, u64) },
    Missing(String),
}

impl fmt::Display for ProcessFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProcessFinding::NotWhitelisted(n) => write!(f, "process `{n}` not whitelisted"),
            ProcessFinding::Changed { name, expected: (pid, cr3) } => {
                write!(f, "process `{name}` no longer pid {pid} cr3 {cr3:#x}")
            }
            ProcessFinding::Missing(n) => write!(f, "process `{n}` missing"),
        }
    }
}

/// 1 iff some process is not whitelisted, or a launch-time process changed
/// its `(pid, cr3)` or disappeared.
pub fn validate_processes(
    sample: &TelemetrySample,
    whitelist: &ProcessWhitelist,
    snapshot: &LaunchSnapshot,
) -> (u8, Vec<ProcessFinding>) {
    let mut findings = Vec::new();
    for p in &sample.processes {
        if !whitelist.contains(&p.name) {
            findings.push(ProcessFinding::NotWhitelisted(p.name.clone()));
        }
    }
    for (name, &(pid, cr3)) in &snapshot.entries {
        let mut same_name = sample.processes.iter().filter(|p| &p.name == name).peekable();
        if same_name.peek().is_none() {
            findings.push(ProcessFinding::Missing(name.clone()));
        } else if !same_name.any(|p| p.pid == pid && p.cr3 == cr3) {
            findings.push(ProcessFinding::Changed { name: name.clone(), expected: (pid, cr3) });
        }
    }
    (u8::from(!findings.is_empty()), findings)
}

/// Per-syscall frequency envelope learned from clean windows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyscallBaseline {
    pub allowed: BTreeSet<u32>,
    /// Inclusive `[min, max]` per id, already widened by the slack.
    pub envelope: BTreeMap<u32, (f64, f64)>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("no clean windows to train from")]
    Empty,
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}

/// Learns the allowed ids and their count envelope. An allowed id absent
/// from a window counts 0 there.
pub fn train_baseline(clean_windows: &[BTreeMap<u32, u64>], slack: f64) -> Result<SyscallBaseline, BaselineError> {
    if clean_windows.is_empty() {
        return Err(BaselineError::Empty);
    }
    let allowed: BTreeSet<u32> = clean_windows.iter().flat_map(|w| w.keys().copied()).collect();
    let envelope = allowed
        .iter()
        .map(|id| {
            let counts = clean_windows.iter().map(|w| w.get(id).copied().unwrap_or(0));
            let (lo, hi) = counts.fold((u64::MAX, 0), |(lo, hi), c| (lo.min(c), hi.max(c)));
            (*id, (lo as f64 * (1.0 - slack), hi as f64 * (1.0 + slack)))
        })
        .collect();
    Ok(SyscallBaseline { allowed, envelope })
}

/// 1 iff an id is not allowed or some count leaves its envelope.
pub fn check_syscalls(counts: &BTreeMap<u32, u64>, baseline: &SyscallBaseline) -> u8 {
    let unknown = counts.keys().any(|id| !baseline.allowed.contains(id));
    let outside = baseline.envelope.iter().any(|(id, &(lo, hi))| {
        let c = counts.get(id).copied().unwrap_or(0) as f64;
        c < lo || c > hi
    });
    u8::from(unknown || outside)
}

impl fmt::Display for SyscallBaseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.allowed.iter().map(u32::to_string).collect();
        writeln!(f, "allowed: {}", ids.join(" "))?;
        for (id, (lo, hi)) in &self.envelope {
            writeln!(f, "{id} {lo} {hi}")?;
        }
        Ok(())
    }
}

impl FromStr for SyscallBaseline {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = SyscallBaseline::default();
        let mut saw_header = false;
        for (n, raw) in s.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| BaselineError::Format { line: n + 1, message };
            if let Some(rest) = line.strip_prefix("allowed:") {
                for tok in rest.split_whitespace() {
                    out.allowed.insert(tok.parse().map_err(|_| err(format!("bad syscall id `{tok}`")))?);
                }
                saw_header = true;
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [id, lo, hi] = parts[..] else {
                return Err(err(format!("expected `syscall_id min max`, found `{line}`")));
            };
            let id: u32 = id.parse().map_err(|_| err(format!("bad syscall id `{id}`")))?;
            let lo: f64 = lo.parse().map_err(|_| err(format!("bad min `{lo}`")))?;
            let hi: f64 = hi.parse().map_err(|_| err(format!("bad max `{hi}`")))?;
            if lo > hi {
                return Err(err(format!("min {lo} exceeds max {hi}")));
            }
            out.envelope.insert(id, (lo, hi));
        }
        if !saw_header {
            return Err(BaselineError::Format { line: 1, message: "missing `allowed:` header".into() });
        }
        Ok(out)
    }
}

/// 1 iff `last_sample_age_ms > misses_allowed × period_ms`.
pub fn heartbeat_check(last_sample_age_ms: u64, period_ms: u64, misses_allowed: u64) -> u8 {
    u8::from(last_sample_age_ms > misses_allowed * period_ms)
}

/// Indexes of frames not justified by an issued command with the same id
/// in `[t − tol_ms, t]`. Each command justifies at most one frame.
pub fn cross_validate_can(frames: &[CanEvent], issued_commands: &[CanEvent], tol_ms: u64) -> BTreeSet<usize> {
    let mut by_id: BTreeMap<u32, Vec<u64>> = BTreeMap::new();
    for c in issued_commands {
        by_id.entry(c.frame_id).or_default().push(c.t_ms);
    }
    let mut by_id: BTreeMap<u32, VecDeque<u64>> = by_id
        .into_iter()
        .map(|(id, mut ts)| {
            ts.sort_unstable();
            (id, ts.into())
        })
        .collect();
    let mut order: Vec<usize> = (0..frames.len()).collect();
    order.sort_by_key(|&i| (frames[i].t_ms, i));
    let mut flagged = BTreeSet::new();
    for i in order {
        let f = frames[i];
        let lo = f.t_ms.saturating_sub(tol_ms);
        let queue = by_id.entry(f.frame_id).or_default();
        // Commands before the window can justify no later frame either.
        while queue.front().is_some_and(|&t| t < lo) {
            queue.pop_front();
        }
        match queue.front() {
            Some(&t) if t <= f.t_ms => {
                queue.pop_front();
            }
            _ => {
                flagged.insert(i);
            }
        }
    }
    flagged
}

/// A per-window anomaly check. Implementations may keep state across windows.
pub trait Detector: Send {
    fn id(&self) -> DetectorId;
    fn score(&mut self, sample: &TelemetrySample) -> u8;
}

/// Static plus trailing-statistics resource check. Only clean windows enter
/// the history so a sustained anomaly does not become the new normal.
#[derive(Debug, Clone)]
pub struct ResourceDetector {
    pub threshold_pct: f64,
    pub sigma_mult: f64,
    pub capacity: usize,
    history: VecDeque<ResourceUsage>,
}

impl ResourceDetector {
    pub fn new(threshold_pct: f64, sigma_mult: f64, capacity: usize) -> Self {
        ResourceDetector { threshold_pct, sigma_mult, capacity, history: VecDeque::new() }
    }

    pub fn observe_clean(&mut self, usage: ResourceUsage) {
        if self.capacity == 0 {
            return;
        }
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(usage);
    }
}

impl Detector for ResourceDetector {
    fn id(&self) -> DetectorId {
        DetectorId::Resource
    }

    fn score(&mut self, sample: &TelemetrySample) -> u8 {
        let history: Vec<ResourceUsage> = self.history.iter().copied().collect();
        let s = check_resources(sample, &history, self.threshold_pct, self.sigma_mult);
        if s == 0 {
            self.observe_clean(sample.usage());
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ProcessDetector {
    pub whitelist: ProcessWhitelist,
    pub snapshot: LaunchSnapshot,
}

impl Detector for ProcessDetector {
    fn id(&self) -> DetectorId {
        DetectorId::Process
    }

    fn score(&mut self, sample: &TelemetrySample) -> u8 {
        validate_processes(sample, &self.whitelist, &self.snapshot).0
    }
}

#[derive(Debug, Clone)]
pub struct SyscallDetector {
    pub baseline: SyscallBaseline,
}

impl Detector for SyscallDetector {
    fn id(&self) -> DetectorId {
        DetectorId::Syscall
    }

    fn score(&mut self, sample: &TelemetrySample) -> u8 {
        check_syscalls(&sample.syscall_counts, &self.baseline)
    }
}

/// Cross-validates observed frames against issued commands and, when a
/// policy is configured, evaluates it at the window start.
#[derive(Debug, Clone)]
pub struct CanDetector {
    pub tolerance_ms: u64,
    pub policy: Option<Policy>,
}

impl Detector for CanDetector {
    fn id(&self) -> DetectorId {
        DetectorId::CanPolicy
    }

    fn score(&mut self, sample: &TelemetrySample) -> u8 {
        let injected = !cross_validate_can(&sample.can_frames, &sample.can_commands, self.tolerance_ms).is_empty();
        let violated =
            self.policy.as_ref().is_some_and(|p| evaluate_policy(p, &sample.can_frames, sample.window_start_ms) == 1);
        u8::from(injected || violated)
    }
}

/// Scores 1 once no heartbeat has been seen for more than
/// `misses_allowed` windows.
#[derive(Debug, Clone)]
pub struct HeartbeatDetector {
    pub period_ms: u64,
    pub misses_allowed: u64,
    last_seen_ms: Option<u64>,
}

impl HeartbeatDetector {
    pub fn new(period_ms: u64, misses_allowed: u64) -> Self {
        HeartbeatDetector { period_ms, misses_allowed, last_seen_ms: None }
    }
}

impl Detector for HeartbeatDetector {
    fn id(&self) -> DetectorId {
        DetectorId::Heartbeat
    }

    fn score(&mut self, sample: &TelemetrySample) -> u8 {
        let end = sample.window_start_ms + self.period_ms;
        if sample.heartbeat {
            self.last_seen_ms = Some(end);
            return 0;
        }
        let last = *self.last_seen_ms.get_or_insert(sample.window_start_ms);
        heartbeat_check(end - last, self.period_ms, self.misses_allowed)
    }
}
