//! Scenario files: the component model, isolation, detectors, channel and
//! injected faults of one simulation run, as JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Millis;
use crate::mape::{AdaptationConfig, ConfigError, ProcessInfo, ProcessWhitelist, SubNode, SyscallBaseline};
use crate::model::{
    derive_dfg, validate_model, ComponentModel, ComponentSpec, DataFlowGraph, DfgError, IsolationRecord, IsolationSpec,
    Port, PortRef, UnitId, Violation,
};
use crate::policy::{parse_policy, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    ResourceExhaustion,
    RogueProcess,
    SyscallAnomaly,
    CanFlood,
    Crash,
}

impl FaultKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultKind::ResourceExhaustion => "resource_exhaustion",
            FaultKind::RogueProcess => "rogue_process",
            FaultKind::SyscallAnomaly => "syscall_anomaly",
            FaultKind::CanFlood => "can_flood",
            FaultKind::Crash => "crash",
        }
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How an upstream fault shows up in a downstream unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Effect {
    /// Same kind as the originating fault.
    #[default]
    Inherit,
    /// Does not propagate.
    None,
    ResourceExhaustion,
    RogueProcess,
    SyscallAnomaly,
    CanFlood,
    Crash,
}

impl Effect {
    /// The fault kind a downstream unit experiences for an origin of `origin`.
    pub fn apply(self, origin: FaultKind) -> Option<FaultKind> {
        match self {
            Effect::Inherit => Some(origin),
            Effect::None => None,
            Effect::ResourceExhaustion => Some(FaultKind::ResourceExhaustion),
            Effect::RogueProcess => Some(FaultKind::RogueProcess),
            Effect::SyscallAnomaly => Some(FaultKind::SyscallAnomaly),
            Effect::CanFlood => Some(FaultKind::CanFlood),
            Effect::Crash => Some(FaultKind::Crash),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeOverride {
    pub from: UnitId,
    pub to: UnitId,
    pub effect: Effect,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    /// Per-hop delay before a downstream unit starts and stops misbehaving.
    #[serde(default)]
    pub delay_ms: u64,
    #[serde(default)]
    pub detector: Effect,
    #[serde(default)]
    pub edges: Vec<EdgeOverride>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub t_ms: u64,
    pub unit_id: UnitId,
    pub kind: FaultKind,
    /// Number of mitigations the fault survives before it goes away.
    #[serde(default)]
    pub persist_mitigations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default)]
    pub delay_ms: Millis,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { delay_ms: Millis::ZERO, loss_rate: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Backups are prepared; only the restore latency applies.
    #[default]
    Hot,
    /// Containers are booted and services launched on demand.
    Cold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub mode: PartitionMode,
    pub container_boot_ms: Millis,
    pub service_launch_ms: Millis,
    pub hot_restore_ms: Millis,
    pub stop_delay_ms: Millis,
    pub restore_overhead_ms: Millis,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            mode: PartitionMode::Hot,
            container_boot_ms: Millis::from_hundredths(46682),
            service_launch_ms: Millis::from_hundredths(63919),
            hot_restore_ms: Millis::from_ms(650),
            stop_delay_ms: Millis::from_ms(200),
            restore_overhead_ms: Millis::ZERO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub static_threshold_pct: f64,
    pub sigma_mult: f64,
    pub history: usize,
    pub k: usize,
    pub m: usize,
    pub syscall_slack: f64,
    pub heartbeat_misses: u64,
    pub can_tolerance_ms: u64,
    pub training_windows: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            static_threshold_pct: 90.0,
            sigma_mult: 3.0,
            history: 30,
            k: 3,
            m: 2,
            syscall_slack: 0.1,
            heartbeat_misses: 3,
            can_tolerance_ms: 20,
            training_windows: 20,
        }
    }
}

/// Reference per-class costs used to predict total recovery time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibration {
    pub failed_handling_ms: Millis,
    pub affected_clearing_ms: Millis,
}

impl Default for Calibration {
    fn default() -> Self {
        Calibration {
            failed_handling_ms: Millis::from_hundredths(89300),
            affected_clearing_ms: Millis::from_hundredths(29610),
        }
    }
}

/// A periodic CAN stream a unit observes on its bus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanStream {
    #[serde(deserialize_with = "frame_id")]
    pub frame_id: u32,
    pub period_ms: u64,
    /// Each frame echoes a command issued this long before it.
    #[serde(default = "default_can_latency")]
    pub latency_ms: u64,
}

fn default_can_latency() -> u64 {
    2
}

fn frame_id<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u32, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(u32),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(n) => Ok(n),
        Raw::Text(s) => {
            crate::policy::parse_frame_id(&s).ok_or_else(|| serde::de::Error::custom(format!("bad frame id `{s}`")))
        }
    }
}

/// Synthetic behaviour of a healthy unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryConfig {
    pub cpu_pct: f64,
    pub mem_pct: f64,
    /// Uniform jitter added to cpu and memory.
    pub noise_pct: f64,
    /// Processes running in the partition; defaults to one named after the component.
    pub processes: Vec<ProcessEntry>,
    pub syscalls: BTreeMap<u32, u64>,
    pub can: Vec<CanStream>,
}

impl Default for TelemetryConfig {
    fn default() -> Self {
        TelemetryConfig {
            cpu_pct: 30.0,
            mem_pct: 40.0,
            noise_pct: 0.0,
            processes: Vec::new(),
            syscalls: [(0, 40), (1, 25), (3, 12), (231, 1)].into_iter().collect(),
            can: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessEntry {
    pub pid: u32,
    pub name: String,
    pub cr3: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentEntry {
    name: String,
    id: UnitId,
    #[serde(default)]
    provided: Vec<Port>,
    #[serde(default)]
    required: Vec<Port>,
    #[serde(default)]
    subcomponents: Vec<ComponentSpec>,
    #[serde(default)]
    wiring: Vec<(PortRef, PortRef)>,
    isolation: IsolationRecord,
    #[serde(default)]
    adaptation_file: Option<PathBuf>,
    #[serde(default)]
    telemetry: TelemetryConfig,
    /// Inline CAN policy text.
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    policy_file: Option<PathBuf>,
    #[serde(default)]
    whitelist_file: Option<PathBuf>,
    #[serde(default)]
    syscall_baseline_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default = "default_dims")]
    resource_dims: Vec<String>,
    #[serde(default)]
    shareable_dims: BTreeSet<String>,
    host: Vec<f64>,
    components: Vec<ComponentEntry>,
    #[serde(default)]
    connections: Vec<(String, String)>,
    #[serde(default = "default_period")]
    beacon_period_ms: Millis,
    #[serde(default = "default_period")]
    window_ms: Millis,
    #[serde(default)]
    channel: ChannelConfig,
    #[serde(default)]
    partition: PartitionConfig,
    #[serde(default)]
    detectors: DetectorConfig,
    #[serde(default)]
    injections: Vec<Injection>,
    #[serde(default)]
    propagation: PropagationConfig,
    duration_ms: u64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    calibration: Calibration,
}

fn default_dims() -> Vec<String> {
    vec!["cores".into(), "memory_mb".into()]
}

fn default_period() -> Millis {
    Millis::from_ms(100)
}

/// Everything a unit's agent needs besides the graph.
#[derive(Debug, Clone)]
pub struct UnitSetup {
    pub id: UnitId,
    pub name: String,
    pub record: IsolationRecord,
    pub adaptation: AdaptationConfig,
    pub telemetry: TelemetryConfig,
    pub policy: Option<Policy>,
    pub whitelist: ProcessWhitelist,
    pub baseline: Option<SyscallBaseline>,
}

impl UnitSetup {
    pub fn processes(&self) -> Vec<ProcessInfo> {
        if self.telemetry.processes.is_empty() {
            return vec![ProcessInfo {
                pid: 1000 + self.id.0,
                name: slug(&self.name),
                cr3: 0x1000 * (u64::from(self.id.0) + 1),
            }];
        }
        self.telemetry.processes.iter().map(|p| ProcessInfo { pid: p.pid, name: p.name.clone(), cr3: p.cr3 }).collect()
    }
}

/// A loaded and validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ComponentModel,
    pub isolation: IsolationSpec,
    pub host: Vec<f64>,
    pub dfg: DataFlowGraph,
    pub units: BTreeMap<UnitId, UnitSetup>,
    pub beacon_period: Millis,
    pub window: Millis,
    pub channel: ChannelConfig,
    pub partition: PartitionConfig,
    pub detectors: DetectorConfig,
    pub injections: Vec<Injection>,
    pub propagation: PropagationConfig,
    pub duration: Millis,
    pub seed: u64,
    pub calibration: Calibration,
    /// Non-fatal findings such as data-flow cycles.
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("model has {} violation(s)", .0.len())]
    Model(Vec<Violation>),
    #[error(transparent)]
    Graph(#[from] DfgError),
    #[error("component `{component}`: {message}")]
    Component { component: String, message: String },
    #[error("adaptation file {path}: {source}")]
    Adaptation { path: PathBuf, source: ConfigError },
    #[error("injection {index}: {message}")]
    Injection { index: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Reads and validates a scenario file. Relative paths inside it are
/// resolved against its directory.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = read(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Scenario::from_json(&text, &base)
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn slug(name: &str) -> String {
    let mut out = String::new();
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    out.trim_end_matches('-').to_string()
}

/// The adaptation config used when a component names no file: a main
/// partition plus one backup per budgeted switch.
pub fn default_adaptation(name: &str, id: UnitId, record: &IsolationRecord) -> AdaptationConfig {
    let s = slug(name);
    let kind = if record.isolation_level == 0 { "vm" } else { "container" };
    let mut c = AdaptationConfig::single(s.clone(), kind, format!("10.0.{}.2", id.0));
    if record.mitigation_policy == 1 {
        for n in 1..=record.mitigation_budget {
            c.sub_nodes.push(SubNode {
                id: n,
                name: format!("{s}-b{n}"),
                launch_file_path: format!("/opt/units/{s}/launch/{s}.launch"),
                address: format!("10.0.{}.{}", id.0, 2 + 10 * n),
                partition_kind: kind.to_string(),
            });
        }
    }
    c
}

impl Scenario {
    pub fn from_json(text: &str, base: &Path) -> Result<Scenario, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de)
            .map_err(|e| ScenarioError::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
        build(file, base)
    }

    pub fn ids(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.units.keys().copied()
    }

    pub fn injected(&self) -> BTreeSet<UnitId> {
        self.injections.iter().map(|i| i.unit_id).collect()
    }
}

fn build(file: ScenarioFile, base: &Path) -> Result<Scenario, ScenarioError> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    if file.beacon_period_ms <= Millis::ZERO || file.window_ms <= Millis::ZERO {
        return Err(ScenarioError::Invalid("beacon_period_ms and window_ms must be positive".into()));
    }
    if !(0.0..=1.0).contains(&file.channel.loss_rate) {
        return Err(ScenarioError::Invalid(format!("channel.loss_rate {} outside [0, 1]", file.channel.loss_rate)));
    }
    if file.channel.delay_ms < Millis::ZERO {
        return Err(ScenarioError::Invalid("channel.delay_ms must not be negative".into()));
    }
    let d = &file.detectors;
    if d.k == 0 || d.m == 0 || d.m > d.k {
        return Err(ScenarioError::Invalid(format!("detectors: need 1 <= m <= k, got k={} m={}", d.k, d.m)));
    }

    let mut model = ComponentModel { components: Vec::new(), connections: file.connections.clone() };
    let mut isolation = IsolationSpec::with_dims(file.resource_dims.clone());
    isolation.shareable = file.shareable_dims.clone();
    let mut ids = BTreeMap::new();
    let mut seen_ids: BTreeMap<UnitId, String> = BTreeMap::new();
    for c in &file.components {
        if let Some(first) = seen_ids.insert(c.id, c.name.clone()) {
            return Err(DfgError::DuplicateId { id: c.id, first, second: c.name.clone() }.into());
        }
        model.components.push(ComponentSpec {
            name: c.name.clone(),
            provided: c.provided.clone(),
            required: c.required.clone(),
            subcomponents: c.subcomponents.clone(),
            wiring: c.wiring.clone(),
        });
        isolation.records.insert(c.name.clone(), c.isolation.clone());
        ids.insert(c.name.clone(), c.id);
    }

    let violations = validate_model(&model, &isolation, &file.host);
    if !violations.is_empty() {
        return Err(ScenarioError::Model(violations));
    }
    let dfg = derive_dfg(&model, &ids)?;

    let mut warnings = Vec::new();
    for cycle in dfg.detect_cycles() {
        let mut path: Vec<String> = cycle.iter().map(|u| u.to_string()).collect();
        if let Some(first) = path.first().cloned() {
            path.push(first);
        }
        warnings.push(format!("data-flow cycle {}", path.join(" -> ")));
    }

    let mut units = BTreeMap::new();
    for c in &file.components {
        let component_err = |message: String| ScenarioError::Component { component: c.name.clone(), message };
        let adaptation = match &c.adaptation_file {
            Some(p) => {
                let p = resolve(p);
                AdaptationConfig::parse(&read(&p)?).map_err(|source| ScenarioError::Adaptation { path: p, source })?
            }
            None => default_adaptation(&c.name, c.id, &c.isolation),
        };
        if c.isolation.mitigation_policy == 1 {
            let have = adaptation.sub_nodes.len() as u32;
            if have < c.isolation.mitigation_budget {
                warnings.push(format!(
                    "component `{}`: budget {} but only {have} backup sub-node(s)",
                    c.name, c.isolation.mitigation_budget
                ));
            }
        }
        let policy_text = match (&c.policy, &c.policy_file) {
            (Some(_), Some(_)) => return Err(component_err("both `policy` and `policy_file` given".into())),
            (Some(t), None) => Some(t.clone()),
            (None, Some(p)) => Some(read(&resolve(p))?),
            (None, None) => None,
        };
        let policy =
            policy_text.map(|t| parse_policy(&t).map_err(|e| component_err(format!("policy: {e}")))).transpose()?;
        let baseline = c
            .syscall_baseline_file
            .as_ref()
            .map(|p| {
                read(&resolve(p))?
                    .parse::<SyscallBaseline>()
                    .map_err(|e| component_err(format!("syscall baseline: {e}")))
            })
            .transpose()?;
        let mut setup = UnitSetup {
            id: c.id,
            name: c.name.clone(),
            record: c.isolation.clone(),
            adaptation,
            telemetry: c.telemetry.clone(),
            policy,
            whitelist: ProcessWhitelist::default(),
            baseline,
        };
        setup.whitelist = match &c.whitelist_file {
            Some(p) => ProcessWhitelist::parse(&read(&resolve(p))?),
            None => ProcessWhitelist { names: setup.processes().into_iter().map(|p| p.name).collect() },
        };
        let t = &setup.telemetry;
        for (field, v) in [("cpu_pct", t.cpu_pct), ("mem_pct", t.mem_pct)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(component_err(format!("telemetry.{field} {v} outside [0, 100]")));
            }
        }
        if t.can.iter().any(|s| s.period_ms == 0) {
            return Err(component_err("telemetry.can: period_ms must be positive".into()));
        }
        units.insert(c.id, setup);
    }

    for (index, inj) in file.injections.iter().enumerate() {
        if !units.contains_key(&inj.unit_id) {
            return Err(ScenarioError::Injection { index, message: format!("no unit with id {}", inj.unit_id) });
        }
        if inj.t_ms >= file.duration_ms {
            return Err(ScenarioError::Injection {
                index,
                message: format!("t_ms {} is not before duration_ms {}", inj.t_ms, file.duration_ms),
            });
        }
    }
    for e in &file.propagation.edges {
        if !dfg.flows.contains(&(e.from, e.to)) {
            return Err(ScenarioError::Invalid(format!("propagation edge {} -> {} is not a data flow", e.from, e.to)));
        }
    }

    Ok(Scenario {
        name: file.name,
        model,
        isolation,
        host: file.host,
        dfg,
        units,
        beacon_period: file.beacon_period_ms,
        window: file.window_ms,
        channel: file.channel,
        partition: file.partition,
        detectors: file.detectors,
        injections: file.injections,
        propagation: file.propagation,
        duration: Millis::from_ms(file.duration_ms),
        seed: file.seed,
        calibration: file.calibration,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{
  "name": "two",
  "host": [4, 4096],
  "components": [
    {{"name": "Source", "id": 1, "isolation": {{"resources": [1, 1024], "isolation_level": 0, "mitigation_policy": 0}}}},
    {{"name": "Sink", "id": 2, "isolation": {{"resources": [1, 1024], "isolation_level": 1, "mitigation_policy": 1}}}}
  ],
  "connections": [["Source", "Sink"]],
  "duration_ms": 3000{extra}
}}"#
        )
    }

    #[test]
    fn loads_with_defaults() {
        let s = Scenario::from_json(&minimal(""), Path::new(".")).unwrap();
        assert_eq!(s.units.len(), 2);
        assert_eq!(s.window, Millis::from_ms(100));
        assert_eq!(s.units[&UnitId(2)].adaptation.sub_nodes.len(), 1);
        assert_eq!(s.units[&UnitId(2)].adaptation.node.name, "sink");
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn unknown_field_reports_its_path() {
        let text = minimal("").replace(r#""id": 2,"#, r#""id": 2, "colour": "red","#);
        match Scenario::from_json(&text, Path::new(".")) {
            Err(ScenarioError::Schema { path, message }) => {
                assert_eq!(path, "components[1].colour");
                assert!(message.contains("colour"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn injection_needs_a_unit() {
        let text = minimal(r#", "injections": [{"t_ms": 100, "unit_id": 9, "kind": "crash"}]"#);
        assert!(matches!(Scenario::from_json(&text, Path::new(".")), Err(ScenarioError::Injection { index: 0, .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = minimal("").replace(r#""id": 2"#, r#""id": 1"#);
        assert!(matches!(
            Scenario::from_json(&text, Path::new(".")),
            Err(ScenarioError::Graph(DfgError::DuplicateId { .. }))
        ));
    }

    #[test]
    fn overcommit_is_a_model_error() {
        let text = minimal("").replace("[4, 4096]", "[1, 4096]");
        match Scenario::from_json(&text, Path::new(".")) {
            Err(ScenarioError::Model(v)) => assert!(v.iter().any(|v| v.to_string().contains("cores"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cycles_are_warnings() {
        let text = minimal("").replace(r#"[["Source", "Sink"]]"#, r#"[["Source", "Sink"], ["Sink", "Source"]]"#);
        let s = Scenario::from_json(&text, Path::new(".")).unwrap();
        assert_eq!(s.warnings, vec!["data-flow cycle 1 -> 2 -> 1".to_string()]);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Object Tracking"), "object-tracking");
        assert_eq!(slug("  Path--Following "), "path-following");
    }
}
