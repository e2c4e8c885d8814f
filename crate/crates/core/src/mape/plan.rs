use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use super::config::AdaptationConfig;
use crate::model::{IsolationRecord, UnitId};

/// Target name used by the system-reboot escalation.
pub const SYSTEM: &str = "system";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Start,
    Stop,
    Reboot,
    Pause,
    Launch,
}

impl Opcode {
    pub fn as_str(self) -> &'static str {
        match self {
            Opcode::Start => "start",
            Opcode::Stop => "stop",
            Opcode::Reboot => "reboot",
            Opcode::Pause => "pause",
            Opcode::Launch => "launch",
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Opcode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "start" => Opcode::Start,
            "stop" => Opcode::Stop,
            "reboot" => Opcode::Reboot,
            "pause" => Opcode::Pause,
            "launch" => Opcode::Launch,
            other => return Err(format!("unknown opcode `{other}`")),
        })
    }
}

/// Extra arguments retrieved from the adaptation config.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlanPayload {
    pub address: String,
    pub partition_kind: String,
    pub args: Vec<String>,
}

/// One abstract partition-manager invocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoAction {
    pub opcode: Opcode,
    /// Partition the opcode acts on.
    pub target: String,
    /// Backup taking over, empty for resets and reboots.
    pub successor_name: String,
    pub launch_file_path: String,
    pub payload: PlanPayload,
}

/// A pseudo action with its message header (`type=plan`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanMessage {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub source_id: UnitId,
    pub action: PseudoAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanKind {
    /// Switch to the backup sub-node with this id.
    Backup {
        successor: u32,
    },
    Reset,
    Reboot,
}

impl fmt::Display for PlanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanKind::Backup { successor } => write!(f, "backup({successor})"),
            PlanKind::Reset => f.write_str("reset"),
            PlanKind::Reboot => f.write_str("reboot"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub kind: PlanKind,
    pub actions: Vec<PseudoAction>,
}

impl Plan {
    pub fn to_messages(&self, source_id: UnitId, timestamp_ms: u64, first_seq: u64) -> Vec<PlanMessage> {
        self.actions
            .iter()
            .zip(first_seq..)
            .map(|(a, seq)| PlanMessage { seq, timestamp_ms, source_id, action: a.clone() })
            .collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("component `{component}`: no sub-node with id {id} to switch to")]
    MissingSuccessor { component: String, id: u32 },
    #[error("component `{component}`: no node with id {id} is running")]
    UnknownCurrent { component: String, id: u32 },
    #[error("component `{component}`: sub-node `{name}` has an empty launch_file_path")]
    EmptyLaunchPath { component: String, name: String },
}

/// Mitigation plan for a component currently running on node `current`
/// that has already used `budget_used` mitigations.
pub fn plan(
    record: &IsolationRecord,
    config: &AdaptationConfig,
    budget_used: u32,
    current: u32,
) -> Result<Plan, PlanError> {
    let component = &config.node.name;
    if budget_used >= record.mitigation_budget {
        let action = PseudoAction {
            opcode: Opcode::Reboot,
            target: SYSTEM.to_string(),
            successor_name: String::new(),
            launch_file_path: String::new(),
            payload: PlanPayload::default(),
        };
        return Ok(Plan { kind: PlanKind::Reboot, actions: vec![action] });
    }
    let current_name = config
        .name_of(current)
        .ok_or_else(|| PlanError::UnknownCurrent { component: component.clone(), id: current })?
        .to_string();
    let current_payload = match config.sub_node(current) {
        Some(s) => PlanPayload { address: s.address.clone(), partition_kind: s.partition_kind.clone(), args: vec![] },
        None => PlanPayload {
            address: config.node.address.clone(),
            partition_kind: config.node.partition_kind.clone(),
            args: vec![],
        },
    };
    if record.mitigation_policy == 1 {
        let id = current + 1;
        let succ =
            config.sub_node(id).ok_or_else(|| PlanError::MissingSuccessor { component: component.clone(), id })?;
        if succ.launch_file_path.is_empty() {
            return Err(PlanError::EmptyLaunchPath { component: component.clone(), name: succ.name.clone() });
        }
        let payload =
            PlanPayload { address: succ.address.clone(), partition_kind: succ.partition_kind.clone(), args: vec![] };
        let act = |opcode, target: &str, launch: &str, payload: &PlanPayload| PseudoAction {
            opcode,
            target: target.to_string(),
            successor_name: succ.name.clone(),
            launch_file_path: launch.to_string(),
            payload: payload.clone(),
        };
        let actions = vec![
            act(Opcode::Start, &succ.name, "", &payload),
            act(Opcode::Launch, &succ.name, &succ.launch_file_path, &payload),
            act(Opcode::Stop, &current_name, "", &current_payload),
        ];
        Ok(Plan { kind: PlanKind::Backup { successor: id }, actions })
    } else {
        let act = |opcode| PseudoAction {
            opcode,
            target: current_name.clone(),
            successor_name: String::new(),
            launch_file_path: String::new(),
            payload: current_payload.clone(),
        };
        Ok(Plan { kind: PlanKind::Reset, actions: vec![act(Opcode::Stop), act(Opcode::Start)] })
    }
}

/// Budget consumption and the running node of one component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlannerState {
    pub budget_used: u32,
    pub current: u32,
    pub reboots: u32,
}

impl PlannerState {
    pub fn plan(&self, record: &IsolationRecord, config: &AdaptationConfig) -> Result<Plan, PlanError> {
        plan(record, config, self.budget_used, self.current)
    }

    /// Records that `p` was carried out.
    pub fn apply(&mut self, p: &Plan) {
        match p.kind {
            PlanKind::Backup { successor } => {
                self.budget_used += 1;
                self.current = successor;
            }
            PlanKind::Reset => self.budget_used += 1,
            PlanKind::Reboot => self.reboots += 1,
        }
    }
}
