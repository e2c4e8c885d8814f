//! Time-ordered record of a simulation run.

use std::collections::BTreeMap;
use std::fmt;

use super::scenario::FaultKind;
use crate::clock::Millis;
use crate::mape::{DetectorId, Opcode, PlanKind};
use crate::model::UnitId;
use crate::protocol::UnitState;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Inject { kind: FaultKind, persist: u32 },
    Window { index: u64, scores: Vec<(DetectorId, u8)>, score: u8, voted: bool },
    Send { to: UnitId, line: String },
    Recv { from: UnitId, line: String },
    Drop { to: UnitId, line: String },
    Ignored { from: UnitId, seq: u64 },
    Stale { from: UnitId, seq: u64 },
    State { from: UnitState, to: UnitState },
    Queue { ids: Vec<UnitId> },
    Block { by: Vec<UnitId> },
    Unblock,
    CycleBreak { peers: Vec<UnitId> },
    Timeout { upstream: UnitId },
    Plan { kind: PlanKind, line: String },
    Action { opcode: Opcode, target: String, started: Millis, completed: Millis },
    Restore,
    Probe { clean: bool },
    Escalate,
    Reboot,
    Warn { message: String },
    Final { state: UnitState, sick: bool, queue: Vec<UnitId> },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Inject { .. } => "inject",
            Payload::Window { .. } => "window",
            Payload::Send { .. } => "send",
            Payload::Recv { .. } => "recv",
            Payload::Drop { .. } => "drop",
            Payload::Ignored { .. } => "ignored",
            Payload::Stale { .. } => "stale",
            Payload::State { .. } => "state",
            Payload::Queue { .. } => "queue",
            Payload::Block { .. } => "block",
            Payload::Unblock => "unblock",
            Payload::CycleBreak { .. } => "cycle_break",
            Payload::Timeout { .. } => "timeout",
            Payload::Plan { .. } => "plan",
            Payload::Action { .. } => "action",
            Payload::Restore => "restore",
            Payload::Probe { .. } => "probe",
            Payload::Escalate => "escalate",
            Payload::Reboot => "reboot",
            Payload::Warn { .. } => "warn",
            Payload::Final { .. } => "final",
        }
    }
}

fn ids(v: &[UnitId]) -> String {
    let parts: Vec<String> = v.iter().map(UnitId::to_string).collect();
    format!("[{}]", parts.join(","))
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Inject { kind, persist } => write!(f, "kind={kind} persist={persist}"),
            Payload::Window { index, scores, score, voted } => {
                write!(f, "index={index}")?;
                for (d, s) in scores {
                    write!(f, " {d}={s}")?;
                }
                write!(f, " score={score} voted={}", u8::from(*voted))
            }
            Payload::Send { to, line } => write!(f, "to={to} {line}"),
            Payload::Recv { from, line } => write!(f, "from={from} {line}"),
            Payload::Drop { to, line } => write!(f, "to={to} {line}"),
            Payload::Ignored { from, seq } | Payload::Stale { from, seq } => write!(f, "from={from} seq={seq}"),
            Payload::State { from, to } => write!(f, "{from}->{to}"),
            Payload::Queue { ids: q } => f.write_str(&ids(q)),
            Payload::Block { by } => write!(f, "by={}", ids(by)),
            Payload::CycleBreak { peers } => write!(f, "peers={}", ids(peers)),
            Payload::Timeout { upstream } => write!(f, "upstream={upstream}"),
            Payload::Plan { kind, line } => write!(f, "kind={kind} {line}"),
            Payload::Action { opcode, target, started, completed } => {
                write!(f, "op={opcode} target={target:?} started={started} completed={completed}")
            }
            Payload::Probe { clean } => write!(f, "clean={}", u8::from(*clean)),
            Payload::Warn { message } => f.write_str(message),
            Payload::Final { state, sick, queue } => {
                write!(f, "state={state} sick_bit={} failure_queue={}", u8::from(*sick), ids(queue))
            }
            Payload::Unblock | Payload::Restore | Payload::Escalate | Payload::Reboot => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub t: Millis,
    /// `None` for system-wide events.
    pub unit: Option<UnitId>,
    pub seq: u64,
    pub payload: Payload,
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = self.unit.map_or_else(|| "-".to_string(), |u| u.to_string());
        write!(f, "{} {} {}", self.t, self.payload.kind(), unit)?;
        let body = self.payload.to_string();
        if !body.is_empty() {
            write!(f, " {body}")?;
        }
        Ok(())
    }
}

/// Events of one run ordered by time, then unit (system events first),
/// then recording order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub events: Vec<SimEvent>,
    /// Final protocol state of every unit.
    pub finals: BTreeMap<UnitId, (UnitState, bool, Vec<UnitId>)>,
    /// Units not back to normal when the run ended.
    pub stuck: Vec<UnitId>,
    pub end: Millis,
}

impl EventLog {
    pub(crate) fn push(&mut self, t: Millis, unit: Option<UnitId>, payload: Payload) {
        let seq = self.events.len() as u64;
        self.events.push(SimEvent { t, unit, seq, payload });
    }

    pub(crate) fn sort(&mut self) {
        self.events.sort_by_key(|e| (e.t, e.unit, e.seq));
    }

    pub fn timed_out(&self) -> bool {
        !self.stuck.is_empty()
    }

    pub fn of_unit(&self, unit: UnitId) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(move |e| e.unit == Some(unit))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_format() {
        let mut log = EventLog::default();
        log.push(
            Millis::from_ms(100),
            Some(UnitId(5)),
            Payload::State { from: UnitState::Normal, to: UnitState::Pending },
        );
        log.push(Millis::from_ms(100), None, Payload::Warn { message: "data-flow cycle 1 -> 2 -> 1".into() });
        log.push(Millis::from_hundredths(95001), Some(UnitId(5)), Payload::Restore);
        log.sort();
        assert_eq!(
            log.to_text(),
            "100.00 warn - data-flow cycle 1 -> 2 -> 1\n100.00 state 5 normal->pending\n950.01 restore 5\n"
        );
    }
}
