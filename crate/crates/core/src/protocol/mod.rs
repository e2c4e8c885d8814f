//! Per-unit cooperation state machine.
//!
//! A unit whose analyzer fires goes `Pending`, asks its upstream units for
//! their status and tells its downstream units it is sick. It mitigates only
//! once no upstream failure is visible, so the root cause of a cascade is
//! handled first and merely affected units clear on their own.

pub mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::clock::Millis;
use crate::model::{UnitId, UnitNode};

/// Status requests unanswered for this many beacon periods count as failures.
pub const REQUEST_TIMEOUT_PERIODS: i64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnitState {
    Normal,
    Pending,
    Failed,
}

impl fmt::Display for UnitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnitState::Normal => "normal",
            UnitState::Pending => "pending",
            UnitState::Failed => "failed",
        })
    }
}

/// Failure beacon (`type=unit`). Also used as the reply to a status request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Beacon {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub source_id: UnitId,
    pub sick_bit: bool,
    /// Ascending, without duplicates.
    pub failure_queue: Vec<UnitId>,
}

impl Beacon {
    pub fn is_clear(&self) -> bool {
        !self.sick_bit && self.failure_queue.is_empty()
    }

    /// Ids this beacon makes visible to a receiver.
    pub fn contribution(&self) -> impl Iterator<Item = UnitId> + '_ {
        self.sick_bit.then_some(self.source_id).into_iter().chain(self.failure_queue.iter().copied())
    }
}

/// Status request (`type=status_req`), carrying the requester's own status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatusRequest {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub source_id: UnitId,
    pub target_id: UnitId,
    pub sick_bit: bool,
    pub failure_queue: Vec<UnitId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Beacon(Beacon),
    StatusRequest(StatusRequest),
}

impl Message {
    pub fn source_id(&self) -> UnitId {
        match self {
            Message::Beacon(b) => b.source_id,
            Message::StatusRequest(r) => r.source_id,
        }
    }

    pub fn seq(&self) -> u64 {
        match self {
            Message::Beacon(b) => b.seq,
            Message::StatusRequest(r) => r.seq,
        }
    }
}

/// A message addressed to one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: UnitId,
    pub msg: Message,
}

/// Things worth logging that do not change what is sent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Note {
    /// Beacon from a unit that is not upstream.
    Ignored {
        from: UnitId,
        seq: u64,
    },
    /// Beacon whose seq does not exceed the stored one.
    Stale {
        from: UnitId,
        seq: u64,
    },
    /// Status request addressed to another unit.
    Misaddressed {
        from: UnitId,
        target: UnitId,
    },
    /// Status request unanswered past the timeout; re-sent.
    RequestTimeout {
        upstream: UnitId,
    },
    /// Cycle members treated as non-blocking.
    CycleBreak {
        peers: Vec<UnitId>,
    },
    StateChange {
        from: UnitState,
        to: UnitState,
    },
}

#[derive(Debug, Clone, Copy)]
struct PendingRequest {
    first_sent: Millis,
    last_sent: Millis,
}

/// Cooperation state of one unit.
#[derive(Debug, Clone)]
pub struct UnitProtocolState {
    node: UnitNode,
    state: UnitState,
    sick_bit: bool,
    latest_upstream: BTreeMap<UnitId, (Beacon, Millis)>,
    mitigation_in_progress: bool,
    beacon_period: Millis,
    last_beacon: Option<Millis>,
    next_seq: u64,
    requests_out: BTreeMap<UnitId, PendingRequest>,
    requests_in: Vec<StatusRequest>,
    cycle_peers: BTreeSet<UnitId>,
    last_sent_queue: Option<Vec<UnitId>>,
    escalation: bool,
    stale_dropped: u64,
    ignored: u64,
    notes: Vec<Note>,
}

impl UnitProtocolState {
    pub fn new(node: UnitNode, beacon_period: Millis) -> Self {
        assert!(beacon_period > Millis::ZERO, "beacon period must be positive");
        UnitProtocolState {
            node,
            state: UnitState::Normal,
            sick_bit: false,
            latest_upstream: BTreeMap::new(),
            mitigation_in_progress: false,
            beacon_period,
            last_beacon: None,
            next_seq: 0,
            requests_out: BTreeMap::new(),
            requests_in: Vec::new(),
            cycle_peers: BTreeSet::new(),
            last_sent_queue: None,
            escalation: false,
            stale_dropped: 0,
            ignored: 0,
            notes: Vec::new(),
        }
    }

    /// Members of the cycle this unit lies on, for cycle breaking.
    pub fn with_cycle_peers(mut self, peers: BTreeSet<UnitId>) -> Self {
        self.cycle_peers = peers;
        self
    }

    pub fn id(&self) -> UnitId {
        self.node.id
    }

    pub fn node(&self) -> &UnitNode {
        &self.node
    }

    pub fn state(&self) -> UnitState {
        self.state
    }

    pub fn sick_bit(&self) -> bool {
        self.sick_bit
    }

    pub fn mitigation_in_progress(&self) -> bool {
        self.mitigation_in_progress
    }

    pub fn escalation_requested(&self) -> bool {
        self.escalation
    }

    pub fn stale_dropped(&self) -> u64 {
        self.stale_dropped
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    pub fn latest_upstream(&self, id: UnitId) -> Option<&Beacon> {
        self.latest_upstream.get(&id).map(|(b, _)| b)
    }

    pub fn drain_notes(&mut self) -> Vec<Note> {
        std::mem::take(&mut self.notes)
    }

    /// The failure queue as carried in beacons: empty while `Normal`.
    pub fn failure_queue(&self, now: Millis) -> Vec<UnitId> {
        if self.state == UnitState::Normal {
            Vec::new()
        } else {
            self.visible_failure_set(now).into_iter().collect()
        }
    }

    /// Union of the stored upstream beacons' contributions, plus upstream
    /// units whose status request is overdue; own id removed.
    pub fn visible_failure_set(&self, now: Millis) -> BTreeSet<UnitId> {
        let mut set = self.raw_failure_set(now);
        set.remove(&self.node.id);
        set
    }

    fn raw_failure_set(&self, now: Millis) -> BTreeSet<UnitId> {
        let timeout = self.request_timeout();
        let mut set: BTreeSet<UnitId> = self.latest_upstream.values().flat_map(|(b, _)| b.contribution()).collect();
        for (&up, req) in &self.requests_out {
            if now - req.first_sent >= timeout {
                set.insert(up);
            }
        }
        set
    }

    /// Visible failures that hold back mitigation. When this unit's own
    /// sickness has come back around a cycle and it has the smallest id among
    /// the sick cycle members, the other members do not block it.
    pub fn blocking_set(&self, now: Millis) -> BTreeSet<UnitId> {
        let raw = self.raw_failure_set(now);
        let mut set = raw.clone();
        set.remove(&self.node.id);
        if raw.contains(&self.node.id) {
            let sick_peers: BTreeSet<UnitId> = set.intersection(&self.cycle_peers).copied().collect();
            if sick_peers.first().is_some_and(|&p| self.node.id < p) {
                set.retain(|id| !sick_peers.contains(id));
            }
        }
        set
    }

    fn request_timeout(&self) -> Millis {
        Millis::from_hundredths(self.beacon_period.hundredths() * REQUEST_TIMEOUT_PERIODS)
    }

    fn next_seq(&mut self) -> u64 {
        let s = self.next_seq;
        self.next_seq += 1;
        s
    }

    fn set_state(&mut self, to: UnitState) {
        if self.state != to {
            self.notes.push(Note::StateChange { from: self.state, to });
            self.state = to;
        }
    }

    fn own_beacon(&mut self, now: Millis) -> Beacon {
        Beacon {
            seq: self.next_seq(),
            timestamp_ms: now.ceil_ms(),
            source_id: self.node.id,
            sick_bit: self.sick_bit,
            failure_queue: self.failure_queue(now),
        }
    }

    /// One copy of the current beacon per downstream unit, sharing a seq.
    fn beacon_downstream(&mut self, now: Millis) -> Vec<Outgoing> {
        if self.node.down.is_empty() {
            return Vec::new();
        }
        let b = self.own_beacon(now);
        self.last_beacon = Some(now);
        self.last_sent_queue = Some(b.failure_queue.clone());
        self.node.down.iter().map(|&to| Outgoing { to, msg: Message::Beacon(b.clone()) }).collect()
    }

    fn request(&mut self, up: UnitId, now: Millis) -> Outgoing {
        let msg = StatusRequest {
            seq: self.next_seq(),
            timestamp_ms: now.ceil_ms(),
            source_id: self.node.id,
            target_id: up,
            sick_bit: self.sick_bit,
            failure_queue: self.failure_queue(now),
        };
        Outgoing { to: up, msg: Message::StatusRequest(msg) }
    }

    /// Feeds the local analyzer verdict.
    pub fn on_analysis(&mut self, detected: bool, now: Millis) -> Vec<Outgoing> {
        if self.state == UnitState::Failed {
            return Vec::new();
        }
        match (detected, self.state) {
            (true, UnitState::Normal) => {
                self.sick_bit = true;
                self.set_state(UnitState::Pending);
                let ups: Vec<UnitId> = self.node.up.iter().copied().collect();
                let mut out = Vec::with_capacity(ups.len() + self.node.down.len());
                for up in ups {
                    self.requests_out.insert(up, PendingRequest { first_sent: now, last_sent: now });
                    out.push(self.request(up, now));
                }
                out.extend(self.beacon_downstream(now));
                out
            }
            (false, _) if self.sick_bit => {
                self.clear();
                self.beacon_downstream(now)
            }
            _ => Vec::new(),
        }
    }

    fn clear(&mut self) {
        self.sick_bit = false;
        self.mitigation_in_progress = false;
        self.requests_out.clear();
        self.set_state(UnitState::Normal);
    }

    /// Stores a beacon from an upstream unit. A pending unit re-announces
    /// itself downstream when its failure queue changes as a result.
    pub fn on_beacon(&mut self, b: Beacon, now: Millis) -> Vec<Outgoing> {
        let from = b.source_id;
        if !self.node.up.contains(&from) {
            self.ignored += 1;
            self.notes.push(Note::Ignored { from, seq: b.seq });
            return Vec::new();
        }
        if self.latest_upstream.get(&from).is_some_and(|(s, _)| b.seq <= s.seq) {
            self.stale_dropped += 1;
            self.notes.push(Note::Stale { from, seq: b.seq });
            return Vec::new();
        }
        self.latest_upstream.insert(from, (b, now));
        self.requests_out.remove(&from);
        if self.state == UnitState::Pending {
            let queue = self.failure_queue(now);
            if self.last_sent_queue.as_ref() != Some(&queue) {
                return self.beacon_downstream(now);
            }
        }
        Vec::new()
    }

    /// Queues a status request; it is answered on the next [`tick`](Self::tick).
    pub fn on_status_request(&mut self, r: StatusRequest) {
        if r.target_id != self.node.id {
            self.notes.push(Note::Misaddressed { from: r.source_id, target: r.target_id });
            return;
        }
        self.requests_in.push(r);
    }

    /// Answers queued status requests, emits the periodic beacon while
    /// pending or mitigating, and re-sends overdue status requests.
    pub fn tick(&mut self, now: Millis) -> Vec<Outgoing> {
        let mut out = Vec::new();
        for r in std::mem::take(&mut self.requests_in) {
            let reply = self.own_beacon(now);
            out.push(Outgoing { to: r.source_id, msg: Message::Beacon(reply) });
        }
        let active = self.state == UnitState::Pending || self.mitigation_in_progress;
        if active && self.last_beacon.is_none_or(|t| now - t >= self.beacon_period) {
            out.extend(self.beacon_downstream(now));
        }
        if self.state == UnitState::Pending {
            let timeout = self.request_timeout();
            let mut resend: Vec<UnitId> =
                self.requests_out.iter().filter(|(_, r)| now - r.last_sent >= timeout).map(|(&up, _)| up).collect();
            // A sick upstream that fell silent may have had its clear beacon lost.
            for (&up, (b, at)) in &self.latest_upstream {
                if b.sick_bit && now - *at >= timeout && !self.requests_out.contains_key(&up) {
                    self.requests_out.insert(up, PendingRequest { first_sent: now, last_sent: now });
                    resend.push(up);
                }
            }
            resend.sort();
            resend.dedup();
            for up in resend {
                if let Some(r) = self.requests_out.get_mut(&up) {
                    if r.last_sent != now {
                        self.notes.push(Note::RequestTimeout { upstream: up });
                    }
                    r.last_sent = now;
                }
                out.push(self.request(up, now));
            }
        }
        out
    }

    /// Mitigation gate: true iff the unit is pending, sick, and nothing
    /// upstream blocks it; the unit then goes `Failed`.
    pub fn try_mitigate(&mut self, now: Millis) -> bool {
        if self.state != UnitState::Pending || !self.sick_bit {
            return false;
        }
        let visible = self.visible_failure_set(now);
        if !self.blocking_set(now).is_empty() {
            return false;
        }
        if !visible.is_empty() {
            self.notes.push(Note::CycleBreak { peers: visible.into_iter().collect() });
        }
        self.set_state(UnitState::Failed);
        self.mitigation_in_progress = true;
        true
    }

    /// Outcome of a mitigation. On success the unit clears; otherwise it
    /// returns to `Pending`, requesting escalation when no budget remains.
    pub fn on_mitigation_complete(&mut self, success: bool, budget_remaining: bool, now: Millis) -> Vec<Outgoing> {
        if self.state != UnitState::Failed {
            return Vec::new();
        }
        if success {
            self.clear();
            self.beacon_downstream(now)
        } else {
            self.mitigation_in_progress = false;
            self.set_state(UnitState::Pending);
            if !budget_remaining {
                self.escalation = true;
            }
            Vec::new()
        }
    }

    /// Global restart: back to a clean `Normal` state. Sequence numbers keep
    /// increasing so receivers never see a regression.
    pub fn reset(&mut self) {
        self.clear();
        self.latest_upstream.clear();
        self.requests_in.clear();
        self.last_beacon = None;
        self.last_sent_queue = None;
        self.escalation = false;
    }
}
