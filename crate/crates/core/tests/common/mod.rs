//! Random scenario builders shared by integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use unitguard::protocol::UnitState;
use unitguard::sim::EventLog;
use unitguard::sim::{Payload, Scenario};

pub const KINDS: [&str; 5] = ["resource_exhaustion", "rogue_process", "syscall_anomaly", "can_flood", "crash"];

/// A random DAG over ids `1..=n` whose edge direction is unrelated to id order.
#[derive(Debug, Clone)]
pub struct RandomCase {
    pub n: u32,
    pub edges: BTreeSet<(u32, u32)>,
    pub injected: BTreeSet<u32>,
    pub t_inject: u64,
    pub kinds: BTreeMap<u32, &'static str>,
    pub delay_ms: u64,
}

pub fn random_case(rng: &mut impl Rng, max_nodes: u32) -> RandomCase {
    let n = rng.gen_range(2..=max_nodes);
    let mut order: Vec<u32> = (1..=n).collect();
    order.shuffle(rng);
    let p = rng.gen_range(0.15..0.6);
    let mut edges = BTreeSet::new();
    for i in 0..order.len() {
        for j in i + 1..order.len() {
            if rng.gen_bool(p) {
                edges.insert((order[i], order[j]));
            }
        }
    }
    let mut injected: BTreeSet<u32> = (1..=n).filter(|_| rng.gen_bool(0.35)).collect();
    if injected.is_empty() {
        injected.insert(rng.gen_range(1..=n));
    }
    let kinds = injected.iter().map(|&u| (u, KINDS[rng.gen_range(0..KINDS.len())])).collect();
    RandomCase { n, edges, injected, t_inject: rng.gen_range(300..1500), kinds, delay_ms: rng.gen_range(0..=50) }
}

impl RandomCase {
    pub fn to_json(&self) -> Value {
        let components: Vec<Value> = (1..=self.n)
            .map(|u| {
                json!({
                    "name": format!("U{u}"),
                    "id": u,
                    "isolation": { "resources": [1, 256], "isolation_level": 1, "mitigation_policy": 0 },
                    "telemetry": { "can": [{ "frame_id": "0x100", "period_ms": 10 }] },
                    "policy": "(Cd:<0x010,100> . Cd < 1)",
                })
            })
            .collect();
        let connections: Vec<Value> =
            self.edges.iter().map(|(a, b)| json!([format!("U{a}"), format!("U{b}")])).collect();
        let injections: Vec<Value> = self
            .injected
            .iter()
            .map(|u| json!({ "t_ms": self.t_inject, "unit_id": u, "kind": self.kinds[u] }))
            .collect();
        // Generous horizon: every unit could have to wait for all others.
        let duration = self.t_inject + 2000 + 1500 * u64::from(self.n);
        json!({
            "name": "random-dag",
            "host": [f64::from(self.n), 256.0 * f64::from(self.n)],
            "components": components,
            "connections": connections,
            "injections": injections,
            "propagation": { "delay_ms": self.delay_ms },
            "duration_ms": duration,
            "seed": 3,
        })
    }

    pub fn scenario(&self) -> Scenario {
        Scenario::from_json(&self.to_json().to_string(), Path::new(".")).expect("random scenario is valid")
    }

    /// Brute-force reachability: `reach[a]` holds every `b` with a path `a -> b`.
    pub fn closure(&self) -> BTreeMap<u32, BTreeSet<u32>> {
        let mut reach: BTreeMap<u32, BTreeSet<u32>> =
            (1..=self.n).map(|u| (u, self.edges.iter().filter(|e| e.0 == u).map(|e| e.1).collect())).collect();
        loop {
            let mut changed = false;
            for a in 1..=self.n {
                let via: BTreeSet<u32> = reach[&a].iter().flat_map(|b| reach[b].clone()).collect();
                let set = reach.get_mut(&a).unwrap();
                for v in via {
                    changed |= set.insert(v);
                }
            }
            if !changed {
                return reach;
            }
        }
    }
}

/// Times at which each unit entered Failed, in log order.
pub fn mitigations(log: &EventLog) -> Vec<(u32, i64)> {
    log.events
        .iter()
        .filter_map(|e| match (&e.payload, e.unit) {
            (Payload::State { from: UnitState::Pending, to: UnitState::Failed }, Some(u)) => {
                Some((u.0, e.t.hundredths()))
            }
            _ => None,
        })
        .collect()
}

/// Checks the root-cause property against the closure oracle; returns a
/// description of the first violation.
pub fn root_cause_violation(case: &RandomCase, log: &EventLog) -> Option<String> {
    if log.timed_out() {
        return Some(format!("timed out, stuck {:?}", log.stuck));
    }
    let mits = mitigations(log);
    let failed: BTreeSet<u32> = mits.iter().map(|m| m.0).collect();
    if failed != case.injected {
        return Some(format!("failed set {failed:?} != injected {:?}", case.injected));
    }
    let first: BTreeMap<u32, i64> = mits.iter().rev().map(|&(u, t)| (u, t)).collect();
    let reach = case.closure();
    for &f in &case.injected {
        for &g in &case.injected {
            if reach[&f].contains(&g) && first[&f] >= first[&g] {
                return Some(format!("{g} mitigated at {} before upstream {f} at {}", first[&g], first[&f]));
            }
        }
    }
    None
}

pub const FRAME_IDS: [u32; 4] = [0x010, 0x100, 0x200, 0x201];

/// A rule in one of the two common shapes, kept apart from the parser's AST
/// so the oracle does not share code with the engine.
#[derive(Debug, Clone)]
pub enum ShapedRule {
    /// `(C:<id,h> . C REL thr)`
    Count { id: u32, h: u64, rel: &'static str, thr: i64 },
    /// `(A:<a,h> . B:<b,h> . A - B REL thr)`
    Difference { a: u32, b: u32, h: u64, rel: &'static str, thr: i64 },
}

pub const RELS: [&str; 4] = ["<", "<=", ">", ">="];

pub fn random_rule(rng: &mut impl Rng) -> ShapedRule {
    let rel = RELS[rng.gen_range(0..4)];
    let h = rng.gen_range(1..=300);
    if rng.gen_bool(0.5) {
        ShapedRule::Count { id: FRAME_IDS[rng.gen_range(0..4)], h, rel, thr: rng.gen_range(0..=40) }
    } else {
        let a = FRAME_IDS[rng.gen_range(0..4)];
        let mut b = FRAME_IDS[rng.gen_range(0..4)];
        while b == a {
            b = FRAME_IDS[rng.gen_range(0..4)];
        }
        ShapedRule::Difference { a, b, h, rel, thr: rng.gen_range(-10..=10) }
    }
}

impl ShapedRule {
    pub fn text(&self) -> String {
        match self {
            ShapedRule::Count { id, h, rel, thr } => format!("(C:<{id:#x},{h}> . C {rel} {thr})"),
            ShapedRule::Difference { a, b, h, rel, thr } => {
                format!("(Ca:<{a:#x},{h}> . Cb:<{b:#x},{h}> . Ca - Cb {rel} {thr})")
            }
        }
    }

    /// 1 when violated for the window starting at `start`, by linear scans.
    pub fn oracle(&self, events: &[(u32, u64)], start: u64) -> u8 {
        let count = |id: u32, h: u64| -> i64 {
            let anchor = events.iter().filter(|e| e.0 == id && e.1 >= start).map(|e| e.1).min().unwrap_or(start);
            events.iter().filter(|e| e.0 == id && e.1 >= anchor && e.1 < anchor + h).count() as i64
        };
        let (value, rel, thr) = match *self {
            ShapedRule::Count { id, h, rel, thr } => (count(id, h), rel, thr),
            ShapedRule::Difference { a, b, h, rel, thr } => (count(a, h) - count(b, h), rel, thr),
        };
        let holds = match rel {
            "<" => value < thr,
            "<=" => value <= thr,
            ">" => value > thr,
            _ => value >= thr,
        };
        u8::from(!holds)
    }
}

/// Up to `max_events` frames over a random horizon, with occasional bursts.
pub fn random_trace(rng: &mut impl Rng, max_events: usize) -> Vec<(u32, u64)> {
    let n = rng.gen_range(0..=max_events);
    let horizon = rng.gen_range(1..=(n as u64 * 5).max(10));
    let mut out: Vec<(u32, u64)> =
        (0..n).map(|_| (FRAME_IDS[rng.gen_range(0..4)], rng.gen_range(0..horizon))).collect();
    out.sort_by_key(|e| e.1);
    out
}

pub fn scenario_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

/// Successive failure queues a unit logged.
pub fn queue_changes(log: &EventLog, unit: u32) -> Vec<Vec<u32>> {
    log.of_unit(unitguard::UnitId(unit))
        .filter_map(|e| match &e.payload {
            Payload::Queue { ids } => Some(ids.iter().map(|u| u.0).collect()),
            _ => None,
        })
        .collect()
}

/// Index in the log of the first event matching `f`.
fn first_index(log: &EventLog, f: impl Fn(&unitguard::sim::SimEvent) -> bool) -> Option<usize> {
    log.events.iter().position(f)
}

fn state_index(log: &EventLog, unit: u32, from: UnitState, to: UnitState) -> Option<usize> {
    first_index(log, |e| e.unit.map(|u| u.0) == Some(unit) && e.payload == Payload::State { from, to })
}

/// Index of the first clear beacon `unit` sent.
fn clear_sent(log: &EventLog, unit: u32) -> Option<usize> {
    first_index(log, |e| {
        e.unit.map(|u| u.0) == Some(unit)
            && matches!(&e.payload, Payload::Send { line, .. }
                if line.contains("type=unit") && line.contains("sick_bit=0 failure_queue=[]"))
    })
}

/// The narrated order for A→B←C←D with D, C and B failing: D mitigates and
/// clears, C's queue goes {D}→∅ and C mitigates and clears, B's queue goes
/// {D,C}→{C}→∅ and B mitigates, A only answers B's status request.
pub fn fig4b_violations(log: &EventLog) -> Vec<String> {
    let (a, b, c, d) = (1, 2, 3, 4);
    let mut bad = Vec::new();
    let order: Vec<u32> = mitigations(log).iter().map(|m| m.0).collect();
    if order != [d, c, b] {
        bad.push(format!("mitigation order {order:?}, want [4, 3, 2]"));
    }
    let fail = |u| state_index(log, u, UnitState::Pending, UnitState::Failed);
    let cleared = |u| state_index(log, u, UnitState::Failed, UnitState::Normal);
    for (first, next) in [(d, c), (c, b)] {
        match (cleared(first), clear_sent(log, first), fail(next)) {
            (Some(x), Some(s), Some(y)) if x < y && s < y => {}
            other => bad.push(format!("{first} must clear and announce it before {next} mitigates: {other:?}")),
        }
    }
    if cleared(b).is_none() {
        bad.push("B never cleared".into());
    }
    let qc = queue_changes(log, c);
    if qc != [vec![d], vec![]] {
        bad.push(format!("C queue changes {qc:?}, want [[4], []]"));
    }
    let qb = queue_changes(log, b);
    if !qb.ends_with(&[vec![c, d], vec![c], vec![]]) || qb.iter().flatten().any(|&u| u != c && u != d) {
        bad.push(format!("B queue changes {qb:?}, want them to end [[3, 4], [3], []]"));
    }
    let sent_by_a: Vec<&str> = log
        .of_unit(unitguard::UnitId(a))
        .filter_map(|e| match &e.payload {
            Payload::Send { line, .. } => Some(line.as_str()),
            _ => None,
        })
        .collect();
    let asked = first_index(log, |e| {
        e.unit.map(|u| u.0) == Some(a)
            && matches!(&e.payload, Payload::Recv { line, .. } if line.contains("type=status_req"))
    });
    let answered = first_index(log, |e| e.unit.map(|u| u.0) == Some(a) && matches!(e.payload, Payload::Send { .. }));
    if sent_by_a.len() != 1
        || !sent_by_a[0].contains("type=unit")
        || !matches!((asked, answered), (Some(x), Some(y)) if x < y)
    {
        bad.push(format!("A must send exactly one reply after a status request, sent {sent_by_a:?}"));
    }
    if log.of_unit(unitguard::UnitId(a)).any(|e| matches!(e.payload, Payload::State { .. })) {
        bad.push("A changed state".into());
    }
    if log.timed_out() {
        bad.push(format!("timed out with {:?} stuck", log.stuck));
    }
    bad
}
