//! Discrete-event execution of a scenario.
//!
//! Events at the same instant run in a fixed order: injections, then
//! partition-manager completions, then monitoring windows, then beacon ticks,
//! then message deliveries; ties break by unit id and scheduling order.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::compose::{hops_from, propagation_edges};
use super::log::{EventLog, Payload};
use super::scenario::{Effect, FaultKind, PartitionMode, Scenario};
use super::synth::SampleGenerator;
use crate::clock::Millis;
use crate::mape::{
    execute, train_baseline, CanDetector, Detector, DetectorId, ExecOptions, HeartbeatDetector, LaunchSnapshot,
    PartitionLatencies, PlanKind, PlannerState, ProcessDetector, ResourceDetector, SimulatedPartitionManager,
    SyscallDetector, Voter,
};
use crate::model::UnitId;
use crate::protocol::wire::{encode, encode_message, Frame};
use crate::protocol::{Message, Note, Outgoing, UnitProtocolState, UnitState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Class {
    Inject,
    Completion,
    Window,
    Tick,
    Delivery,
}

#[derive(Debug, Clone)]
enum Ev {
    Inject(usize),
    Action(Payload),
    Restore { epoch: u64 },
    RebootDone,
    Window,
    Tick,
    Deliver { msg: Message, epoch: u64 },
}

struct Scheduled {
    key: (Millis, Class, u32, u64),
    unit: Option<UnitId>,
    ev: Ev,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug, Clone)]
struct Fault {
    kind: FaultKind,
    start: Millis,
    end: Option<Millis>,
    persist_left: u32,
    /// Cleared by a system reboot; no longer taints downstream units.
    wiped: bool,
}

impl Fault {
    fn active_at(&self, t: Millis) -> bool {
        self.start <= t && self.end.is_none_or(|e| t < e)
    }
}

struct Agent {
    proto: UnitProtocolState,
    generator: SampleGenerator,
    detectors: Vec<Box<dyn Detector>>,
    voter: Voter,
    /// Scores since entering `Pending` or since the last unblock.
    fresh: Vec<u8>,
    blocked: bool,
    blocked_clean: usize,
    planner: PlannerState,
    restore_ready: Option<Millis>,
    plan_seq: u64,
    last_queue: Vec<UnitId>,
    /// Bumped by reboots so stale completions are ignored.
    epoch: u64,
}

impl Agent {
    fn restart_segment(&mut self) {
        self.fresh.clear();
        self.blocked_clean = 0;
    }
}

struct Engine<'a> {
    sc: &'a Scenario,
    agents: BTreeMap<UnitId, Agent>,
    faults: BTreeMap<UnitId, Vec<Fault>>,
    /// `(since, not normal)` transitions per unit.
    health: BTreeMap<UnitId, Vec<(Millis, bool)>>,
    edges: BTreeMap<(UnitId, UnitId), Effect>,
    hops: BTreeMap<UnitId, BTreeMap<UnitId, u64>>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    next_seq: u64,
    log: EventLog,
    channel_rng: ChaCha8Rng,
    pm: SimulatedPartitionManager,
    opts: ExecOptions,
    epoch: u64,
    rebooting: bool,
}

/// Runs `scenario` to its duration and returns the event log.
pub fn run(scenario: &Scenario) -> EventLog {
    let mut e = Engine::new(scenario);
    e.run();
    e.log
}

/// True iff two runs of the scenario produce identical logs.
pub fn replay_check(scenario: &Scenario) -> bool {
    run(scenario).to_text() == run(scenario).to_text()
}

fn build_detectors(sc: &Scenario, id: UnitId, generator: &SampleGenerator) -> Vec<Box<dyn Detector>> {
    let d = &sc.detectors;
    let setup = &sc.units[&id];
    let window_ms = sc.window.ceil_ms();
    let mut resource = ResourceDetector::new(d.static_threshold_pct, d.sigma_mult, d.history);
    let mut warmup = generator.clone();
    for w in 0..d.history.min(d.training_windows.max(1)) {
        resource.observe_clean(warmup.sample(w as u64, 0, &BTreeSet::new()).usage());
    }
    let baseline = setup.baseline.clone().unwrap_or_else(|| {
        train_baseline(&generator.training_syscalls(d.training_windows.max(1)), d.syscall_slack)
            .expect("at least one training window")
    });
    vec![
        Box::new(resource),
        Box::new(ProcessDetector {
            whitelist: setup.whitelist.clone(),
            snapshot: LaunchSnapshot::record(generator.processes()),
        }),
        Box::new(SyscallDetector { baseline }),
        Box::new(CanDetector { tolerance_ms: d.can_tolerance_ms, policy: setup.policy.clone() }),
        Box::new(HeartbeatDetector::new(window_ms, d.heartbeat_misses)),
    ]
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario) -> Self {
        let window_ms = sc.window.ceil_ms();
        let mut agents = BTreeMap::new();
        for node in &sc.dfg.nodes {
            let setup = &sc.units[&node.id];
            let generator = SampleGenerator::new(setup, window_ms, sc.seed);
            let detectors = build_detectors(sc, node.id, &generator);
            let peers = sc.dfg.cycle_peers(node.id);
            agents.insert(
                node.id,
                Agent {
                    proto: UnitProtocolState::new(node.clone(), sc.beacon_period).with_cycle_peers(peers),
                    generator,
                    detectors,
                    voter: Voter::new(sc.detectors.k, sc.detectors.m),
                    fresh: Vec::new(),
                    blocked: false,
                    blocked_clean: 0,
                    planner: PlannerState::default(),
                    restore_ready: None,
                    plan_seq: 0,
                    last_queue: Vec::new(),
                    epoch: 0,
                },
            );
        }
        let edges = propagation_edges(sc);
        let hops = sc.dfg.ids().map(|u| (u, hops_from(&edges, u))).collect();
        let latencies = match sc.partition.mode {
            PartitionMode::Hot => PartitionLatencies::hot(sc.partition.hot_restore_ms),
            PartitionMode::Cold => {
                PartitionLatencies::cold(sc.partition.container_boot_ms, sc.partition.service_launch_ms)
            }
        };
        let pm = SimulatedPartitionManager::new(latencies, sc.units.values().map(|u| u.adaptation.node.name.clone()));
        Engine {
            sc,
            agents,
            faults: BTreeMap::new(),
            health: BTreeMap::new(),
            edges,
            hops,
            queue: BinaryHeap::new(),
            next_seq: 0,
            log: EventLog::default(),
            channel_rng: ChaCha8Rng::seed_from_u64(sc.channel.seed),
            pm,
            opts: ExecOptions {
                stop_delay: sc.partition.stop_delay_ms,
                restore_overhead: sc.partition.restore_overhead_ms,
            },
            epoch: 0,
            rebooting: false,
        }
    }

    fn schedule(&mut self, t: Millis, class: Class, unit: Option<UnitId>, ev: Ev) {
        let seq = self.next_seq;
        self.next_seq += 1;
        let key = (t, class, unit.map_or(0, |u| u.0), seq);
        self.queue.push(Reverse(Scheduled { key, unit, ev }));
    }

    fn run(&mut self) {
        for w in self.sc.warnings.clone() {
            self.log.push(Millis::ZERO, None, Payload::Warn { message: w });
        }
        for (i, inj) in self.sc.injections.iter().enumerate() {
            self.schedule(Millis::from_ms(inj.t_ms), Class::Inject, Some(inj.unit_id), Ev::Inject(i));
        }
        let end = self.sc.duration;
        self.schedule(self.sc.window, Class::Window, None, Ev::Window);
        self.schedule(self.sc.beacon_period, Class::Tick, None, Ev::Tick);
        while let Some(Reverse(s)) = self.queue.pop() {
            let t = s.key.0;
            if t > end {
                break;
            }
            match s.ev {
                Ev::Inject(i) => self.inject(t, i),
                Ev::Action(p) => self.log.push(t, s.unit, p),
                Ev::Restore { epoch } => self.restore(t, s.unit.expect("restore has a unit"), epoch),
                Ev::RebootDone => self.reboot_done(t),
                Ev::Window => {
                    self.window(t);
                    self.schedule(t + self.sc.window, Class::Window, None, Ev::Window);
                }
                Ev::Tick => {
                    let ids: Vec<UnitId> = self.agents.keys().copied().collect();
                    for u in ids {
                        let out = self.agents.get_mut(&u).expect("agent").proto.tick(t);
                        self.after_protocol(u, t, out);
                    }
                    self.schedule(t + self.sc.beacon_period, Class::Tick, None, Ev::Tick);
                }
                Ev::Deliver { msg, epoch } => self.deliver(t, s.unit.expect("delivery has a recipient"), msg, epoch),
            }
        }
        self.finish(end);
    }

    fn inject(&mut self, t: Millis, i: usize) {
        let inj = self.sc.injections[i];
        self.faults.entry(inj.unit_id).or_default().push(Fault {
            kind: inj.kind,
            start: t,
            end: None,
            persist_left: inj.persist_mitigations,
            wiped: false,
        });
        self.log.push(t, Some(inj.unit_id), Payload::Inject { kind: inj.kind, persist: inj.persist_mitigations });
    }

    fn not_normal_at(&self, u: UnitId, t: Millis) -> bool {
        self.health.get(&u).and_then(|h| h.iter().rev().find(|(since, _)| *since <= t)).is_some_and(|&(_, bad)| bad)
    }

    fn fault_active(&self, u: UnitId, t: Millis) -> Vec<FaultKind> {
        self.faults.get(&u).map_or_else(Vec::new, |fs| fs.iter().filter(|f| f.active_at(t)).map(|f| f.kind).collect())
    }

    /// Fault kinds in effect at `u` during the window ending at `t`.
    fn effects(&self, u: UnitId, t: Millis) -> BTreeSet<FaultKind> {
        let delay = Millis::from_ms(self.sc.propagation.delay_ms);
        let mut out: BTreeSet<FaultKind> = self.fault_active(u, t).into_iter().collect();
        for (&(v, _), &effect) in self.edges.iter().filter(|((_, b), _)| *b == u) {
            // Origins whose misbehaviour reaches `u` through `v`.
            for (&f, faults) in &self.faults {
                let Some(&h) = self.hops[&f].get(&v) else { continue };
                let hops = h + 1;
                let at = t - Millis::from_hundredths(delay.hundredths() * hops as i64);
                for fault in faults {
                    if fault.active_at(at) {
                        out.extend(effect.apply(fault.kind));
                    }
                }
            }
            // An upstream unit that is not yet back to normal keeps feeding
            // suspect data downstream.
            let at = t - delay;
            if self.not_normal_at(v, at) {
                for (&f, faults) in &self.faults {
                    if !self.hops[&f].contains_key(&v) {
                        continue;
                    }
                    for fault in faults.iter().filter(|x| !x.wiped && x.start <= at) {
                        out.extend(effect.apply(fault.kind));
                    }
                }
            }
        }
        out
    }

    fn window(&mut self, t: Millis) {
        let w = self.sc.window;
        let index = (t.hundredths() / w.hundredths()) as u64;
        let start_ms = (t - w).ceil_ms();
        let ids: Vec<UnitId> = self.agents.keys().copied().collect();
        let effects: Vec<BTreeSet<FaultKind>> = ids.iter().map(|&u| self.effects(u, t)).collect();
        for (u, fx) in ids.into_iter().zip(effects) {
            let agent = self.agents.get_mut(&u).expect("agent");
            let sample = agent.generator.sample(index, start_ms, &fx);
            let mut scores = Vec::with_capacity(agent.detectors.len());
            for d in agent.detectors.iter_mut() {
                // A missing sample only informs the heartbeat check.
                let s = if sample.heartbeat || d.id() == DetectorId::Heartbeat { d.score(&sample) } else { 0 };
                scores.push((d.id(), s));
            }
            let score = u8::from(scores.iter().any(|&(_, s)| s == 1));
            let voted = agent.proto.state() == UnitState::Normal && {
                let mut probe = agent.voter.clone();
                probe.push(score)
            };
            self.log.push(t, Some(u), Payload::Window { index, scores, score, voted });
            self.analyze(u, t, score);
        }
    }

    fn analyze(&mut self, u: UnitId, t: Millis, score: u8) {
        let k = self.sc.detectors.k;
        let m = self.sc.detectors.m;
        let agent = self.agents.get_mut(&u).expect("agent");
        let mut out = Vec::new();
        let mut mitigate = false;
        match agent.proto.state() {
            UnitState::Normal => {
                if agent.voter.push(score) {
                    agent.voter.clear();
                    agent.restart_segment();
                    agent.blocked = false;
                    out = agent.proto.on_analysis(true, t);
                }
            }
            UnitState::Pending => {
                let blocking = agent.proto.blocking_set(t);
                self.set_blocked(u, t, blocking);
                let agent = self.agents.get_mut(&u).expect("agent");
                if agent.blocked {
                    agent.blocked_clean = if score == 0 { agent.blocked_clean + 1 } else { 0 };
                    if agent.blocked_clean >= k {
                        out = agent.proto.on_analysis(false, t);
                    }
                } else {
                    agent.fresh.push(score);
                    let recent = &agent.fresh[agent.fresh.len().saturating_sub(k)..];
                    let fails = recent.iter().filter(|&&s| s == 1).count();
                    if fails >= m {
                        mitigate = agent.proto.try_mitigate(t);
                    } else if recent.len() >= k && fails == 0 {
                        out = agent.proto.on_analysis(false, t);
                    }
                }
            }
            UnitState::Failed => {
                if agent.restore_ready.is_some_and(|r| r <= t) {
                    agent.restore_ready = None;
                    let clean = score == 0;
                    let budget_left = agent.planner.budget_used < self.sc.units[&u].record.mitigation_budget;
                    self.log.push(t, Some(u), Payload::Probe { clean });
                    let agent = self.agents.get_mut(&u).expect("agent");
                    out = agent.proto.on_mitigation_complete(clean, budget_left, t);
                    agent.restart_segment();
                    agent.blocked = false;
                    agent.voter.clear();
                }
            }
        }
        self.after_protocol(u, t, out);
        if mitigate {
            self.mitigate(u, t);
        }
    }

    fn set_blocked(&mut self, u: UnitId, t: Millis, blocking: BTreeSet<UnitId>) {
        let agent = self.agents.get_mut(&u).expect("agent");
        let now = !blocking.is_empty();
        if now == agent.blocked {
            return;
        }
        agent.blocked = now;
        agent.restart_segment();
        let payload = if now { Payload::Block { by: blocking.into_iter().collect() } } else { Payload::Unblock };
        self.log.push(t, Some(u), payload);
    }

    fn mitigate(&mut self, u: UnitId, t: Millis) {
        let setup = &self.sc.units[&u];
        let agent = self.agents.get_mut(&u).expect("agent");
        let plan = match agent.planner.plan(&setup.record, &setup.adaptation) {
            Ok(p) => p,
            Err(e) => {
                self.log.push(t, Some(u), Payload::Warn { message: format!("planning failed: {e}") });
                self.escalate(u, t);
                return;
            }
        };
        let messages = plan.to_messages(u, t.ceil_ms(), agent.plan_seq);
        agent.plan_seq += messages.len() as u64;
        agent.planner.apply(&plan);
        for m in &messages {
            self.log.push(t, Some(u), Payload::Plan { kind: plan.kind, line: encode(&Frame::Plan(m.clone())) });
        }
        if plan.kind == PlanKind::Reboot {
            self.escalate(u, t);
            return;
        }
        match execute(&plan.actions, &self.pm, t, self.opts) {
            Ok(rec) => {
                for a in rec.actions {
                    let p = Payload::Action {
                        opcode: a.opcode,
                        target: a.target,
                        started: a.started,
                        completed: a.completed,
                    };
                    self.schedule(a.completed, Class::Completion, Some(u), Ev::Action(p));
                }
                let ready = rec.restore_ready.or(rec.finished).unwrap_or(t);
                let epoch = self.agents[&u].epoch;
                self.schedule(ready, Class::Completion, Some(u), Ev::Restore { epoch });
            }
            Err(e) => {
                self.log.push(t, Some(u), Payload::Warn { message: format!("execution failed: {e}") });
                let epoch = self.agents[&u].epoch;
                self.schedule(t, Class::Completion, Some(u), Ev::Restore { epoch });
            }
        }
    }

    fn escalate(&mut self, u: UnitId, t: Millis) {
        self.log.push(t, Some(u), Payload::Escalate);
        if self.rebooting {
            return;
        }
        self.rebooting = true;
        let done = crate::mape::PartitionManager::reboot(&self.pm, crate::mape::SYSTEM, t).unwrap_or(t);
        self.schedule(done, Class::Completion, None, Ev::RebootDone);
    }

    fn restore(&mut self, t: Millis, u: UnitId, epoch: u64) {
        if self.agents[&u].epoch != epoch {
            return;
        }
        for f in self.faults.entry(u).or_default().iter_mut().filter(|f| f.active_at(t)) {
            if f.persist_left > 0 {
                f.persist_left -= 1;
            } else {
                f.end = Some(t);
            }
        }
        self.agents.get_mut(&u).expect("agent").restore_ready = Some(t);
        self.log.push(t, Some(u), Payload::Restore);
    }

    fn reboot_done(&mut self, t: Millis) {
        self.rebooting = false;
        self.epoch += 1;
        for fs in self.faults.values_mut() {
            for f in fs.iter_mut() {
                if f.active_at(t) {
                    f.end = Some(t);
                }
                f.wiped = true;
            }
        }
        self.log.push(t, None, Payload::Reboot);
        let ids: Vec<UnitId> = self.agents.keys().copied().collect();
        for u in ids {
            let a = self.agents.get_mut(&u).expect("agent");
            a.proto.reset();
            a.voter.clear();
            a.restart_segment();
            a.blocked = false;
            a.planner = PlannerState { reboots: a.planner.reboots, ..PlannerState::default() };
            a.restore_ready = None;
            a.epoch += 1;
            self.after_protocol(u, t, Vec::new());
        }
    }

    fn deliver(&mut self, t: Millis, to: UnitId, msg: Message, epoch: u64) {
        let line = encode_message(&msg);
        if epoch != self.epoch {
            self.log.push(t, Some(to), Payload::Drop { to, line });
            return;
        }
        self.log.push(t, Some(to), Payload::Recv { from: msg.source_id(), line });
        let agent = self.agents.get_mut(&to).expect("agent");
        let out = match msg {
            Message::Beacon(b) => agent.proto.on_beacon(b, t),
            Message::StatusRequest(r) => {
                agent.proto.on_status_request(r);
                agent.proto.tick(t)
            }
        };
        self.after_protocol(to, t, out);
        if self.agents[&to].proto.state() == UnitState::Pending {
            let blocking = self.agents[&to].proto.blocking_set(t);
            self.set_blocked(to, t, blocking);
        }
    }

    /// Logs protocol notes and queue changes, then puts messages on the channel.
    fn after_protocol(&mut self, u: UnitId, t: Millis, out: Vec<Outgoing>) {
        let agent = self.agents.get_mut(&u).expect("agent");
        let notes = agent.proto.drain_notes();
        let queue = agent.proto.failure_queue(t);
        let queue_changed = queue != agent.last_queue;
        if queue_changed {
            agent.last_queue = queue.clone();
        }
        for n in notes {
            let p = match n {
                Note::Ignored { from, seq } => Payload::Ignored { from, seq },
                Note::Stale { from, seq } => Payload::Stale { from, seq },
                Note::Misaddressed { from, target } => {
                    Payload::Warn { message: format!("status request from {from} addressed to {target}") }
                }
                Note::RequestTimeout { upstream } => Payload::Timeout { upstream },
                Note::CycleBreak { peers } => Payload::CycleBreak { peers },
                Note::StateChange { from, to } => {
                    self.health.entry(u).or_default().push((t, to != UnitState::Normal));
                    Payload::State { from, to }
                }
            };
            self.log.push(t, Some(u), p);
        }
        if queue_changed {
            self.log.push(t, Some(u), Payload::Queue { ids: queue });
        }
        for o in out {
            let line = encode_message(&o.msg);
            self.log.push(t, Some(u), Payload::Send { to: o.to, line: line.clone() });
            let lost = self.sc.channel.loss_rate > 0.0 && self.channel_rng.gen::<f64>() < self.sc.channel.loss_rate;
            if lost {
                self.log.push(t, Some(u), Payload::Drop { to: o.to, line });
            } else {
                let epoch = self.epoch;
                self.schedule(
                    t + self.sc.channel.delay_ms,
                    Class::Delivery,
                    Some(o.to),
                    Ev::Deliver { msg: o.msg, epoch },
                );
            }
        }
    }

    fn finish(&mut self, end: Millis) {
        self.log.end = end;
        for (&u, a) in &self.agents {
            let state = a.proto.state();
            let queue = a.proto.failure_queue(end);
            self.log.finals.insert(u, (state, a.proto.sick_bit(), queue.clone()));
            if state != UnitState::Normal {
                self.log.stuck.push(u);
            }
            self.log.push(end, Some(u), Payload::Final { state, sick: a.proto.sick_bit(), queue });
        }
        self.log.sort();
    }
}
