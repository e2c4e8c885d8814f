//! Synthetic per-window telemetry for simulated units.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{FaultKind, UnitSetup};
use crate::mape::{ProcessInfo, TelemetrySample};
use crate::model::UnitId;
use crate::policy::CanEvent;

pub const EXHAUSTED_MEM_PCT: f64 = 98.0;
pub const ROGUE_PROCESS: &str = "miner";
pub const ANOMALOUS_SYSCALL: u32 = 999;
pub const FLOOD_FRAME_ID: u32 = 0x010;
pub const FLOOD_FRAMES_PER_WINDOW: u64 = 100;

/// Produces one unit's samples. Healthy output depends only on the seed and
/// the window index.
#[derive(Debug, Clone)]
pub struct SampleGenerator {
    unit: UnitId,
    setup: UnitSetup,
    processes: Vec<ProcessInfo>,
    window_ms: u64,
    rng: ChaCha8Rng,
}

impl SampleGenerator {
    pub fn new(setup: &UnitSetup, window_ms: u64, seed: u64) -> Self {
        let stream = seed ^ (u64::from(setup.id.0).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        SampleGenerator {
            unit: setup.id,
            setup: setup.clone(),
            processes: setup.processes(),
            window_ms,
            rng: ChaCha8Rng::seed_from_u64(stream),
        }
    }

    pub fn processes(&self) -> &[ProcessInfo] {
        &self.processes
    }

    fn jitter(&mut self, base: f64) -> f64 {
        let n = self.setup.telemetry.noise_pct;
        let v = if n > 0.0 { base + self.rng.gen_range(-n..=n) } else { base };
        v.clamp(0.0, 100.0)
    }

    /// Sample for window `index`, covering `[start_ms, start_ms + window)`,
    /// with the given faults in effect.
    pub fn sample(&mut self, index: u64, start_ms: u64, faults: &BTreeSet<FaultKind>) -> TelemetrySample {
        let cpu_pct = self.jitter(self.setup.telemetry.cpu_pct);
        let mut mem_pct = self.jitter(self.setup.telemetry.mem_pct);
        let mut s = TelemetrySample {
            unit_id: self.unit,
            window_index: index,
            window_start_ms: start_ms,
            cpu_pct,
            mem_pct: 0.0,
            processes: self.processes.clone(),
            syscall_counts: self.setup.telemetry.syscalls.clone(),
            can_frames: Vec::new(),
            can_commands: Vec::new(),
            heartbeat: true,
        };
        let end = start_ms + self.window_ms;
        for stream in &self.setup.telemetry.can {
            let first_cmd = start_ms.saturating_sub(stream.latency_ms).div_ceil(stream.period_ms) * stream.period_ms;
            let mut c = first_cmd;
            while c + stream.latency_ms < end {
                if c + stream.latency_ms >= start_ms {
                    s.can_commands.push(CanEvent::new(stream.frame_id, c));
                    s.can_frames.push(CanEvent::new(stream.frame_id, c + stream.latency_ms));
                }
                c += stream.period_ms;
            }
        }
        for kind in faults {
            match kind {
                FaultKind::ResourceExhaustion => mem_pct = EXHAUSTED_MEM_PCT,
                FaultKind::RogueProcess => {
                    s.processes.push(ProcessInfo { pid: 6666, name: ROGUE_PROCESS.into(), cr3: 0xdead_0000 })
                }
                FaultKind::SyscallAnomaly => {
                    s.syscall_counts.insert(ANOMALOUS_SYSCALL, 50);
                }
                FaultKind::CanFlood => {
                    for i in 0..FLOOD_FRAMES_PER_WINDOW {
                        let t = start_ms + i * self.window_ms / FLOOD_FRAMES_PER_WINDOW;
                        s.can_frames.push(CanEvent::new(FLOOD_FRAME_ID, t));
                    }
                }
                FaultKind::Crash => {}
            }
        }
        s.mem_pct = mem_pct;
        s.can_frames.sort_by_key(|e| (e.t_ms, e.frame_id));
        if faults.contains(&FaultKind::Crash) {
            return TelemetrySample {
                unit_id: self.unit,
                window_index: index,
                window_start_ms: start_ms,
                heartbeat: false,
                ..Default::default()
            };
        }
        s
    }

    /// Syscall histograms of `n` healthy windows, for baseline training.
    pub fn training_syscalls(&self, n: usize) -> Vec<BTreeMap<u32, u64>> {
        vec![self.setup.telemetry.syscalls.clone(); n]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mape::{cross_validate_can, AdaptationConfig, ProcessWhitelist};
    use crate::model::IsolationRecord;
    use crate::sim::scenario::{CanStream, TelemetryConfig};

    fn setup(can: Vec<CanStream>, noise: f64) -> UnitSetup {
        UnitSetup {
            id: UnitId(3),
            name: "Sensing".into(),
            record: IsolationRecord {
                resources: vec![2.0, 2048.0],
                isolation_level: 0,
                mitigation_policy: 0,
                mitigation_budget: 1,
                shared_group: None,
            },
            adaptation: AdaptationConfig::single("sensing", "vm", "10.0.3.2"),
            telemetry: TelemetryConfig { can, noise_pct: noise, ..Default::default() },
            policy: None,
            whitelist: ProcessWhitelist::default(),
            baseline: None,
        }
    }

    #[test]
    fn healthy_can_traffic_is_all_commanded() {
        let can = vec![CanStream { frame_id: 0x100, period_ms: 10, latency_ms: 3 }];
        let mut g = SampleGenerator::new(&setup(can, 0.0), 100, 1);
        for w in 0..5 {
            let s = g.sample(w, w * 100, &BTreeSet::new());
            assert_eq!(s.can_frames.len(), 10);
            assert!(cross_validate_can(&s.can_frames, &s.can_commands, 20).is_empty());
        }
    }

    #[test]
    fn flood_frames_are_uncommanded() {
        let mut g = SampleGenerator::new(&setup(vec![], 0.0), 100, 1);
        let s = g.sample(3, 300, &[FaultKind::CanFlood].into());
        assert_eq!(cross_validate_can(&s.can_frames, &s.can_commands, 20).len(), 100);
    }

    #[test]
    fn crash_has_no_heartbeat() {
        let mut g = SampleGenerator::new(&setup(vec![], 0.0), 100, 1);
        let s = g.sample(0, 0, &[FaultKind::Crash, FaultKind::RogueProcess].into());
        assert!(!s.heartbeat);
        assert!(s.processes.is_empty());
    }

    #[test]
    fn noise_is_seeded() {
        let a: Vec<f64> = {
            let mut g = SampleGenerator::new(&setup(vec![], 5.0), 100, 7);
            (0..10).map(|w| g.sample(w, w * 100, &BTreeSet::new()).cpu_pct).collect()
        };
        let mut g = SampleGenerator::new(&setup(vec![], 5.0), 100, 7);
        let b: Vec<f64> = (0..10).map(|w| g.sample(w, w * 100, &BTreeSet::new()).cpu_pct).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (25.0..=35.0).contains(v)));
    }
}
