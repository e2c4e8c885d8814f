use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use thiserror::Error;

use super::plan::{Opcode, PseudoAction, SYSTEM};
use crate::clock::Millis;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PmError {
    #[error("partition `{0}` is already running")]
    AlreadyRunning(String),
    #[error("partition `{0}` is not running")]
    NotRunning(String),
}

/// Abstract hypervisor / container manager. Each call is issued at `at`
/// and returns its completion instant.
pub trait PartitionManager: Send + Sync {
    fn start(&self, name: &str, at: Millis) -> Result<Millis, PmError>;
    fn stop(&self, name: &str, at: Millis) -> Result<Millis, PmError>;
    fn reboot(&self, name: &str, at: Millis) -> Result<Millis, PmError>;
    fn pause(&self, name: &str, at: Millis) -> Result<Millis, PmError>;
    fn launch(&self, name: &str, launch_file_path: &str, at: Millis) -> Result<Millis, PmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionLatencies {
    pub start: Millis,
    pub stop: Millis,
    pub reboot: Millis,
    pub pause: Millis,
    pub launch: Millis,
}

impl PartitionLatencies {
    /// Prepared backups: bringing one up costs `restore`, everything else is instant.
    pub fn hot(restore: Millis) -> Self {
        PartitionLatencies {
            start: restore,
            stop: Millis::ZERO,
            reboot: restore,
            pause: Millis::ZERO,
            launch: Millis::ZERO,
        }
    }

    /// Boot a container, then launch its services.
    pub fn cold(boot: Millis, launch: Millis) -> Self {
        PartitionLatencies { start: boot, stop: Millis::ZERO, reboot: boot, pause: Millis::ZERO, launch }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Running,
    Paused,
}

/// In-memory partition manager with fixed latencies. Safe to share
/// between units.
#[derive(Debug)]
pub struct SimulatedPartitionManager {
    pub latencies: PartitionLatencies,
    initial: BTreeSet<String>,
    state: Mutex<BTreeMap<String, Status>>,
}

impl SimulatedPartitionManager {
    pub fn new<I, S>(latencies: PartitionLatencies, running: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let initial: BTreeSet<String> = running.into_iter().map(Into::into).collect();
        let state = initial.iter().map(|n| (n.clone(), Status::Running)).collect();
        SimulatedPartitionManager { latencies, initial, state: Mutex::new(state) }
    }

    pub fn is_running(&self, name: &str) -> bool {
        self.lock().get(name) == Some(&Status::Running)
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, BTreeMap<String, Status>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl PartitionManager for SimulatedPartitionManager {
    fn start(&self, name: &str, at: Millis) -> Result<Millis, PmError> {
        let mut st = self.lock();
        if st.get(name) == Some(&Status::Running) {
            return Err(PmError::AlreadyRunning(name.to_string()));
        }
        st.insert(name.to_string(), Status::Running);
        Ok(at + self.latencies.start)
    }

    fn stop(&self, name: &str, at: Millis) -> Result<Millis, PmError> {
        self.lock().remove(name);
        Ok(at + self.latencies.stop)
    }

    fn reboot(&self, name: &str, at: Millis) -> Result<Millis, PmError> {
        let mut st = self.lock();
        if name == SYSTEM {
            *st = self.initial.iter().map(|n| (n.clone(), Status::Running)).collect();
        } else {
            st.insert(name.to_string(), Status::Running);
        }
        Ok(at + self.latencies.reboot)
    }

    fn pause(&self, name: &str, at: Millis) -> Result<Millis, PmError> {
        let mut st = self.lock();
        match st.get_mut(name) {
            Some(s @ Status::Running) => *s = Status::Paused,
            _ => return Err(PmError::NotRunning(name.to_string())),
        }
        Ok(at + self.latencies.pause)
    }

    fn launch(&self, name: &str, _launch_file_path: &str, at: Millis) -> Result<Millis, PmError> {
        if self.lock().get(name) != Some(&Status::Running) {
            return Err(PmError::NotRunning(name.to_string()));
        }
        Ok(at + self.latencies.launch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecOptions {
    /// Delay between the last bring-up completing and a following stop.
    pub stop_delay: Millis,
    /// Added to the last bring-up to obtain the restore-ready instant.
    pub restore_overhead: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRecord {
    pub opcode: Opcode,
    pub target: String,
    pub started: Millis,
    pub completed: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExecutionRecord {
    pub actions: Vec<ActionRecord>,
    /// When the restored partition can deliver its first message.
    pub restore_ready: Option<Millis>,
    pub finished: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action {index} ({opcode} {target}): {source}")]
pub struct ExecError {
    pub index: usize,
    pub opcode: Opcode,
    pub target: String,
    pub source: PmError,
}

/// Runs actions serially from `now`. A stop waits `stop_delay` after the
/// preceding start, launch or reboot completes.
pub fn execute(
    actions: &[PseudoAction],
    pm: &dyn PartitionManager,
    now: Millis,
    opts: ExecOptions,
) -> Result<ExecutionRecord, ExecError> {
    let mut record = ExecutionRecord::default();
    let mut cursor = now;
    let mut brought_up: Option<Millis> = None;
    for (index, a) in actions.iter().enumerate() {
        let started = match (a.opcode, brought_up) {
            (Opcode::Stop, Some(t)) => cursor.max(t + opts.stop_delay),
            _ => cursor,
        };
        let result = match a.opcode {
            Opcode::Start => pm.start(&a.target, started),
            Opcode::Stop => pm.stop(&a.target, started),
            Opcode::Reboot => pm.reboot(&a.target, started),
            Opcode::Pause => pm.pause(&a.target, started),
            Opcode::Launch => pm.launch(&a.target, &a.launch_file_path, started),
        };
        let completed =
            result.map_err(|source| ExecError { index, opcode: a.opcode, target: a.target.clone(), source })?;
        if matches!(a.opcode, Opcode::Start | Opcode::Launch | Opcode::Reboot) {
            brought_up = Some(completed);
        }
        record.actions.push(ActionRecord { opcode: a.opcode, target: a.target.clone(), started, completed });
        cursor = completed;
        record.finished = Some(completed);
    }
    record.restore_ready = brought_up.map(|t| t + opts.restore_overhead);
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mape::plan::PlanPayload;

    fn action(opcode: Opcode, target: &str) -> PseudoAction {
        PseudoAction {
            opcode,
            target: target.into(),
            successor_name: "b1".into(),
            launch_file_path: if opcode == Opcode::Launch { "/x.launch".into() } else { String::new() },
            payload: PlanPayload::default(),
        }
    }

    fn backup() -> Vec<PseudoAction> {
        vec![action(Opcode::Start, "b1"), action(Opcode::Launch, "b1"), action(Opcode::Stop, "main")]
    }

    #[test]
    fn cold_restore_is_boot_plus_launch() {
        let pm = SimulatedPartitionManager::new(
            PartitionLatencies::cold(Millis::from_hundredths(46682), Millis::from_hundredths(63919)),
            ["main"],
        );
        let opts = ExecOptions { stop_delay: Millis::from_ms(200), restore_overhead: Millis::ZERO };
        let rec = execute(&backup(), &pm, Millis::ZERO, opts).unwrap();
        assert_eq!(rec.restore_ready, Some(Millis::from_hundredths(110601)));
        assert_eq!(rec.actions[2].started, Millis::from_hundredths(130601));
        assert!(!pm.is_running("main"));
        assert!(pm.is_running("b1"));
    }

    #[test]
    fn hot_restore() {
        let pm = SimulatedPartitionManager::new(PartitionLatencies::hot(Millis::from_ms(650)), ["main"]);
        let rec = execute(&backup(), &pm, Millis::from_ms(1000), ExecOptions::default()).unwrap();
        assert_eq!(rec.restore_ready, Some(Millis::from_ms(1650)));
    }

    #[test]
    fn empty_plan() {
        let pm = SimulatedPartitionManager::new(PartitionLatencies::hot(Millis::from_ms(650)), ["main"]);
        assert_eq!(execute(&[], &pm, Millis::ZERO, ExecOptions::default()).unwrap(), ExecutionRecord::default());
    }

    #[test]
    fn errors_name_the_action() {
        let pm = SimulatedPartitionManager::new(PartitionLatencies::hot(Millis::from_ms(650)), ["main"]);
        let e = execute(&[action(Opcode::Start, "main")], &pm, Millis::ZERO, ExecOptions::default()).unwrap_err();
        assert_eq!(e.index, 0);
        assert_eq!(e.source, PmError::AlreadyRunning("main".into()));
        assert!(pm.stop("ghost", Millis::ZERO).is_ok());
        assert!(pm.launch("ghost", "/x", Millis::ZERO).is_err());
    }

    #[test]
    fn manager_is_shareable() {
        fn assert_sync<T: Send + Sync>() {}
        assert_sync::<SimulatedPartitionManager>();
    }
}
