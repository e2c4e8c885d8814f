//! Local self-protection: monitor, analyze, plan and execute for one unit.
//!
//! Detectors score each monitoring window 0 (clean) or 1 (anomaly matched);
//! a majority voter over the last `k` windows decides whether the unit has
//! failed. Plans are lists of pseudo actions that an executor translates into
//! partition-manager calls.

mod config;
mod detect;
mod execute;
mod plan;
mod telemetry;
mod vote;

pub use config::{AdaptationConfig, ConfigError, MainNode, SubNode};
pub use detect::{
    check_resources, check_syscalls, cross_validate_can, heartbeat_check, train_baseline, validate_processes,
    BaselineError, CanDetector, Detector, DetectorId, HeartbeatDetector, ProcessDetector, ProcessFinding,
    ResourceDetector, SyscallBaseline, SyscallDetector,
};
pub use execute::{
    execute, ActionRecord, ExecError, ExecOptions, ExecutionRecord, PartitionLatencies, PartitionManager, PmError,
    SimulatedPartitionManager,
};
pub use plan::{plan, Opcode, Plan, PlanError, PlanKind, PlanMessage, PlanPayload, PlannerState, PseudoAction, SYSTEM};
pub use telemetry::{LaunchSnapshot, ProcessInfo, ProcessWhitelist, ResourceUsage, SampleError, TelemetrySample};
pub use vote::{vote, DetectionReport, Voter};
