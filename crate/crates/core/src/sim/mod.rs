//! Deterministic discrete-event simulation of units, channel and partitions.
//!
//! A [`Scenario`] is loaded from JSON, [`run`] produces an [`EventLog`] with
//! one line per event (`t_ms kind unit_id payload`), and [`timing_report`]
//! turns the log into per-unit recovery timings.

mod compose;
mod engine;
mod log;
mod report;
mod scenario;
mod synth;

pub use compose::{compose_expected, hops_from, involved, propagation_edges};
pub use engine::{replay_check, run};
pub use log::{EventLog, Payload, SimEvent};
pub use report::{timing_report, TimingReport, UnitClass, UnitTiming};
pub use scenario::{
    default_adaptation, load_scenario, Calibration, CanStream, ChannelConfig, DetectorConfig, EdgeOverride, Effect,
    FaultKind, Injection, PartitionConfig, PartitionMode, ProcessEntry, PropagationConfig, Scenario, ScenarioError,
    TelemetryConfig, UnitSetup,
};
pub use synth::SampleGenerator;
