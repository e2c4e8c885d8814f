//! Decentralized runtime protection for component-based control systems.
//!
//! Every protected partition is guarded by a local monitor/analyze/plan/execute
//! loop (a *unit*). Units cooperate over the data-flow graph with failure
//! beacons so that only the root cause of a cascading failure is mitigated,
//! upstream first, while merely affected units wait and clear.
//!
//! Module map:
//! - [`model`]: components, ports, isolation properties and the data-flow graph.
//! - [`protocol`]: the per-unit cooperation state machine and its wire format.
//! - [`mape`]: detectors, the score voter, planner and executor.
//! - [`policy`]: the sliding-window CAN frame rule language.
//! - [`sim`]: deterministic discrete-event simulator and timing reports.

pub mod clock;
pub mod mape;
pub mod model;
pub mod policy;
pub mod protocol;
pub mod sim;

pub use clock::Millis;
pub use model::UnitId;
