//! Discrete-event simulation of a deployment and the two reference experiments.

pub mod engine;
pub mod experiments;
pub mod flows;
pub mod kernel;
pub mod metrics;
pub mod scenario;

pub use engine::{run, run_report, EapSnapshot, HandshakeRecord, Report, SimStats};
pub use metrics::{Bounds, Metrics, Row, SummaryRow};
pub use scenario::{Mode, Scenario, ScenarioError};
