//! Traffic-flow simulation with ramp metering driven by an online estimate
//! of the bottleneck's critical density.

pub mod alinea;
pub mod config;
pub mod error;
pub mod estimator;
pub mod fd;
pub mod metanet;
pub mod output;
pub mod scenario;

pub use error::{Error, Result};
pub use scenario::{run_scenario, RunResult, ScenarioConfig, ScenarioId};
