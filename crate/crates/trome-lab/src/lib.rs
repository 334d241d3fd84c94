//! Experiment runner for the wake-up routing protocols: scenario files,
//! Monte-Carlo and analytic sweeps, report writers and the verification
//! suite.

pub mod experiments;
pub mod oracle;
pub mod report;
pub mod safety;
pub mod scenario;
pub mod verify;
