//! Synthetic data, simulated users and the prequential evaluation harness.

pub mod config;
pub mod experiments;
pub mod oracle;
pub mod prequential;
pub mod report;
pub mod synthetic;
