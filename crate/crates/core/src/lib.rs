//! Day-ahead demand-response scheduling for residential flexible devices.
//!
//! The crate turns device-level load data into probabilistic flex-offers,
//! learns how much delay each user tolerates, and picks start times that
//! maximise expected market savings weighted by the chance of acceptance.
//! The [`simulation`] module wraps everything in a prequential test harness.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flexoffer;
pub mod forecast;
pub mod load_data;
pub mod market;
pub mod scheduler;
pub mod simulation;
pub mod user_flex;

pub use error::{Error, Result};

/// Scheduling horizon in hours, counted from midnight of the forecast day.
pub const HORIZON_HOURS: u32 = 48;

/// Largest hour index inside the horizon.
pub const MAX_HOUR: u32 = HORIZON_HOURS - 1;
