//! Utility-optimal CSMA: exact product-form analysis, continuous- and
//! discrete-time simulation, the queue-based rate adaptation and its
//! mean-field limit, and reference optimizers.

// `!(x > 0.0)` is used throughout so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod ctsim;
pub mod dtsim;
pub mod error;
pub mod exact;
pub mod functions;
pub mod graph;
pub mod harness;
pub mod ode;
pub mod oracle;

pub use error::{Error, Result};
pub use graph::{ConflictGraph, Schedule, ScheduleSet};
