//! Day-ahead dispatch and real-time EV battery control, with VCG-style
//! payments for leased storage and a multi-day market simulator.

pub mod config;
pub mod cost;
pub mod dispatch;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod fmt;
pub mod mdp;
pub mod mechanism;
pub mod oracle;
pub mod prob;
pub mod sim;

pub use error::{Error, Result};
