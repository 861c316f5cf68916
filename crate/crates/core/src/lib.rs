//! Receding-horizon smart charging for workplace EV parking lots.
//!
//! The crate is organised along the data flow of a simulation run:
//!
//! - [`tariff`]: time-of-use energy prices and the monthly demand charge.
//! - [`ingest`]: charging-session CSV parsing, weekday/2-hour block statistics,
//!   the certainty-equivalent [`ingest::DayModel`] and a synthetic trace generator.
//! - [`scenario`]: departure-time scenarios for plugged-in EVs.
//! - [`optimizer`]: the per-slot concave scheduling program, its interior-point
//!   solver, a KKT residual check and a brute-force grid oracle.
//! - [`controller`]: the slot-by-slot control loop over the parking-lot state.
//! - [`simulator`]: closed-loop runs over traces, the uncontrolled baseline,
//!   feasibility sweeps and Table-style comparison reports.
//! - [`cli`]: the `evlot` command-line front end.

pub mod cli;
pub mod controller;
pub mod error;
pub mod ingest;
pub mod optimizer;
pub mod scenario;
pub mod simulator;
pub mod tariff;
pub mod units;

pub use error::{Error, Result};
