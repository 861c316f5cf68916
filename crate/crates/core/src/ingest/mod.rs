//! Charging-session data: CSV parsing, weekday × 2-hour block statistics,
//! the certainty-equivalent day model and a calibrated synthetic generator.

pub mod model;
pub mod session;
pub mod synth;

pub use model::{
    block_of, build_block_stats, build_day_model, ArrivalBlockStats, DayModel, ModelEv, ModelSet,
};
pub use session::{
    parse_sessions, parse_sessions_from_reader, write_rejects, write_sessions, ChargingSession,
    ParsedSessions, RejectedRow,
};
pub use synth::{generate_synthetic_trace, SynthConfig};
