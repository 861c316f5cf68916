//! Slot grid and unit conversions.
//!
//! Everything inside the optimizer is per-slot energy in kWh. Powers in kW
//! convert with a factor of four because a slot is a quarter hour.

/// Number of 15-minute slots in a day.
pub const SLOTS_PER_DAY: usize = 96;
pub const SLOT_MINUTES: u32 = 15;
pub const SLOT_HOURS: f64 = 0.25;
/// Number of 2-hour arrival blocks in a day.
pub const BLOCKS_PER_DAY: usize = 12;
pub const SLOTS_PER_BLOCK: usize = SLOTS_PER_DAY / BLOCKS_PER_DAY;
/// Level 2 EVSE rating.
pub const DEFAULT_P_MAX_KW: f64 = 6.6;
pub const DEFAULT_EVSE_COUNT: usize = 57;

#[inline]
pub fn kw_to_slot_kwh(kw: f64) -> f64 {
    kw * SLOT_HOURS
}

#[inline]
pub fn slot_kwh_to_kw(kwh: f64) -> f64 {
    kwh / SLOT_HOURS
}

/// Slot index of a minute-of-day.
#[inline]
pub fn slot_of_minute(minute_of_day: u32) -> usize {
    (minute_of_day / SLOT_MINUTES) as usize
}
