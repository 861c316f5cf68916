use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::ChargingSession;
use crate::error::{Error, Result};
use crate::units::{BLOCKS_PER_DAY, SLOTS_PER_BLOCK, SLOTS_PER_DAY, SLOT_MINUTES};

/// Per-block averages used for the day model and for scenario sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalBlockStats {
    /// 0 = Monday.
    pub weekday: u8,
    /// 2-hour window index, block `b` covers `[2b, 2b + 2)` hours.
    pub block: u8,
    pub mean_arrivals_per_day: f64,
    pub mean_energy_kwh: f64,
    pub mean_stay_min: f64,
    #[serde(default)]
    pub stay_samples: Vec<f64>,
}

impl ArrivalBlockStats {
    pub fn empty(weekday: u8, block: u8) -> Self {
        Self {
            weekday,
            block,
            mean_arrivals_per_day: 0.0,
            mean_energy_kwh: 0.0,
            mean_stay_min: 0.0,
            stay_samples: Vec::new(),
        }
    }

    pub fn first_slot(&self) -> usize {
        self.block as usize * SLOTS_PER_BLOCK
    }
}

/// One expected future arrival in the certainty-equivalent model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelEv {
    pub arrival_slot: usize,
    /// Exclusive end of availability, at most 96 (end of day).
    pub expected_departure_slot: usize,
    pub expected_energy_kwh: f64,
}

impl ModelEv {
    pub fn block(&self) -> usize {
        self.arrival_slot / SLOTS_PER_BLOCK
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayModel {
    pub weekday: u8,
    pub expected_arrivals: Vec<ModelEv>,
}

/// Arrival block of a timestamp: `floor(hour / 2)`.
pub fn block_of(arrival: NaiveDateTime) -> usize {
    arrival.hour() as usize / 2
}

/// Averages the sessions arriving on `weekday` per 2-hour block.
///
/// `mean_arrivals_per_day` divides by the number of distinct dates on that
/// weekday that appear in the data.
pub fn build_block_stats(sessions: &[ChargingSession], weekday: u8) -> Vec<ArrivalBlockStats> {
    let on_day: Vec<&ChargingSession> = sessions
        .iter()
        .filter(|s| s.arrival.weekday().num_days_from_monday() as u8 == weekday)
        .collect();
    let dates: BTreeSet<_> = on_day.iter().map(|s| s.arrival.date()).collect();
    let n_dates = dates.len() as f64;

    let mut stats: Vec<ArrivalBlockStats> = (0..BLOCKS_PER_DAY as u8)
        .map(|b| ArrivalBlockStats::empty(weekday, b))
        .collect();
    let mut energy_sum = [0.0; BLOCKS_PER_DAY];
    for s in &on_day {
        let b = block_of(s.arrival);
        energy_sum[b] += s.energy_kwh;
        stats[b].stay_samples.push(s.stay_minutes() as f64);
    }
    for (b, st) in stats.iter_mut().enumerate() {
        let count = st.stay_samples.len();
        if count == 0 {
            continue;
        }
        st.mean_arrivals_per_day = count as f64 / n_dates;
        st.mean_energy_kwh = energy_sum[b] / count as f64;
        st.mean_stay_min = st.stay_samples.iter().sum::<f64>() / count as f64;
    }
    stats
}

/// Expands block statistics into expected arrivals for one day.
///
/// Each block contributes `round(mean_arrivals_per_day)` EVs (half rounds
/// up) spread evenly over its 8 slots. The expected stay is floored to the
/// slot grid, at least one slot, and clipped to the end of the day.
pub fn build_day_model(stats: &[ArrivalBlockStats]) -> DayModel {
    let weekday = stats.first().map_or(0, |s| s.weekday);
    let mut expected_arrivals = Vec::new();
    for st in stats {
        let count = (st.mean_arrivals_per_day + 0.5).floor() as usize;
        if count == 0 || st.mean_stay_min <= 0.0 {
            continue;
        }
        let stay_slots = ((st.mean_stay_min / SLOT_MINUTES as f64).floor() as usize).max(1);
        for i in 0..count {
            let arrival_slot = st.first_slot() + i * SLOTS_PER_BLOCK / count;
            expected_arrivals.push(ModelEv {
                arrival_slot,
                expected_departure_slot: (arrival_slot + stay_slots).min(SLOTS_PER_DAY),
                expected_energy_kwh: st.mean_energy_kwh,
            });
        }
    }
    expected_arrivals.sort_by_key(|m| m.arrival_slot);
    DayModel {
        weekday,
        expected_arrivals,
    }
}

/// Average energy (kWh) and stay (minutes) per arrival block for the
/// reference site.
pub const REFERENCE_BLOCK_ENERGY_STAY: [(f64, f64); BLOCKS_PER_DAY] = [
    (5.56, 278.0),
    (4.00, 122.0),
    (12.91, 232.0),
    (14.63, 329.0),
    (15.79, 362.0),
    (9.27, 362.0),
    (7.41, 675.0),
    (6.80, 966.0),
    (7.14, 987.0),
    (6.61, 1399.0),
    (6.78, 1554.0),
    (7.74, 601.0),
];

/// Expected weekday arrivals per block for the reference site (about 65 per
/// weekday, concentrated in the morning).
pub const REFERENCE_WEEKDAY_ARRIVALS: [f64; BLOCKS_PER_DAY] =
    [0.3, 0.1, 0.6, 5.0, 18.0, 14.0, 12.0, 8.0, 4.0, 1.5, 0.6, 0.4];

/// Weekend arrivals as a fraction of the weekday profile.
pub const REFERENCE_WEEKEND_SCALE: f64 = 0.1;

/// Block statistics for all seven weekdays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub weekdays: Vec<Vec<ArrivalBlockStats>>,
}

impl ModelSet {
    pub fn from_sessions(sessions: &[ChargingSession]) -> Self {
        Self {
            weekdays: (0..7).map(|d| build_block_stats(sessions, d)).collect(),
        }
    }

    /// The built-in reference calibration used for synthetic traces.
    pub fn reference() -> Self {
        let weekdays = (0..7u8)
            .map(|day| {
                let scale = if day >= 5 { REFERENCE_WEEKEND_SCALE } else { 1.0 };
                (0..BLOCKS_PER_DAY)
                    .map(|b| {
                        let (energy, stay) = REFERENCE_BLOCK_ENERGY_STAY[b];
                        ArrivalBlockStats {
                            weekday: day,
                            block: b as u8,
                            mean_arrivals_per_day: REFERENCE_WEEKDAY_ARRIVALS[b] * scale,
                            mean_energy_kwh: energy,
                            mean_stay_min: stay,
                            stay_samples: Vec::new(),
                        }
                    })
                    .collect()
            })
            .collect();
        Self { weekdays }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weekdays.len() != 7 {
            return Err(Error::Format(format!(
                "model has {} weekdays, expected 7",
                self.weekdays.len()
            )));
        }
        for (d, blocks) in self.weekdays.iter().enumerate() {
            if blocks.len() != BLOCKS_PER_DAY {
                return Err(Error::Format(format!(
                    "weekday {d} has {} blocks, expected 12",
                    blocks.len()
                )));
            }
            for (b, st) in blocks.iter().enumerate() {
                let ok = st.weekday as usize == d
                    && st.block as usize == b
                    && st.mean_arrivals_per_day >= 0.0
                    && st.mean_energy_kwh >= 0.0
                    && (st.mean_arrivals_per_day == 0.0 || st.mean_stay_min > 0.0);
                if !ok {
                    return Err(Error::Format(format!("weekday {d} block {b} is invalid")));
                }
            }
        }
        Ok(())
    }

    pub fn stats(&self, weekday: u8) -> &[ArrivalBlockStats] {
        &self.weekdays[weekday as usize]
    }

    pub fn block(&self, weekday: u8, block: usize) -> &ArrivalBlockStats {
        &self.weekdays[weekday as usize][block]
    }

    pub fn day_model(&self, weekday: u8) -> DayModel {
        build_day_model(self.stats(weekday))
    }

    /// Block stats usable for sampling stays at `(weekday, block)`: the block
    /// itself if it has a positive mean stay, otherwise the nearest block
    /// that does.
    pub fn sampling_stats(&self, weekday: u8, block: usize) -> Option<&ArrivalBlockStats> {
        let blocks = self.stats(weekday);
        (0..BLOCKS_PER_DAY)
            .flat_map(|d| [block.checked_sub(d), Some(block + d)])
            .flatten()
            .filter(|&b| b < BLOCKS_PER_DAY)
            .map(|b| &blocks[b])
            .find(|st| st.mean_stay_min > 0.0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("model export: {e}")))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelSet = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("model file {}: {e}", path.display())))?;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};

    fn session(date: NaiveDate, hh: u32, mm: u32, stay_min: i64, energy: f64) -> ChargingSession {
        let arrival = date.and_hms_opt(hh, mm, 0).unwrap();
        ChargingSession {
            session_id: format!("{arrival}"),
            evse_id: None,
            arrival,
            departure: arrival + Duration::minutes(stay_min),
            energy_kwh: energy,
            per_slot_power: None,
        }
    }

    fn monday() -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 6, 17).unwrap()
    }

    #[test]
    fn block_examples() {
        let d = monday();
        assert_eq!(block_of(d.and_hms_opt(9, 48, 0).unwrap()), 4);
        assert_eq!(block_of(d.and_hms_opt(0, 0, 0).unwrap()), 0);
        assert_eq!(block_of(d.and_hms_opt(23, 59, 0).unwrap()), 11);
    }

    #[test]
    fn block_of_is_total_and_surjective() {
        let d = monday();
        let mut seen = [false; 12];
        for minute in 0..24 * 60 {
            let b = block_of(d.and_hms_opt(minute / 60, minute % 60, 0).unwrap());
            assert!(b < 12);
            seen[b] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn single_block_stats() {
        let sessions: Vec<_> = (0..6)
            .map(|i| session(monday(), 8 + i % 2, 10 * i, 362, 15.79))
            .collect();
        let stats = build_block_stats(&sessions, 0);
        assert_eq!(stats.len(), 12);
        let b4 = &stats[4];
        assert!((b4.mean_energy_kwh - 15.79).abs() < 1e-12);
        assert_eq!(b4.mean_stay_min, 362.0);
        assert_eq!(b4.mean_arrivals_per_day, 6.0);
        for (b, st) in stats.iter().enumerate() {
            if b != 4 {
                assert_eq!(st.mean_arrivals_per_day, 0.0);
            }
        }
    }

    #[test]
    fn identical_sessions_in_every_block() {
        let sessions: Vec<_> = (0..12).map(|b| session(monday(), 2 * b, 30, 90, 4.0)).collect();
        let stats = build_block_stats(&sessions, 0);
        for st in &stats {
            assert_eq!(st.mean_arrivals_per_day, 1.0);
            assert_eq!(st.mean_energy_kwh, 4.0);
            assert_eq!(st.mean_stay_min, 90.0);
        }
        let total: f64 = stats.iter().map(|s| s.mean_arrivals_per_day).sum();
        assert_eq!(total, 12.0);
    }

    #[test]
    fn arrivals_averaged_over_dates() {
        let second = monday() + Duration::days(7);
        let mut sessions: Vec<_> = (0..3).map(|i| session(monday(), 8, i, 60, 5.0)).collect();
        sessions.extend((0..5).map(|i| session(second, 9, i, 60, 5.0)));
        let stats = build_block_stats(&sessions, 0);
        assert_eq!(stats[4].mean_arrivals_per_day, 4.0);
        // other weekdays see nothing
        assert!(build_block_stats(&sessions, 1)
            .iter()
            .all(|s| s.mean_arrivals_per_day == 0.0));
    }

    fn stats_with(block: u8, mean: f64, stay: f64, energy: f64) -> Vec<ArrivalBlockStats> {
        (0..12u8)
            .map(|b| {
                let mut st = ArrivalBlockStats::empty(0, b);
                if b == block {
                    st.mean_arrivals_per_day = mean;
                    st.mean_stay_min = stay;
                    st.mean_energy_kwh = energy;
                }
                st
            })
            .collect()
    }

    #[test]
    fn zero_block_contributes_nothing() {
        let model = build_day_model(&stats_with(4, 0.0, 362.0, 15.79));
        assert!(model.expected_arrivals.is_empty());
        let model = build_day_model(&stats_with(4, 0.49, 362.0, 15.79));
        assert!(model.expected_arrivals.is_empty());
        let model = build_day_model(&stats_with(4, 0.5, 362.0, 15.79));
        assert_eq!(model.expected_arrivals.len(), 1);
    }

    #[test]
    fn eight_arrivals_in_block_four() {
        let model = build_day_model(&stats_with(4, 8.0, 362.0, 15.79));
        let slots: Vec<_> = model.expected_arrivals.iter().map(|m| m.arrival_slot).collect();
        assert_eq!(slots, (32..40).collect::<Vec<_>>());
        for m in &model.expected_arrivals {
            // 362 min floors to 24 slots
            assert_eq!(m.expected_departure_slot, m.arrival_slot + 24);
            assert_eq!(m.expected_energy_kwh, 15.79);
        }
    }

    #[test]
    fn long_afternoon_stay_is_clipped() {
        // 2:00pm-4:00pm block, 16 h 06 min
        let model = build_day_model(&stats_with(7, 3.0, 966.0, 6.80));
        assert_eq!(model.expected_arrivals.len(), 3);
        for m in &model.expected_arrivals {
            assert_eq!(m.expected_departure_slot, SLOTS_PER_DAY);
            assert!(m.expected_departure_slot > m.arrival_slot);
        }
    }

    #[test]
    fn reference_model_is_valid_and_sorted() {
        let set = ModelSet::reference();
        set.validate().unwrap();
        let monday = set.day_model(0);
        assert!(monday
            .expected_arrivals
            .windows(2)
            .all(|w| w[0].arrival_slot <= w[1].arrival_slot));
        let total: f64 = set.stats(0).iter().map(|s| s.mean_arrivals_per_day).sum();
        assert!((50.0..=100.0).contains(&total), "{total}");
    }

    #[test]
    fn sampling_stats_falls_back_to_nearest_block() {
        let set = ModelSet {
            weekdays: (0..7).map(|_| stats_with(4, 8.0, 362.0, 15.79)).collect(),
        };
        assert_eq!(set.sampling_stats(0, 4).unwrap().block, 4);
        assert_eq!(set.sampling_stats(0, 9).unwrap().block, 4);
        let empty = ModelSet {
            weekdays: (0..7).map(|d| (0..12).map(|b| ArrivalBlockStats::empty(d, b)).collect()).collect(),
        };
        assert!(empty.sampling_stats(0, 4).is_none());
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let set = ModelSet::reference();
        set.save(&path).unwrap();
        let back = ModelSet::load(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.day_model(2), set.day_model(2));
    }
}
