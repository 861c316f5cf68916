use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{ArrivalBlockStats, ChargingSession, ModelSet};
use crate::units::{BLOCKS_PER_DAY, DEFAULT_P_MAX_KW};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Coefficient of variation of the log-normal stay distribution.
    pub stay_cv: f64,
    /// Standard deviation of the energy draw relative to the block mean.
    pub energy_cv: f64,
    pub min_energy_kwh: f64,
    pub p_max_kw: f64,
    /// Expected weekday totals are scaled into this range (inclusive).
    pub weekday_arrivals: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            stay_cv: 0.4,
            energy_cv: 0.4,
            min_energy_kwh: 0.5,
            p_max_kw: DEFAULT_P_MAX_KW,
            weekday_arrivals: (50.0, 100.0),
        }
    }
}

/// Log-normal with the given mean and coefficient of variation.
pub fn lognormal_with_mean(mean: f64, cv: f64) -> LogNormal<f64> {
    let sigma2 = (1.0 + cv * cv).ln();
    let mu = mean.ln() - sigma2 / 2.0;
    LogNormal::new(mu, sigma2.sqrt()).expect("finite log-normal parameters")
}

/// Scale applied to a weekday's block means so their sum lands in range.
/// Weekend days and empty days are left alone.
pub fn weekday_scale(stats: &[ArrivalBlockStats], weekday: u8, cfg: &SynthConfig) -> f64 {
    let total: f64 = stats.iter().map(|s| s.mean_arrivals_per_day).sum();
    if weekday >= 5 || total <= 0.0 {
        return 1.0;
    }
    let (lo, hi) = cfg.weekday_arrivals;
    total.clamp(lo, hi) / total
}

/// Draws one energy value: normal around the mean, truncated symmetrically to
/// `(0, 2 * mean)`, then floored and capped by what the stay can deliver.
fn draw_energy(rng: &mut ChaCha8Rng, mean: f64, cfg: &SynthConfig, stay_min: i64) -> f64 {
    let cap = stay_min as f64 / 60.0 * cfg.p_max_kw;
    let raw = if mean <= 0.0 || cfg.energy_cv <= 0.0 {
        mean
    } else {
        let normal = Normal::new(mean, cfg.energy_cv * mean).expect("finite normal");
        loop {
            let v = normal.sample(rng);
            if v > 0.0 && v < 2.0 * mean {
                break v;
            }
        }
    };
    raw.max(cfg.min_energy_kwh).min(cap)
}

/// Samples a session trace for every date in `[start, end]` (inclusive).
pub fn generate_synthetic_trace(
    model: &ModelSet,
    start: NaiveDate,
    end: NaiveDate,
    seed: u64,
    cfg: &SynthConfig,
) -> Vec<ChargingSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sessions = Vec::new();
    let mut date = start;
    while date <= end {
        let weekday = date.weekday().num_days_from_monday() as u8;
        let stats = model.stats(weekday);
        let scale = weekday_scale(stats, weekday, cfg);
        let mut k = 0;
        for b in 0..BLOCKS_PER_DAY {
            let st = &stats[b];
            let lambda = st.mean_arrivals_per_day * scale;
            if lambda <= 0.0 || st.mean_stay_min <= 0.0 {
                continue;
            }
            let count = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize;
            let stay_dist = (cfg.stay_cv > 0.0).then(|| lognormal_with_mean(st.mean_stay_min, cfg.stay_cv));
            for _ in 0..count {
                let minute = b as i64 * 120 + rng.random_range(0..120);
                let stay = match &stay_dist {
                    Some(d) => d.sample(&mut rng),
                    None => st.mean_stay_min,
                };
                let stay_min = (stay.round() as i64).max(15);
                let energy = draw_energy(&mut rng, st.mean_energy_kwh, cfg, stay_min);
                let arrival = date.and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(minute);
                k += 1;
                sessions.push(ChargingSession {
                    session_id: format!("{}-{k:03}", date.format("%Y%m%d")),
                    evse_id: None,
                    arrival,
                    departure: arrival + Duration::minutes(stay_min),
                    energy_kwh: energy,
                    per_slot_power: None,
                });
            }
        }
        date += Duration::days(1);
    }
    sessions.sort_by(|a, b| a.arrival.cmp(&b.arrival).then_with(|| a.session_id.cmp(&b.session_id)));
    for (i, s) in sessions.iter_mut().enumerate() {
        // the energy is rounded the same way the CSV writer does, so traces
        // survive a round trip through disk unchanged
        s.energy_kwh = (s.energy_kwh * 1e4).round() / 1e4;
        s.energy_kwh = s.energy_kwh.min(s.stay_minutes() as f64 / 60.0 * cfg.p_max_kw);
        debug_assert!(s.validate().is_ok(), "session {i} invalid");
    }
    sessions
}
