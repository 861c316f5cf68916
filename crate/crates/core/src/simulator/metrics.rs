use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::tariff::{demand_charge, DayKind, TariffSchedule};
use crate::units::{kw_to_slot_kwh, SLOTS_PER_DAY};

/// Slots counted as "midday" for the peak-rate avoidance check (12:00-18:00).
pub const MIDDAY_SLOTS: std::ops::Range<usize> = 48..72;

/// Actuated lot power for one simulated day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayLoad {
    pub date: NaiveDate,
    pub kw: Vec<f64>,
}

impl DayLoad {
    pub fn new(date: NaiveDate) -> Self {
        Self {
            date,
            kw: vec![0.0; SLOTS_PER_DAY],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetrics {
    pub label: String,
    pub total_energy_kwh: f64,
    pub energy_cost_usd: f64,
    pub demand_charge_usd: f64,
    pub peak_kw: f64,
    pub midday_energy_kwh: f64,
    pub sessions: usize,
    pub rejected_arrivals: usize,
    pub feasible: bool,
    pub infeasible_steps: usize,
    pub first_infeasible: Option<String>,
}

/// Percentages of a test run relative to the baseline. A column is `None`
/// when the baseline value is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ratios {
    pub energy_pct: Option<f64>,
    pub energy_cost_pct: Option<f64>,
    pub demand_charge_pct: Option<f64>,
}

fn pct(test: f64, base: f64) -> Option<f64> {
    (base > 0.0).then(|| 100.0 * test / base)
}

impl SimulationMetrics {
    /// Energy, cost and demand charge of the actuated load. Counts and the
    /// feasibility fields are left for the caller.
    pub fn from_loads(label: impl Into<String>, days: &[DayLoad], tariff: &TariffSchedule) -> Self {
        let mut total = 0.0;
        let mut cost = 0.0;
        let mut midday = 0.0;
        let mut peak: f64 = 0.0;
        let mut monthly: BTreeMap<(i32, u32), f64> = BTreeMap::new();
        for day in days {
            let prices = tariff.price_vector(DayKind::of(day.date));
            let month = monthly.entry((day.date.year(), day.date.month())).or_insert(0.0);
            for (t, &kw) in day.kw.iter().enumerate() {
                let kwh = kw_to_slot_kwh(kw);
                total += kwh;
                cost += kwh * prices[t];
                if MIDDAY_SLOTS.contains(&t) {
                    midday += kwh;
                }
                peak = peak.max(kw);
                *month = month.max(kw);
            }
        }
        Self {
            label: label.into(),
            total_energy_kwh: total,
            energy_cost_usd: cost,
            demand_charge_usd: monthly.values().fold(0.0, |a, &p| a + demand_charge(p, tariff)),
            peak_kw: peak,
            midday_energy_kwh: midday,
            sessions: 0,
            rejected_arrivals: 0,
            feasible: true,
            infeasible_steps: 0,
            first_infeasible: None,
        }
    }

    pub fn midday_share(&self) -> Option<f64> {
        (self.total_energy_kwh > 0.0).then(|| self.midday_energy_kwh / self.total_energy_kwh)
    }

    /// Ratios against `baseline`; `None` for infeasible runs and for a
    /// baseline that delivered nothing.
    pub fn ratios(&self, baseline: &SimulationMetrics) -> Option<Ratios> {
        if !self.feasible || baseline.total_energy_kwh <= 0.0 {
            return None;
        }
        Some(Ratios {
            energy_pct: pct(self.total_energy_kwh, baseline.total_energy_kwh),
            energy_cost_pct: pct(self.energy_cost_usd, baseline.energy_cost_usd),
            demand_charge_pct: pct(self.demand_charge_usd, baseline.demand_charge_usd),
        })
    }
}
