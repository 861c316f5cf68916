//! The real-time control loop: parking-lot state, arrivals and departures,
//! one optimisation per slot, and the monthly peak tracker.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ArrivalBlockStats, ModelEv, ModelSet};
use crate::optimizer::{build_problem, solve, SchedulePlan, SolveOutcome, SolverOptions, StepDump};
use crate::scenario::{generate_scenarios, prune, DepartureScenarioSet, StayDistribution, DEFAULT_SCENARIOS};
use crate::tariff::TariffSchedule;
use crate::units::{kw_to_slot_kwh, slot_kwh_to_kw, DEFAULT_EVSE_COUNT, DEFAULT_P_MAX_KW, SLOTS_PER_BLOCK, SLOTS_PER_DAY};

/// Number of slots pinned at the start of a session under forced charging.
pub const FORCED_SLOTS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub w1: f64,
    pub w2: f64,
    pub transformer_kw: f64,
    /// Fraction of `p_max_kw` forced during the first hour, if any.
    pub forced_initial: Option<f64>,
    pub n_scenarios: usize,
    pub e_del_min: f64,
    pub relax_del_min: bool,
    pub evse_count: usize,
    pub p_max_kw: f64,
    pub stay_cv: f64,
    /// Peak (kW) assumed at the start of every billing month.
    pub e_old_seed_kw: f64,
    /// Stop planning energy for an EV once it has drawn less than its
    /// setpoint.
    pub detect_full: bool,
    pub solver: SolverOptions,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            w1: 10.0,
            w2: 1.0,
            transformer_kw: 150.0,
            forced_initial: None,
            n_scenarios: DEFAULT_SCENARIOS,
            e_del_min: 0.0,
            relax_del_min: true,
            evse_count: DEFAULT_EVSE_COUNT,
            p_max_kw: DEFAULT_P_MAX_KW,
            stay_cv: 0.4,
            e_old_seed_kw: 0.0,
            detect_full: true,
            solver: SolverOptions::default(),
        }
    }
}

impl ControllerConfig {
    pub fn e_max_slot(&self) -> f64 {
        kw_to_slot_kwh(self.p_max_kw)
    }

    pub fn e_trans_slot(&self) -> f64 {
        kw_to_slot_kwh(self.transformer_kw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluggedEv {
    pub ev_ref: String,
    pub evse_id: usize,
    /// Arrival slot in today's frame (0 for sessions carried over midnight).
    pub arrival_slot: usize,
    pub session_start_day: NaiveDate,
    /// Absolute slot of the session start, counted from the first day.
    pub start_abs: i64,
    pub delivered_so_far: f64,
    /// Energy delivered before today.
    pub carried_kwh: f64,
    /// Energy actually delivered in each slot of today.
    pub actual: Vec<f64>,
    pub scenarios: DepartureScenarioSet,
    /// Drew less than its setpoint at some point in the session.
    #[serde(default)]
    pub full: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub ev_ref: String,
    pub evse_id: usize,
    pub start_abs: i64,
    pub end_abs: i64,
    pub delivered_kwh: f64,
}

impl SessionSummary {
    pub fn stay_slots(&self) -> i64 {
        self.end_abs - self.start_abs
    }

    pub fn stay_hours(&self) -> f64 {
        self.stay_slots() as f64 / 4.0
    }
}

/// Outcome of one optimisation step.
#[derive(Debug, Clone)]
pub struct StepResult {
    /// kW per occupied EVSE for the current slot.
    pub setpoints: BTreeMap<usize, f64>,
    pub plan: Option<SchedulePlan>,
    pub infeasible: Option<String>,
    pub wall_time_s: f64,
}

impl StepResult {
    pub fn total_kw(&self) -> f64 {
        self.setpoints.values().fold(0.0, |a, b| a + b)
    }
}

#[derive(Debug, Clone)]
pub struct ParkingLotState {
    pub date: NaiveDate,
    pub day_index: i64,
    pub day_of_week: u8,
    pub current_slot: usize,
    pub plugged: BTreeMap<usize, PluggedEv>,
    pub e_old_peak_slot: f64,
    pub billing_month: (i32, u32),
    /// Model arrivals for today not yet matched by a real arrival.
    pub pending_model: Vec<ModelEv>,
    pub evse_count: usize,
    pub rejected: usize,
    pub infeasible: bool,
    rng: ChaCha8Rng,
}

impl ParkingLotState {
    pub fn new(start: NaiveDate, cfg: &ControllerConfig, seed: u64) -> Self {
        Self {
            date: start,
            day_index: 0,
            day_of_week: start.weekday().num_days_from_monday() as u8,
            current_slot: 0,
            plugged: BTreeMap::new(),
            e_old_peak_slot: kw_to_slot_kwh(cfg.e_old_seed_kw),
            billing_month: (start.year(), start.month()),
            pending_model: Vec::new(),
            evse_count: cfg.evse_count,
            rejected: 0,
            infeasible: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn free_evse_count(&self) -> usize {
        self.evse_count - self.plugged.len()
    }

    pub fn abs_slot(&self, slot: usize) -> i64 {
        self.day_index * SLOTS_PER_DAY as i64 + slot as i64
    }

    /// Moves to `date` (the first call keeps the start date). Sessions still
    /// plugged in restart at slot 0 with their energy carried and only the
    /// end-of-day departure assumed.
    pub fn start_day(&mut self, date: NaiveDate, model: &ModelSet, cfg: &ControllerConfig) {
        if date != self.date {
            self.day_index += (date - self.date).num_days();
            self.date = date;
        }
        self.day_of_week = date.weekday().num_days_from_monday() as u8;
        self.current_slot = 0;
        let month = (date.year(), date.month());
        if month != self.billing_month {
            self.billing_month = month;
            self.e_old_peak_slot = kw_to_slot_kwh(cfg.e_old_seed_kw);
        }
        self.pending_model = model.day_model(self.day_of_week).expected_arrivals;
        let day_start = self.abs_slot(0);
        for ev in self.plugged.values_mut() {
            if ev.start_abs < day_start {
                ev.arrival_slot = 0;
                ev.carried_kwh = ev.delivered_so_far;
                ev.actual = vec![0.0; SLOTS_PER_DAY];
                ev.scenarios = DepartureScenarioSet::fallback(ev.ev_ref.clone(), 0);
            }
        }
    }

    /// Plugs an EV into the first free EVSE. Returns `None` (and counts a
    /// rejection) when the lot is full.
    pub fn on_arrival(
        &mut self,
        ev_ref: &str,
        slot: usize,
        stats: Option<&ArrivalBlockStats>,
        cfg: &ControllerConfig,
    ) -> Option<usize> {
        let Some(evse_id) = (0..self.evse_count).find(|e| !self.plugged.contains_key(e)) else {
            self.rejected += 1;
            return None;
        };
        let scenarios = match stats {
            Some(st) if st.mean_stay_min > 0.0 => generate_scenarios(
                ev_ref,
                slot,
                &StayDistribution::from_block(st, cfg.stay_cv),
                cfg.n_scenarios,
                &mut self.rng,
            ),
            _ => DepartureScenarioSet::fallback(ev_ref, slot),
        };
        self.retire_model(slot);
        self.plugged.insert(
            evse_id,
            PluggedEv {
                ev_ref: ev_ref.to_string(),
                evse_id,
                arrival_slot: slot,
                session_start_day: self.date,
                start_abs: self.abs_slot(slot),
                delivered_so_far: 0.0,
                carried_kwh: 0.0,
                actual: vec![0.0; SLOTS_PER_DAY],
                scenarios,
                full: false,
            },
        );
        Some(evse_id)
    }

    /// Removes the pending model EV of this block closest to `slot`.
    fn retire_model(&mut self, slot: usize) {
        let block = slot / SLOTS_PER_BLOCK;
        let best = self
            .pending_model
            .iter()
            .enumerate()
            .filter(|(_, m)| m.block() == block)
            .min_by_key(|(_, m)| (m.arrival_slot.abs_diff(slot), m.arrival_slot))
            .map(|(i, _)| i);
        if let Some(i) = best {
            self.pending_model.remove(i);
        }
    }

    pub fn on_departure(&mut self, evse_id: usize, slot: usize) -> Result<SessionSummary> {
        let ev = self
            .plugged
            .remove(&evse_id)
            .ok_or_else(|| Error::Contract(format!("no EV plugged into EVSE {evse_id}")))?;
        Ok(SessionSummary {
            ev_ref: ev.ev_ref,
            evse_id,
            start_abs: ev.start_abs,
            end_abs: self.abs_slot(slot),
            delivered_kwh: ev.delivered_so_far,
        })
    }

    /// Prunes every scenario set and drops model arrivals that are due.
    pub fn prune_all(&mut self, slot: usize) {
        self.current_slot = slot;
        for ev in self.plugged.values_mut() {
            ev.scenarios = prune(&ev.scenarios, slot);
        }
        self.pending_model.retain(|m| m.arrival_slot > slot);
    }

    /// Formulates and solves the problem for the current slot. Infeasible
    /// problems give zero setpoints and mark the state.
    pub fn step(&mut self, tariff: &TariffSchedule, cfg: &ControllerConfig) -> Result<StepResult> {
        let prob = build_problem(self, tariff, cfg, self.current_slot)?;
        let outcome = solve(&prob, &cfg.solver).inspect_err(|_| {
            log::debug!("failed problem: {}", serde_json::to_string(&prob).unwrap_or_default());
        })?;
        if log::log_enabled!(log::Level::Debug) {
            let dump = StepDump::new(&prob, &outcome);
            log::debug!("{}", serde_json::to_string(&dump).unwrap_or_default());
        }
        let mut setpoints: BTreeMap<usize, f64> = self.plugged.keys().map(|&e| (e, 0.0)).collect();
        match outcome {
            SolveOutcome::Plan(plan) => {
                for (i, evse) in self.plugged.keys().enumerate() {
                    let kwh = plan.plans[i][self.current_slot];
                    setpoints.insert(*evse, slot_kwh_to_kw(kwh).clamp(0.0, cfg.p_max_kw));
                }
                let wall_time_s = plan.stats.wall_time_s;
                Ok(StepResult {
                    setpoints,
                    plan: Some(plan),
                    infeasible: None,
                    wall_time_s,
                })
            }
            SolveOutcome::Infeasible(cert) => {
                self.infeasible = true;
                Ok(StepResult {
                    setpoints,
                    plan: None,
                    infeasible: Some(cert),
                    wall_time_s: 0.0,
                })
            }
        }
    }

    /// Records energy actually delivered at `evse_id` in the current slot.
    pub fn commit(&mut self, evse_id: usize, kwh: f64) -> Result<()> {
        let slot = self.current_slot;
        let ev = self
            .plugged
            .get_mut(&evse_id)
            .ok_or_else(|| Error::Contract(format!("no EV plugged into EVSE {evse_id}")))?;
        ev.actual[slot] = kwh;
        ev.delivered_so_far += kwh;
        Ok(())
    }

    /// Like [`commit`](Self::commit), also noting an EV that took less than
    /// it was offered.
    pub fn commit_metered(&mut self, evse_id: usize, setpoint_kwh: f64, kwh: f64) -> Result<()> {
        self.commit(evse_id, kwh)?;
        if kwh < setpoint_kwh - 1e-9 {
            self.plugged.get_mut(&evse_id).expect("committed above").full = true;
        }
        Ok(())
    }

    pub fn update_peak(&mut self, actual_total_power_kw: f64) {
        self.e_old_peak_slot = self.e_old_peak_slot.max(kw_to_slot_kwh(actual_total_power_kw));
    }
}
