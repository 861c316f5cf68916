use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::Serialize;

use super::config::SimConfig;
use super::metrics::{DayLoad, SimulationMetrics};
use crate::controller::{ParkingLotState, SessionSummary};
use crate::error::Error;
use crate::ingest::{ChargingSession, ModelSet};
use crate::tariff::TariffSchedule;
use crate::units::{kw_to_slot_kwh, slot_kwh_to_kw, SLOTS_PER_BLOCK, SLOTS_PER_DAY, SLOT_MINUTES};

/// What actually happens to an EV. Only the simulation engine sees this.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvTruth {
    pub ev_ref: String,
    /// Absolute slot of arrival, counted from the first simulated day.
    pub arrival_abs: i64,
    /// Absolute slot at whose start the EV leaves.
    pub true_departure_slot: i64,
    pub true_energy_demand: f64,
}

impl EvTruth {
    pub fn day_index(&self) -> i64 {
        self.arrival_abs.div_euclid(SLOTS_PER_DAY as i64)
    }

    pub fn slot(&self) -> usize {
        self.arrival_abs.rem_euclid(SLOTS_PER_DAY as i64) as usize
    }
}

/// Truths for the sessions arriving within `[start, end]`, in arrival order.
///
/// The departure slot is the slot containing the recorded departure, and at
/// least one slot after arrival.
pub fn truths(trace: &[ChargingSession], start: NaiveDate, end: NaiveDate) -> Vec<EvTruth> {
    let origin = start.and_hms_opt(0, 0, 0).unwrap();
    let slot_min = SLOT_MINUTES as i64;
    let mut out: Vec<EvTruth> = trace
        .iter()
        .filter(|s| (start..=end).contains(&s.arrival_date()))
        .map(|s| {
            let arrival_abs = (s.arrival - origin).num_minutes().div_euclid(slot_min);
            let dep = (s.departure - origin).num_minutes().div_euclid(slot_min);
            EvTruth {
                ev_ref: s.session_id.clone(),
                arrival_abs,
                true_departure_slot: dep.max(arrival_abs + 1),
                true_energy_demand: s.energy_kwh.max(0.0),
            }
        })
        .collect();
    out.sort_by(|a, b| a.arrival_abs.cmp(&b.arrival_abs).then_with(|| a.ev_ref.cmp(&b.ev_ref)));
    out
}

/// One row of the per-slot log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub date: NaiveDate,
    pub slot: usize,
    pub plugged: usize,
    pub planned_kw: f64,
    pub actuated_kw: f64,
    /// Billing-month peak after this slot, seed included.
    pub peak_kw: f64,
    pub feasible: bool,
}

/// Solver timing for one step. Kept apart from [`SlotRecord`] so the
/// per-slot log stays reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTiming {
    pub date: NaiveDate,
    pub slot: usize,
    pub real_evs: usize,
    pub iterations: usize,
    pub wall_time_s: f64,
}

/// The whole-day planned lot power at one step: actuals for past slots, the
/// plan (model EVs included) from the current slot on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanSnapshot {
    pub date: NaiveDate,
    pub slot: usize,
    pub planned_kw: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Slots at which to record a [`PlanSnapshot`], on every day.
    pub snapshot_slots: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: SimulationMetrics,
    pub timeseries: Vec<SlotRecord>,
    pub sessions: Vec<SessionSummary>,
    pub timings: Vec<StepTiming>,
    pub snapshots: Vec<PlanSnapshot>,
}

impl RunOutput {
    pub fn wall_time_percentile(&self, q: f64) -> f64 {
        let mut t: Vec<f64> = self.timings.iter().map(|s| s.wall_time_s).collect();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        let idx = ((q * t.len() as f64).ceil() as usize).clamp(1, t.len()) - 1;
        t[idx]
    }
}

/// A run stopped by a solver failure, with everything logged up to it.
#[derive(Debug)]
pub struct RunAbort {
    pub error: Error,
    pub partial: Box<RunOutput>,
}

impl fmt::Display for RunAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted: {}", self.error)
    }
}

impl std::error::Error for RunAbort {}

impl From<RunAbort> for Error {
    fn from(a: RunAbort) -> Self {
        a.error
    }
}

pub fn run(
    trace: &[ChargingSession],
    cfg: &SimConfig,
    model: &ModelSet,
    tariff: &TariffSchedule,
) -> Result<RunOutput, RunAbort> {
    run_with(trace, cfg, model, tariff, &RunOptions::default())
}

/// Closed-loop run of the controller over `cfg`'s date range.
///
/// Every slot: departures, arrivals, scenario pruning, one optimisation,
/// actuation curtailed by each EV's remaining demand, peak update.
pub fn run_with(
    trace: &[ChargingSession],
    cfg: &SimConfig,
    model: &ModelSet,
    tariff: &TariffSchedule,
    opts: &RunOptions,
) -> Result<RunOutput, RunAbort> {
    let ctrl = cfg.controller();
    let truths = truths(trace, cfg.start, cfg.end);
    let mut state = ParkingLotState::new(cfg.start, &ctrl, cfg.rng_seed);
    let mut on_evse: BTreeMap<usize, usize> = BTreeMap::new();
    let mut next = 0;
    let mut out = RunOutput {
        metrics: SimulationMetrics::from_loads(cfg.label.clone(), &[], tariff),
        timeseries: Vec::new(),
        sessions: Vec::new(),
        timings: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut loads = Vec::new();
    let mut infeasible_steps = 0;
    let mut first_infeasible = None;
    let mut failure = None;

    'days: for date in cfg.days() {
        state.start_day(date, model, &ctrl);
        let mut load = DayLoad::new(date);
        for slot in 0..SLOTS_PER_DAY {
            let abs = state.abs_slot(slot);
            let leaving: Vec<usize> = on_evse
                .iter()
                .filter(|(_, &i)| truths[i].true_departure_slot <= abs)
                .map(|(&e, _)| e)
                .collect();
            for evse in leaving {
                on_evse.remove(&evse);
                out.sessions.push(state.on_departure(evse, slot).expect("plugged EV"));
            }
            while next < truths.len() && truths[next].arrival_abs <= abs {
                let truth = &truths[next];
                let stats = model.sampling_stats(state.day_of_week, slot / SLOTS_PER_BLOCK);
                if let Some(evse) = state.on_arrival(&truth.ev_ref, slot, stats, &ctrl) {
                    on_evse.insert(evse, next);
                }
                next += 1;
            }
            state.prune_all(slot);
            let step = match state.step(tariff, &ctrl) {
                Ok(s) => s,
                Err(e) => {
                    failure = Some(match e {
                        Error::Solver(msg) => Error::Solver(format!("{date} slot {slot}: {msg}")),
                        other => other,
                    });
                    loads.push(load);
                    break 'days;
                }
            };
            let feasible = step.infeasible.is_none();
            if !feasible {
                infeasible_steps += 1;
                first_infeasible.get_or_insert_with(|| format!("{date} slot {slot}"));
            }
            let mut actual_kwh = 0.0;
            for (&evse, &kw) in &step.setpoints {
                let truth = &truths[on_evse[&evse]];
                let remaining = truth.true_energy_demand - state.plugged[&evse].delivered_so_far;
                let offered = kw_to_slot_kwh(kw);
                let kwh = offered.min(remaining).max(0.0);
                state.commit_metered(evse, offered, kwh).expect("plugged EV");
                actual_kwh += kwh;
            }
            let actuated_kw = slot_kwh_to_kw(actual_kwh);
            state.update_peak(actuated_kw);
            load.kw[slot] = actuated_kw;
            out.timeseries.push(SlotRecord {
                date,
                slot,
                plugged: state.plugged.len(),
                planned_kw: step.total_kw(),
                actuated_kw,
                peak_kw: slot_kwh_to_kw(state.e_old_peak_slot),
                feasible,
            });
            if let Some(plan) = &step.plan {
                out.timings.push(StepTiming {
                    date,
                    slot,
                    real_evs: state.plugged.len(),
                    iterations: plan.stats.iterations,
                    wall_time_s: plan.stats.wall_time_s,
                });
                if opts.snapshot_slots.contains(&slot) {
                    let mut planned_kw: Vec<f64> = load.kw.clone();
                    for (t, v) in planned_kw.iter_mut().enumerate().skip(slot) {
                        *v = slot_kwh_to_kw(plan.plans.iter().fold(0.0, |a, p| a + p[t]));
                    }
                    out.snapshots.push(PlanSnapshot { date, slot, planned_kw });
                }
            }
            if !feasible && cfg.stop_on_infeasible {
                loads.push(load);
                break 'days;
            }
        }
        loads.push(load);
    }
    // sessions still plugged in when the range ends
    let end_slot = SLOTS_PER_DAY;
    for evse in on_evse.keys().copied().collect::<Vec<_>>() {
        out.sessions.push(state.on_departure(evse, end_slot).expect("plugged EV"));
    }

    let mut m = SimulationMetrics::from_loads(cfg.label.clone(), &loads, tariff);
    m.sessions = out.sessions.len();
    m.rejected_arrivals = state.rejected;
    m.feasible = infeasible_steps == 0;
    m.infeasible_steps = infeasible_steps;
    m.first_infeasible = first_infeasible;
    out.metrics = m;
    match failure {
        Some(error) => {
            log::error!("{error}; {} slots logged", out.timeseries.len());
            Err(RunAbort {
                error,
                partial: Box::new(out),
            })
        }
        None => Ok(out),
    }
}

/// The uncontrolled lot: every EV charges at `p_max_kw` from arrival until
/// its demand is met or it leaves, with no transformer limit. Arrivals find
/// the first free EVSE or are rejected, as in [`run`].
pub fn baseline_status_quo(trace: &[ChargingSession], tariff: &TariffSchedule, cfg: &SimConfig) -> RunOutput {
    let truths = truths(trace, cfg.start, cfg.end);
    let e_max = kw_to_slot_kwh(cfg.p_max_kw);
    // evse -> (truth index, delivered)
    let mut plugged: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut sessions = Vec::new();
    let mut timeseries = Vec::new();
    let mut loads = Vec::new();
    let mut rejected = 0;
    let mut next = 0;
    let mut peak: f64 = 0.0;
    let mut month = None;
    let summary = |truth: &EvTruth, evse: usize, delivered: f64, end_abs: i64| SessionSummary {
        ev_ref: truth.ev_ref.clone(),
        evse_id: evse,
        start_abs: truth.arrival_abs,
        end_abs,
        delivered_kwh: delivered,
    };
    for (day, date) in cfg.days().enumerate() {
        use chrono::Datelike;
        if month != Some(date.month()) {
            month = Some(date.month());
            peak = cfg.e_old_seed_kw;
        }
        let mut load = DayLoad::new(date);
        for slot in 0..SLOTS_PER_DAY {
            let abs = (day * SLOTS_PER_DAY + slot) as i64;
            plugged.retain(|&evse, &mut (i, delivered)| {
                let stay = truths[i].true_departure_slot > abs;
                if !stay {
                    sessions.push(summary(&truths[i], evse, delivered, abs));
                }
                stay
            });
            while next < truths.len() && truths[next].arrival_abs <= abs {
                match (0..cfg.evse_count).find(|e| !plugged.contains_key(e)) {
                    Some(evse) => {
                        plugged.insert(evse, (next, 0.0));
                    }
                    None => rejected += 1,
                }
                next += 1;
            }
            let mut kwh_total = 0.0;
            for (i, delivered) in plugged.values_mut() {
                let kwh = e_max.min(truths[*i].true_energy_demand - *delivered).max(0.0);
                *delivered += kwh;
                kwh_total += kwh;
            }
            let kw = slot_kwh_to_kw(kwh_total);
            peak = peak.max(kw);
            load.kw[slot] = kw;
            timeseries.push(SlotRecord {
                date,
                slot,
                plugged: plugged.len(),
                planned_kw: kw,
                actuated_kw: kw,
                peak_kw: peak,
                feasible: true,
            });
        }
        loads.push(load);
    }
    let end_abs = (loads.len() * SLOTS_PER_DAY) as i64;
    for (evse, (i, delivered)) in plugged {
        sessions.push(summary(&truths[i], evse, delivered, end_abs));
    }
    let mut metrics = SimulationMetrics::from_loads(baseline_label(), &loads, tariff);
    metrics.sessions = sessions.len();
    metrics.rejected_arrivals = rejected;
    RunOutput {
        metrics,
        timeseries,
        sessions,
        timings: Vec::new(),
        snapshots: Vec::new(),
    }
}

pub fn baseline_label() -> String {
    "status-quo".to_string()
}
