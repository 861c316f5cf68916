use super::problem::{EvDecision, EvKind, ForcedCharge, ModelEvEntry, RealEvEntry, StepProblem};
use crate::controller::{ControllerConfig, ParkingLotState, FORCED_SLOTS};
use crate::error::{Error, Result};
use crate::tariff::{DayKind, TariffSchedule};
use crate::units::SLOTS_PER_DAY;

/// Formulates the problem for `current_slot` from the lot state.
///
/// Real EVs come in EVSE order with their past slots pinned to what was
/// actually delivered; under forced charging the first hour of each session
/// is pinned too, inside the EV's active windows. Model EVs are the pending
/// ones arriving strictly after `current_slot`.
pub fn build_problem(
    state: &ParkingLotState,
    tariff: &TariffSchedule,
    cfg: &ControllerConfig,
    current_slot: usize,
) -> Result<StepProblem> {
    if current_slot >= SLOTS_PER_DAY {
        return Err(Error::Contract(format!("slot {current_slot} out of range")));
    }
    let e_max = cfg.e_max_slot();
    let forced = cfg.forced_initial.map(|rate_fraction| ForcedCharge {
        rate_fraction,
        slots: FORCED_SLOTS,
    });
    let mut real_evs = Vec::with_capacity(state.plugged.len());
    for ev in state.plugged.values() {
        ev.scenarios.validate()?;
        let mut d = EvDecision::new(ev.ev_ref.clone(), EvKind::Real);
        d.delivered_so_far = ev.delivered_so_far;
        d.carried_kwh = ev.carried_kwh;
        for t in 0..current_slot {
            d.pin(t, ev.actual[t]);
        }
        if let Some(f) = forced {
            let horizon = ev.scenarios.active().max().unwrap_or(0);
            for t in current_slot..horizon {
                let age = state.abs_slot(t) - ev.start_abs;
                if t >= ev.arrival_slot && (0..f.slots as i64).contains(&age) {
                    d.pin(t, f.rate_fraction * e_max);
                }
            }
        }
        if cfg.detect_full && ev.full {
            for t in current_slot..SLOTS_PER_DAY {
                if !d.fixed_mask[t] {
                    d.pin(t, 0.0);
                }
            }
        }
        real_evs.push(RealEvEntry {
            decision: d,
            scenarios: ev.scenarios.clone(),
        });
    }
    let model_evs = state
        .pending_model
        .iter()
        .filter(|m| m.arrival_slot > current_slot)
        .enumerate()
        .map(|(i, m)| ModelEvEntry {
            decision: EvDecision::new(format!("model-{i}"), EvKind::Model),
            arrival_slot: m.arrival_slot,
            departure_slot: m.expected_departure_slot,
        })
        .collect();
    Ok(StepProblem {
        current_slot,
        real_evs,
        model_evs,
        prices: tariff.price_vector(DayKind::of(state.date)).to_vec(),
        p_d: tariff.demand_charge_rate(),
        w1: cfg.w1,
        w2: cfg.w2,
        e_max_slot: e_max,
        e_del_min: cfg.e_del_min,
        relax_del_min: cfg.relax_del_min,
        e_trans_slot: cfg.e_trans_slot(),
        e_old_peak_slot: state.e_old_peak_slot,
        forced_charge: forced,
    })
}
