//! Random problem generators shared by the solver tests and the acceptance run.

#![allow(dead_code)]
use evlot::optimizer::{EvDecision, EvKind, ModelEvEntry, RealEvEntry, StepProblem};
use evlot::scenario::DepartureScenarioSet;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn real(name: &str, arrival: usize, departures: &[usize]) -> RealEvEntry {
    RealEvEntry {
        decision: EvDecision::new(name, EvKind::Real),
        scenarios: DepartureScenarioSet::new(name, arrival, departures),
    }
}

pub fn model(name: &str, arrival: usize, departure: usize) -> ModelEvEntry {
    ModelEvEntry {
        decision: EvDecision::new(name, EvKind::Model),
        arrival_slot: arrival,
        departure_slot: departure,
    }
}

/// A random instance with at most two EVs and four free slots in total.
pub fn random_tiny(rng: &mut ChaCha8Rng) -> StepProblem {
    let e_max = [0.15, 0.2, 0.25, 0.3, 0.4][rng.random_range(0..5)];
    let prices: Vec<f64> = (0..96).map(|_| rng.random_range(0.05..0.3)).collect();
    let w1 = rng.random_range(0.0..5.0);
    let w2 = rng.random_range(0.2..2.0);
    let p_d = if rng.random_bool(0.5) { rng.random_range(0.0..20.0) } else { 0.0 };
    let cap = rng.random_range(0.3..1.0) * e_max * 2.0;
    let mut prob = StepProblem::empty(prices, w1, w2, p_d, cap);
    prob.e_max_slot = e_max;
    prob.current_slot = rng.random_range(0..3);
    prob.e_old_peak_slot = rng.random_range(0.0..e_max);
    let n_ev = rng.random_range(1..=2);
    let mut budget = 4;
    for i in 0..n_ev {
        let span = if i + 1 == n_ev { budget } else { rng.random_range(1..budget) };
        budget -= span;
        if rng.random_bool(0.7) {
            let cur = prob.current_slot;
            let deps: Vec<usize> = (0..rng.random_range(1..=3))
                .map(|_| cur + rng.random_range(1..=span))
                .collect();
            let mut ev = real(&format!("r{i}"), cur, &deps);
            ev.decision.carried_kwh = rng.random_range(0.0..2.0);
            prob.real_evs.push(ev);
        } else {
            let arrival = prob.current_slot + 1 + rng.random_range(0..2);
            prob.model_evs.push(model(&format!("m{i}"), arrival, arrival + span));
        }
    }
    prob
}

/// A lot-sized instance: `n_real` plugged EVs with five departure scenarios
/// each and `n_model` expected arrivals, under the default tariff.
pub fn random_lot(rng: &mut ChaCha8Rng, n_real: usize, n_model: usize) -> StepProblem {
    let prices = evlot::tariff::TariffSchedule::default()
        .price_vector(evlot::tariff::DayKind::Weekday)
        .to_vec();
    let cap = rng.random_range(20.0..60.0);
    let mut prob = StepProblem::empty(prices, 10.0, 1.0, 18.0, cap);
    let cur = rng.random_range(20..50);
    prob.current_slot = cur;
    prob.e_old_peak_slot = rng.random_range(5.0..25.0);
    for i in 0..n_real {
        let arrival = cur.saturating_sub(rng.random_range(0..16));
        let deps: Vec<usize> = (0..5).map(|_| (cur + rng.random_range(1..40)).min(96)).collect();
        let mut ev = real(&format!("r{i}"), arrival, &deps);
        let mut delivered = 0.0;
        for t in arrival..cur {
            let e = rng.random_range(0.0..1.65);
            ev.decision.pin(t, e);
            delivered += e;
        }
        ev.decision.delivered_so_far = delivered;
        prob.real_evs.push(ev);
    }
    for j in 0..n_model {
        let arrival = rng.random_range(cur + 1..96);
        let dep = (arrival + rng.random_range(1..30)).min(96);
        prob.model_evs.push(model(&format!("m{j}"), arrival, dep));
    }
    prob
}

