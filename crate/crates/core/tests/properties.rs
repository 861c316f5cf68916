//! Property tests for the module invariants.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use proptest::prelude::*;

use evlot::controller::{ControllerConfig, ParkingLotState};
use evlot::ingest::{build_block_stats, block_of, ChargingSession, ModelSet};
use evlot::optimizer::problem::max_violation;
use evlot::optimizer::{solve, EvDecision, EvKind, ModelEvEntry, RealEvEntry, SolveOutcome, SolverOptions, StepProblem};
use evlot::scenario::DepartureScenarioSet;
use evlot::simulator::{baseline_status_quo, run, SimConfig};
use evlot::tariff::{energy_cost, DayKind, TariffSchedule, TouLabel, TouWindow};
use evlot::units::kw_to_slot_kwh;

fn monday() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 6, 17).unwrap()
}

fn at(slot: usize) -> NaiveDateTime {
    monday().and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(15 * slot as i64)
}

prop_compose! {
    fn session_strategy()(arr in 20usize..80, stay in 1usize..40, kwh in 0.5f64..20.0, id in 0u32..1_000_000)
        -> ChargingSession {
        let dep = (arr + stay).min(95);
        ChargingSession {
            session_id: format!("s{id}"),
            evse_id: None,
            arrival: at(arr),
            departure: at(dep) + Duration::minutes(7),
            energy_kwh: kwh.min(6.6 * (dep - arr) as f64 / 4.0),
            per_slot_power: None,
        }
    }
}

fn plan(prob: &StepProblem) -> evlot::optimizer::SchedulePlan {
    match solve(prob, &SolverOptions::default()).unwrap() {
        SolveOutcome::Plan(p) => p,
        SolveOutcome::Infeasible(c) => panic!("infeasible: {c}"),
    }
}

prop_compose! {
    fn lot_problem()(
        seed_deps in prop::collection::vec(prop::collection::vec(1usize..40, 1..5), 0..8),
        model_arr in prop::collection::vec((1usize..50, 1usize..30), 0..6),
        cur in 20usize..50,
        cap in 2.0f64..20.0,
        old in 0.0f64..8.0,
        p_d in prop_oneof![Just(0.0), 1.0f64..20.0],
    ) -> StepProblem {
        let prices = TariffSchedule::default().price_vector(DayKind::Weekday).to_vec();
        let mut prob = StepProblem::empty(prices, 5.0, 1.0, p_d, cap);
        prob.current_slot = cur;
        prob.e_old_peak_slot = old;
        for (i, deps) in seed_deps.iter().enumerate() {
            let deps: Vec<usize> = deps.iter().map(|d| (cur + d).min(96)).collect();
            prob.real_evs.push(RealEvEntry {
                decision: EvDecision::new(format!("r{i}"), EvKind::Real),
                scenarios: DepartureScenarioSet::new(format!("r{i}"), cur, &deps),
            });
        }
        for (j, &(a, stay)) in model_arr.iter().enumerate() {
            let arrival = (cur + a).min(95);
            prob.model_evs.push(ModelEvEntry {
                decision: EvDecision::new(format!("m{j}"), EvKind::Model),
                arrival_slot: arrival,
                departure_slot: (arrival + stay).min(96),
            });
        }
        prob
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn energy_cost_is_linear(
        e1 in prop::collection::vec(0.0f64..2.0, 96),
        e2 in prop::collection::vec(0.0f64..2.0, 96),
        a in 0.0f64..5.0,
        b in 0.0f64..5.0,
    ) {
        let prices = TariffSchedule::default().price_vector(DayKind::Weekday).to_vec();
        let mix: Vec<f64> = e1.iter().zip(&e2).map(|(x, y)| a * x + b * y).collect();
        let lhs = energy_cost(&mix, &prices).unwrap();
        let rhs = a * energy_cost(&e1, &prices).unwrap() + b * energy_cost(&e2, &prices).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn windows_tile_the_day(mut cuts in prop::collection::btree_set(1usize..96, 0..6), prices in prop::collection::vec(0.01f64..1.0, 7)) {
        cuts.insert(96);
        let mut windows = Vec::new();
        let mut start = 0;
        for (i, &end) in cuts.iter().enumerate() {
            windows.push(TouWindow::new(TouLabel::OffPeak, start, end, prices[i]));
            start = end;
        }
        let t = TariffSchedule::from_windows(windows, None, 10.0).unwrap();
        let covered: usize = t.windows().iter().map(|w| w.len()).sum();
        prop_assert_eq!(covered, 96);
        let first = t.price_vector(DayKind::Weekday).to_vec();
        let _ = t.price_vector(DayKind::Weekend);
        prop_assert_eq!(first.as_slice(), t.price_vector(DayKind::Weekday));
    }

    // every generated day has a session: the mean is over observed dates
    #[test]
    fn block_arrivals_sum_to_daily_count(days in prop::collection::vec(prop::collection::vec(0u32..1440, 1..30), 1..4)) {
        let mut sessions = Vec::new();
        for (d, minutes) in days.iter().enumerate() {
            let date = monday() + Duration::weeks(d as i64);
            for (k, &m) in minutes.iter().enumerate() {
                let arrival = date.and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(m as i64);
                sessions.push(ChargingSession {
                    session_id: format!("{d}-{k}"),
                    evse_id: None,
                    arrival,
                    departure: arrival + Duration::minutes(90),
                    energy_kwh: 3.0,
                    per_slot_power: None,
                });
                prop_assert!(block_of(arrival) < 12);
            }
        }
        let stats = build_block_stats(&sessions, 0);
        let sum: f64 = stats.iter().map(|s| s.mean_arrivals_per_day).sum();
        let mean = sessions.len() as f64 / days.len() as f64;
        prop_assert!((sum - mean).abs() < 1e-9, "{} vs {}", sum, mean);
        prop_assert!(stats.iter().all(|s| s.mean_energy_kwh >= 0.0));
        prop_assert!(stats.iter().all(|s| s.mean_arrivals_per_day == 0.0 || s.mean_stay_min > 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plans_are_feasible_and_deterministic(prob in lot_problem()) {
        let a = plan(&prob);
        prop_assert!(max_violation(&prob, &a.plans, a.e_inc) <= 1e-6);
        prop_assert!(a.stats.kkt_residual <= 1e-6, "kkt {}", a.stats.kkt_residual);
        for p in &a.plans {
            prop_assert!(p.iter().all(|&e| (-1e-9..=prob.e_max_slot + 1e-9).contains(&e)));
        }
        if prob.p_d > 0.0 {
            let implied = a.slot_loads().iter().map(|l| l - prob.e_old_peak_slot).fold(0.0, f64::max);
            prop_assert!((a.e_inc - implied).abs() <= 1e-6, "{} vs {}", a.e_inc, implied);
        }
        let b = plan(&prob);
        prop_assert_eq!(a.plans, b.plans);
    }

    #[test]
    fn planned_energy_monotone_in_w1(prob in lot_problem(), lo in 0.5f64..5.0, gap in 0.0f64..8.0) {
        let mut low = prob.clone();
        low.w1 = lo;
        let mut high = prob;
        high.w1 = lo + gap;
        let (el, eh) = (plan(&low).total_energy(), plan(&high).total_energy());
        // solver tolerance is relative to the size of the plan
        prop_assert!(eh >= el - 1e-6 * (1.0 + el), "w1 {} -> {}, w1 {} -> {}", low.w1, el, high.w1, eh);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn controller_loop_invariants(
        arrivals in prop::collection::vec((20usize..70, 1usize..40), 1..12),
        cap_kw in 8.0f64..60.0,
        forced in any::<bool>(),
    ) {
        let cfg = ControllerConfig {
            transformer_kw: cap_kw,
            evse_count: 8,
            forced_initial: forced.then_some(0.25),
            ..Default::default()
        };
        let model = ModelSet::reference();
        let tariff = TariffSchedule::default();
        let mut state = ParkingLotState::new(monday(), &cfg, 3);
        state.start_day(monday(), &model, &cfg);
        let mut peak_replay = 0.0f64;
        let mut committed = std::collections::BTreeMap::<String, f64>::new();
        for slot in 0..96 {
            let leaving: Vec<usize> = state
                .plugged
                .iter()
                .filter(|(_, ev)| {
                    let i: usize = ev.ev_ref.parse().unwrap();
                    arrivals[i].0 + arrivals[i].1 <= slot
                })
                .map(|(&e, _)| e)
                .collect();
            for e in leaving {
                let s = state.on_departure(e, slot).unwrap();
                prop_assert!((s.delivered_kwh - committed[&s.ev_ref]).abs() < 1e-12);
            }
            for (i, &(arr, _)) in arrivals.iter().enumerate() {
                if arr == slot {
                    state.on_arrival(&i.to_string(), slot, model.sampling_stats(0, slot / 8), &cfg);
                }
            }
            prop_assert!(state.plugged.len() <= cfg.evse_count);
            state.prune_all(slot);
            let before: Vec<(String, f64)> = state.plugged.values().map(|ev| (ev.ev_ref.clone(), ev.delivered_so_far)).collect();
            let step = state.step(&tariff, &cfg).unwrap();
            let total: f64 = step.setpoints.values().sum();
            if step.infeasible.is_none() {
                prop_assert!(total <= cap_kw + 1e-6, "slot {}: {} > {}", slot, total, cap_kw);
            }
            for (&evse, &kw) in &step.setpoints {
                prop_assert!((0.0..=6.6 + 1e-9).contains(&kw));
                let ev = &state.plugged[&evse];
                if forced && step.infeasible.is_none() && slot < ev.arrival_slot + 4 {
                    prop_assert!((kw - 0.25 * 6.6).abs() < 1e-6, "forced slot {}: {} kW", slot, kw);
                }
                let kwh = kw_to_slot_kwh(kw);
                let name = ev.ev_ref.clone();
                state.commit(evse, kwh).unwrap();
                *committed.entry(name).or_insert(0.0) += kwh;
            }
            for (name, d) in before {
                let now = state.plugged.values().find(|ev| ev.ev_ref == name).unwrap().delivered_so_far;
                prop_assert!(now >= d);
            }
            state.update_peak(total);
            peak_replay = peak_replay.max(kw_to_slot_kwh(total));
            prop_assert_eq!(state.e_old_peak_slot, peak_replay);
        }
    }

    #[test]
    fn simulation_invariants(trace in prop::collection::vec(session_strategy(), 0..15), cap in 10.0f64..80.0) {
        let cfg = SimConfig {
            w1: 10.0,
            transformer_kw: cap,
            start: monday(),
            end: monday(),
            ..Default::default()
        };
        let out = run(&trace, &cfg, &ModelSet::reference(), &TariffSchedule::default()).unwrap();
        let by_slot: f64 = out.timeseries.iter().map(|r| kw_to_slot_kwh(r.actuated_kw)).sum();
        let by_session: f64 = out.sessions.iter().map(|s| s.delivered_kwh).sum();
        prop_assert!((by_slot - by_session).abs() <= 1e-9);
        if out.metrics.feasible {
            prop_assert!(out.timeseries.iter().all(|r| r.actuated_kw <= cap + 1e-6));
        }
        let base = baseline_status_quo(&trace, &TariffSchedule::default(), &cfg);
        for s in &out.sessions {
            let demand = trace.iter().find(|t| t.session_id == s.ev_ref).unwrap().energy_kwh;
            prop_assert!(s.delivered_kwh <= demand + 1e-9);
            let b = base.sessions.iter().find(|b| b.ev_ref == s.ev_ref).unwrap();
            prop_assert!(s.delivered_kwh <= b.delivered_kwh + 1e-9);
        }
        let again = run(&trace, &cfg, &ModelSet::reference(), &TariffSchedule::default()).unwrap();
        prop_assert_eq!(out.timeseries, again.timeseries);
        prop_assert_eq!(out.metrics, again.metrics);
    }
}
