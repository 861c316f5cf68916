use evlot::optimizer::problem::{max_violation, objective};
mod common;

use common::{model, random_lot, random_tiny, real};
use evlot::optimizer::{
    brute_force_oracle, kkt_residual, lipschitz_bound, solve, OracleOutcome, SolveOutcome, SolverOptions,
    StepProblem,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plan_of(outcome: SolveOutcome) -> evlot::optimizer::SchedulePlan {
    match outcome {
        SolveOutcome::Plan(p) => p,
        SolveOutcome::Infeasible(c) => panic!("unexpected infeasible: {c}"),
    }
}

fn solve_ok(prob: &StepProblem) -> evlot::optimizer::SchedulePlan {
    plan_of(solve(prob, &SolverOptions::default()).unwrap())
}

#[test]
fn closed_form_box_optimum() {
    let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 1000.0);
    prob.real_evs.push(real("a", 0, &[4]));
    let plan = solve_ok(&prob);
    assert!((plan.total_energy() - 6.6).abs() < 1e-6, "{}", plan.total_energy());
    assert!(plan.stats.kkt_residual <= 1e-6, "{}", plan.stats.kkt_residual);
    assert!(max_violation(&prob, &plan.plans, plan.e_inc) <= 1e-6);
}

#[test]
fn interior_closed_form() {
    // E* = w1 / (w2 p) - 1 = 9 with 8 slots of room
    let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 1000.0);
    prob.real_evs.push(real("a", 10, &[18]));
    let plan = solve_ok(&prob);
    assert!((plan.total_energy() - 9.0).abs() < 1e-5, "{}", plan.total_energy());
    assert!(plan.stats.kkt_residual <= 1e-6);
}

#[test]
fn no_utility_no_energy() {
    let mut prob = StepProblem::empty(vec![0.2; 96], 0.0, 1.0, 18.0, 1000.0);
    prob.real_evs.push(real("a", 0, &[20, 30]));
    prob.model_evs.push(model("m", 5, 40));
    let plan = solve_ok(&prob);
    assert!(plan.total_energy() < 1e-5, "{}", plan.total_energy());
    assert!(plan.stats.kkt_residual <= 1e-6);
}

#[test]
fn symmetric_split_matches_oracle() {
    let mut prob = StepProblem::empty(vec![0.1; 96], 5.0, 1.0, 0.0, 1.65);
    prob.real_evs.push(real("a", 0, &[3]));
    prob.real_evs.push(real("b", 0, &[3]));
    let plan = solve_ok(&prob);
    for t in 0..3 {
        assert!((plan.plans[0][t] - 0.825).abs() < 1e-5, "{:?}", &plan.plans[0][..3]);
        assert!((plan.plans[1][t] - 0.825).abs() < 1e-5);
    }
    // the optimum sits on this grid
    let h = 0.275;
    let OracleOutcome::Plan { objective: best, .. } = brute_force_oracle(&prob, h).unwrap() else {
        panic!("oracle infeasible");
    };
    assert!(plan.objective_value >= best - 1e-6);
    assert!(plan.objective_value <= best + lipschitz_bound(&prob, h));
}

#[test]
fn unmeetable_requirement_is_infeasible_for_both() {
    let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 100.0);
    prob.real_evs.push(real("a", 0, &[2]));
    prob.e_del_min = 4.0;
    prob.relax_del_min = false;
    assert!(solve(&prob, &SolverOptions::default()).unwrap().is_infeasible());
    assert_eq!(brute_force_oracle(&prob, 0.05).unwrap(), OracleOutcome::Infeasible);
}

#[test]
fn coupled_requirements_need_phase_one() {
    // each EV alone could take 3 kWh in two slots, but the transformer only
    // passes 2 kWh per slot for both together
    let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 2.0);
    prob.real_evs.push(real("a", 0, &[2]));
    prob.real_evs.push(real("b", 0, &[2]));
    prob.relax_del_min = false;
    prob.e_del_min = 1.9;
    let plan = solve_ok(&prob);
    assert!(plan.stats.phase1_iterations > 0);
    assert!(max_violation(&prob, &plan.plans, plan.e_inc) <= 1e-6);
    assert!(plan.stats.kkt_residual <= 1e-6, "{}", plan.stats.kkt_residual);
    prob.e_del_min = 2.1;
    let out = solve(&prob, &SolverOptions::default()).unwrap();
    assert!(out.is_infeasible(), "{out:?}");
}

#[test]
fn pinned_overload_is_infeasible() {
    let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 3.0);
    for name in ["a", "b"] {
        let mut ev = real(name, 10, &[20]);
        ev.decision.pin(10, 1.65);
        prob.real_evs.push(ev);
    }
    prob.current_slot = 10;
    match solve(&prob, &SolverOptions::default()).unwrap() {
        SolveOutcome::Infeasible(c) => assert!(c.contains("slot 10"), "{c}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn peak_epigraph_binds() {
    let mut prob = StepProblem::empty(vec![0.05; 96], 10.0, 1.0, 18.0, 100.0);
    prob.e_old_peak_slot = 1.0;
    prob.real_evs.push(real("a", 0, &[8]));
    prob.real_evs.push(real("b", 2, &[6, 10]));
    prob.model_evs.push(model("m", 4, 12));
    let plan = solve_ok(&prob);
    let load = plan.slot_loads();
    let implied = load.iter().map(|l| l - 1.0).fold(0.0, f64::max);
    assert!((plan.e_inc - implied).abs() < 1e-9);
    assert!(plan.stats.kkt_residual <= 1e-6, "{}", plan.stats.kkt_residual);
}

#[test]
fn cheaper_slot_gets_more() {
    let mut prices = vec![0.1; 96];
    prices[1] = 0.3;
    let mut prob = StepProblem::empty(prices, 1.0, 1.0, 0.0, 100.0);
    prob.real_evs.push(real("a", 0, &[2]));
    let plan = solve_ok(&prob);
    assert!(plan.plans[0][0] >= plan.plans[0][1] - 1e-9, "{:?}", &plan.plans[0][..2]);
}

#[test]
fn delivered_energy_monotone_in_w1() {
    let mut last = -1.0;
    for w1 in [0.5, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0] {
        let mut prob = StepProblem::empty(evlot::tariff::TariffSchedule::default().price_vector(evlot::tariff::DayKind::Weekday).to_vec(), w1, 1.0, 18.0, 25.0);
        prob.current_slot = 30;
        for i in 0..6 {
            prob.real_evs.push(real(&format!("r{i}"), 30, &[50 + 5 * i, 70, 90]));
        }
        prob.model_evs.push(model("m1", 40, 64));
        let plan = solve_ok(&prob);
        let total = plan.total_energy();
        assert!(total >= last - 1e-6, "w1 {w1}: {total} < {last}");
        assert!(plan.stats.kkt_residual <= 1e-6);
        last = total;
    }
}

#[test]
fn deterministic() {
    let mut prob = StepProblem::empty(vec![0.15; 96], 3.0, 1.0, 10.0, 5.0);
    prob.real_evs.push(real("a", 0, &[20, 40]));
    prob.real_evs.push(real("b", 5, &[25]));
    prob.model_evs.push(model("m", 10, 30));
    let a = solve_ok(&prob);
    let b = solve_ok(&prob);
    assert_eq!(a.plans, b.plans);
    assert_eq!(a.e_inc, b.e_inc);
    assert_eq!(a.multipliers, b.multipliers);
}

#[test]
fn zero_ev_problem() {
    let prob = StepProblem::empty(vec![0.1; 96], 1.0, 1.0, 18.0, 10.0);
    let plan = solve_ok(&prob);
    assert!(plan.plans.is_empty());
    assert_eq!(kkt_residual(&prob, &plan), 0.0);
}

#[test]
fn random_tiny_instances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(20190617);
    for case in 0..200 {
        let prob = random_tiny(&mut rng);
        let plan = solve_ok(&prob);
        let OracleOutcome::Plan { objective: best, .. } = brute_force_oracle(&prob, 0.05).unwrap()
        else {
            panic!("case {case}: oracle infeasible");
        };
        let viol = max_violation(&prob, &plan.plans, plan.e_inc);
        assert!(viol <= 1e-6, "case {case}: violation {viol}");
        assert!(plan.objective_value >= best - 1e-6, "case {case}: {} < {best}", plan.objective_value);
        let slack = lipschitz_bound(&prob, 0.05);
        assert!(plan.objective_value <= best + slack + 1e-9, "case {case}");
        assert!(plan.stats.kkt_residual <= 1e-6, "case {case}: kkt {}", plan.stats.kkt_residual);
        assert!((objective(&prob, &plan.plans, plan.e_inc) - plan.objective_value).abs() < 1e-12);
    }
}

#[test]
fn lot_sized_instances_converge_quickly() {
    let mut rng = ChaCha8Rng::seed_from_u64(57);
    for case in 0..10 {
        let prob = random_lot(&mut rng, 40, 50);
        let plan = solve_ok(&prob);
        assert!(plan.stats.kkt_residual <= 1e-6, "case {case}: kkt {}", plan.stats.kkt_residual);
        assert!(max_violation(&prob, &plan.plans, plan.e_inc) <= 1e-6, "case {case}");
        assert!(plan.stats.wall_time_s < 1.0, "case {case}: {} s", plan.stats.wall_time_s);
    }
}

#[test]
fn varied_lots_never_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for case in 0..120 {
        let nr = rng.random_range(0..57);
        let nm = rng.random_range(0..70);
        let mut prob = random_lot(&mut rng, nr, nm);
        prob.w1 = rng.random_range(0.5..12.0);
        if rng.random_bool(0.3) {
            prob.e_trans_slot = rng.random_range(2.0..10.0);
        }
        if rng.random_bool(0.5) {
            prob.relax_del_min = false;
            prob.e_del_min = rng.random_range(0.0..4.0);
        }
        if rng.random_bool(0.3) {
            let cur = prob.current_slot;
            for ev in &mut prob.real_evs {
                for t in cur..cur + 4 {
                    ev.decision.pin(t, 0.8);
                }
            }
        }
        match solve(&prob, &SolverOptions::default()) {
            Ok(SolveOutcome::Plan(plan)) => {
                assert!(plan.stats.kkt_residual <= 1e-6, "case {case}: kkt {}", plan.stats.kkt_residual);
                worst = worst.max(plan.stats.wall_time_s);
            }
            Ok(SolveOutcome::Infeasible(c)) => assert!(!c.is_empty()),
            Err(e) => panic!("case {case} ({nr}, {nm}): {e}"),
        }
    }
    assert!(worst < 1.0, "{worst} s");
}

fn fixture(name: &str) -> StepProblem {
    let path = format!("{}/tests/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

// Both used to stall one step short of tolerance: the Newton solve lost
// accuracy once the tight rows' duals grew.
#[test]
fn ill_conditioned_lots_converge() {
    for name in ["forced_quarter_rate", "near_degenerate_peak"] {
        let prob = fixture(name);
        let plan = solve_ok(&prob);
        assert!(plan.stats.kkt_residual <= 1e-6, "{name}: kkt {}", plan.stats.kkt_residual);
        assert!(max_violation(&prob, &plan.plans, plan.e_inc) <= 1e-6, "{name}");
    }
}
