//! Exhaustive grid search over tiny problems, used to cross-check the solver.

use super::problem::{
    fixed_value, free_mask, implied_e_inc, max_violation, objective, requirement, terms,
    StepProblem,
};
use crate::error::{Error, Result};
use crate::units::SLOTS_PER_DAY;

pub const MAX_ORACLE_DIMS: usize = 8;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum OracleOutcome {
    Plan {
        plans: Vec<Vec<f64>>,
        e_inc: f64,
        objective: f64,
    },
    Infeasible,
}

struct Var {
    ev: usize,
    slot: usize,
    price: f64,
}

struct OTerm {
    coef: f64,
    base: f64,
    vars: Vec<usize>,
    need: Option<f64>,
}

struct Search<'a> {
    prob: &'a StepProblem,
    vars: Vec<Var>,
    grid: Vec<f64>,
    terms: Vec<OTerm>,
    slot_room: Vec<f64>,
    fixed_load: Vec<f64>,
    x: Vec<f64>,
    load: Vec<f64>,
    best: Option<(f64, Vec<f64>)>,
}

impl Search<'_> {
    fn leaf(&mut self) {
        let mut f = 0.0;
        for term in &self.terms {
            let s: f64 = term.base + term.vars.iter().map(|&v| self.x[v]).sum::<f64>();
            if let Some(need) = term.need {
                if s < need - FEAS_TOL {
                    return;
                }
            }
            f += term.coef * (s + 1.0).ln();
        }
        for (v, var) in self.vars.iter().enumerate() {
            f -= self.prob.w2 * var.price * self.x[v];
        }
        let peak = (self.prob.current_slot..SLOTS_PER_DAY)
            .map(|t| self.fixed_load[t] + self.load[t] - self.prob.e_old_peak_slot)
            .fold(0.0, f64::max);
        f -= self.prob.peak_weight() * peak;
        if self.best.as_ref().is_none_or(|(b, _)| f > *b) {
            self.best = Some((f, self.x.clone()));
        }
    }

    fn dfs(&mut self, v: usize) {
        if v == self.vars.len() {
            self.leaf();
            return;
        }
        let slot = self.vars[v].slot;
        for gi in 0..self.grid.len() {
            let value = self.grid[gi];
            if self.load[slot] + value > self.slot_room[slot] + FEAS_TOL {
                break;
            }
            self.x[v] = value;
            self.load[slot] += value;
            self.dfs(v + 1);
            self.load[slot] -= value;
        }
        self.x[v] = 0.0;
    }
}

fn grid_values(ub: f64, h: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..)
        .map(|i| i as f64 * h)
        .take_while(|&v| v < ub - 1e-12)
        .collect();
    g.push(ub);
    g
}

/// Best feasible point of the grid `{0, h, 2h, ...} ∪ {e_max_slot}` in every
/// free coordinate. `e_inc` is set to its smallest feasible value.
pub fn brute_force_oracle(prob: &StepProblem, grid_step: f64) -> Result<OracleOutcome> {
    if !(grid_step > 0.0) {
        return Err(Error::Contract("grid step must be positive".into()));
    }
    let n = prob.ev_count();
    let masks: Vec<Vec<bool>> = (0..n).map(|k| free_mask(prob, k)).collect();
    let mut vars = Vec::new();
    let mut var_index = vec![vec![None; SLOTS_PER_DAY]; n];
    for (k, mask) in masks.iter().enumerate() {
        for t in (0..SLOTS_PER_DAY).filter(|&t| mask[t]) {
            var_index[k][t] = Some(vars.len());
            vars.push(Var {
                ev: k,
                slot: t,
                price: prob.prices[t],
            });
        }
    }
    if vars.len() > MAX_ORACLE_DIMS {
        return Err(Error::Contract(format!(
            "oracle refuses {} dimensions (limit {MAX_ORACLE_DIMS})",
            vars.len()
        )));
    }

    let mut fixed_load = vec![0.0; SLOTS_PER_DAY];
    let mut oterms = Vec::new();
    for k in 0..n {
        for t in 0..SLOTS_PER_DAY {
            fixed_load[t] += fixed_value(prob, k, t);
        }
        for term in terms(prob, k) {
            let base = prob.decision(k).carried_kwh
                + (term.start..term.end).map(|t| fixed_value(prob, k, t)).sum::<f64>();
            let req = requirement(prob, k, &term, &masks[k]);
            oterms.push(OTerm {
                coef: term.weight * prob.w1,
                base,
                vars: (term.start..term.end).filter_map(|t| var_index[k][t]).collect(),
                need: (req > 0.0).then_some(req),
            });
        }
    }
    let slot_room: Vec<f64> = (0..SLOTS_PER_DAY)
        .map(|t| {
            if t >= prob.current_slot {
                prob.e_trans_slot - fixed_load[t]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    if slot_room.iter().any(|&r| r < -FEAS_TOL) {
        return Ok(OracleOutcome::Infeasible);
    }

    let nv = vars.len();
    let mut search = Search {
        prob,
        vars,
        grid: grid_values(prob.e_max_slot, grid_step),
        terms: oterms,
        slot_room,
        fixed_load,
        x: vec![0.0; nv],
        load: vec![0.0; SLOTS_PER_DAY],
        best: None,
    };
    search.dfs(0);

    let Some((_, x)) = search.best else {
        return Ok(OracleOutcome::Infeasible);
    };
    let mut plans: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..SLOTS_PER_DAY).map(|t| fixed_value(prob, k, t)).collect())
        .collect();
    for (v, var) in search.vars.iter().enumerate() {
        plans[var.ev][var.slot] = x[v];
    }
    let e_inc = implied_e_inc(prob, &plans);
    debug_assert!(max_violation(prob, &plans, e_inc) <= 1e-6);
    let objective = objective(prob, &plans, e_inc);
    Ok(OracleOutcome::Plan {
        plans,
        e_inc,
        objective,
    })
}

/// Upper bound on how much the continuous optimum can exceed the best grid
/// point: rounding every free coordinate down by at most `h` keeps the box,
/// transformer and peak constraints and costs at most this much objective.
pub fn lipschitz_bound(prob: &StepProblem, grid_step: f64) -> f64 {
    let mut l = 0.0;
    for k in 0..prob.ev_count() {
        let mask = free_mask(prob, k);
        let weight: f64 = terms(prob, k).iter().map(|t| t.weight).sum();
        for t in (0..SLOTS_PER_DAY).filter(|&t| mask[t]) {
            l += prob.w1 * weight + prob.w2 * prob.prices[t];
        }
    }
    l * grid_step
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::problem::{EvDecision, EvKind, RealEvEntry};
    use crate::scenario::DepartureScenarioSet;

    fn ev(name: &str, start: usize, end: usize) -> RealEvEntry {
        RealEvEntry {
            decision: EvDecision::new(name, EvKind::Real),
            scenarios: DepartureScenarioSet::new(name, start, &[end]),
        }
    }

    #[test]
    fn box_optimum_on_grid() {
        let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 100.0);
        prob.real_evs.push(ev("a", 0, 4));
        let OracleOutcome::Plan { plans, objective, .. } = brute_force_oracle(&prob, 0.05).unwrap()
        else {
            panic!("feasible");
        };
        assert_eq!(&plans[0][..4], &[1.65; 4]);
        assert!((objective - (2.0 * 7.6f64.ln() - 1.32)).abs() < 1e-12);
    }

    #[test]
    fn zero_utility_gives_zero_plan() {
        let mut prob = StepProblem::empty(vec![0.0; 96], 0.0, 1.0, 0.0, 100.0);
        prob.real_evs.push(ev("a", 0, 3));
        let OracleOutcome::Plan { plans, .. } = brute_force_oracle(&prob, 0.05).unwrap() else {
            panic!("feasible");
        };
        assert!(plans[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unmeetable_requirement_is_infeasible() {
        let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 100.0);
        prob.real_evs.push(ev("a", 0, 2));
        prob.e_del_min = 4.0;
        prob.relax_del_min = false;
        assert_eq!(brute_force_oracle(&prob, 0.05).unwrap(), OracleOutcome::Infeasible);
    }

    #[test]
    fn symmetric_split_under_tight_transformer() {
        let mut prob = StepProblem::empty(vec![0.1; 96], 5.0, 1.0, 0.0, 1.65);
        prob.real_evs.push(ev("a", 0, 2));
        prob.real_evs.push(ev("b", 0, 2));
        let OracleOutcome::Plan { plans, .. } = brute_force_oracle(&prob, 0.05).unwrap() else {
            panic!("feasible");
        };
        let a: f64 = plans[0][..2].iter().sum();
        let b: f64 = plans[1][..2].iter().sum();
        assert!((a - 1.65).abs() <= 0.1 && (b - 1.65).abs() <= 0.1, "{a} {b}");
    }

    #[test]
    fn refuses_large_problems() {
        let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 100.0);
        prob.real_evs.push(ev("a", 0, 9));
        assert!(matches!(brute_force_oracle(&prob, 0.05), Err(Error::Contract(_))));
    }
}
