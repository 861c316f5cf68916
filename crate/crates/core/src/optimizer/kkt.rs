//! First-order optimality check for a plan and its multipliers.

use super::plan::SchedulePlan;
use super::problem::{
    free_mask, max_violation, requirement, slot_loads, term_energy, terms,
    StepProblem,
};
use crate::units::SLOTS_PER_DAY;

/// Max over stationarity, primal violation, dual negativity and
/// complementarity, all in absolute terms. Inputs of the wrong shape count as
/// infinitely wrong.
pub fn kkt_residual(prob: &StepProblem, plan: &SchedulePlan) -> f64 {
    let n = prob.ev_count();
    let mu = &plan.multipliers;
    if plan.plans.len() != n
        || mu.lower.len() != n
        || mu.upper.len() != n
        || mu.min_delivery.len() != n
        || mu.transformer.len() != SLOTS_PER_DAY
        || mu.peak.len() != SLOTS_PER_DAY
    {
        return f64::INFINITY;
    }
    let e_inc = plan.e_inc;
    let mut res = max_violation(prob, &plan.plans, e_inc).max(0.0);
    let load = slot_loads(&plan.plans);
    let cur = prob.current_slot;

    for t in 0..SLOTS_PER_DAY {
        let (tr, pk) = (mu.transformer[t], mu.peak[t]);
        res = res.max(-tr).max(-pk);
        if t < cur {
            // no such rows in the problem
            res = res.max(tr.abs()).max(pk.abs());
        } else {
            res = res.max((tr * (prob.e_trans_slot - load[t])).abs());
            res = res.max((pk * (prob.e_old_peak_slot + e_inc - load[t])).abs());
        }
    }
    res = res.max(-mu.e_inc_lower).max((mu.e_inc_lower * e_inc).abs());
    let s_stat = -prob.peak_weight() + mu.peak[cur..].iter().sum::<f64>() + mu.e_inc_lower;
    res = res.max(s_stat.abs());

    for k in 0..n {
        let e = &plan.plans[k];
        if e.len() != SLOTS_PER_DAY
            || mu.lower[k].len() != SLOTS_PER_DAY
            || mu.upper[k].len() != SLOTS_PER_DAY
        {
            return f64::INFINITY;
        }
        let free = free_mask(prob, k);
        let ts = terms(prob, k);
        if mu.min_delivery[k].len() != ts.len() {
            return f64::INFINITY;
        }
        let mut grad = vec![0.0; SLOTS_PER_DAY];
        for (term, &md) in ts.iter().zip(&mu.min_delivery[k]) {
            let energy = term_energy(prob, k, term, e);
            let req = requirement(prob, k, term, &free);
            res = res.max(-md).max((md * (energy - req)).abs());
            let marginal = term.weight * prob.w1 / (energy + 1.0);
            for g in &mut grad[term.start..term.end] {
                *g += marginal + md;
            }
        }
        for t in 0..SLOTS_PER_DAY {
            let (lo, up) = (mu.lower[k][t], mu.upper[k][t]);
            if !free[t] {
                res = res.max(lo.abs()).max(up.abs());
                continue;
            }
            res = res.max(-lo).max(-up);
            res = res.max((lo * e[t]).abs()).max((up * (prob.e_max_slot - e[t])).abs());
            let stat = grad[t] - prob.w2 * prob.prices[t] + lo - up
                - mu.transformer[t]
                - mu.peak[t];
            res = res.max(stat.abs());
        }
    }
    res
}
