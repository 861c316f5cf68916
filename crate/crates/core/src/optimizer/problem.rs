//! Per-slot scheduling problem and the semantics shared by the solver, the
//! KKT checker and the brute-force oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{scenario_weights, DepartureScenarioSet};
use crate::units::SLOTS_PER_DAY;

/// Tolerance below which fixed loads are treated as meeting a limit.
pub const PIN_TOL: f64 = 1e-9;
/// Minimum slack handed to the interior-point method on a tight slot.
pub const MIN_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvKind {
    Real,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvDecision {
    pub ev_ref: String,
    pub kind: EvKind,
    /// Slot energies (kWh). Only the entries under `fixed_mask` are read.
    pub e: Vec<f64>,
    pub fixed_mask: Vec<bool>,
    /// Energy delivered this session, including `carried_kwh`.
    pub delivered_so_far: f64,
    /// Energy delivered before slot 0 of the current day.
    pub carried_kwh: f64,
}

impl EvDecision {
    pub fn new(ev_ref: impl Into<String>, kind: EvKind) -> Self {
        Self {
            ev_ref: ev_ref.into(),
            kind,
            e: vec![0.0; SLOTS_PER_DAY],
            fixed_mask: vec![false; SLOTS_PER_DAY],
            delivered_so_far: 0.0,
            carried_kwh: 0.0,
        }
    }

    pub fn pin(&mut self, slot: usize, value: f64) {
        self.e[slot] = value;
        self.fixed_mask[slot] = true;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealEvEntry {
    pub decision: EvDecision,
    pub scenarios: DepartureScenarioSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvEntry {
    pub decision: EvDecision,
    pub arrival_slot: usize,
    pub departure_slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcedCharge {
    pub rate_fraction: f64,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepProblem {
    pub current_slot: usize,
    pub real_evs: Vec<RealEvEntry>,
    pub model_evs: Vec<ModelEvEntry>,
    /// $/kWh per slot.
    pub prices: Vec<f64>,
    /// $/kW.
    pub p_d: f64,
    pub w1: f64,
    pub w2: f64,
    pub e_max_slot: f64,
    pub e_del_min: f64,
    /// Lower `e_del_min` to what each window can still receive.
    pub relax_del_min: bool,
    pub e_trans_slot: f64,
    pub e_old_peak_slot: f64,
    pub forced_charge: Option<ForcedCharge>,
}

impl StepProblem {
    /// A problem with no EVs and the given economics.
    pub fn empty(prices: Vec<f64>, w1: f64, w2: f64, p_d: f64, e_trans_slot: f64) -> Self {
        Self {
            current_slot: 0,
            real_evs: Vec::new(),
            model_evs: Vec::new(),
            prices,
            p_d,
            w1,
            w2,
            e_max_slot: crate::units::kw_to_slot_kwh(crate::units::DEFAULT_P_MAX_KW),
            e_del_min: 0.0,
            relax_del_min: true,
            e_trans_slot,
            e_old_peak_slot: 0.0,
            forced_charge: None,
        }
    }

    pub fn ev_count(&self) -> usize {
        self.real_evs.len() + self.model_evs.len()
    }

    pub fn decision(&self, k: usize) -> &EvDecision {
        if k < self.real_evs.len() {
            &self.real_evs[k].decision
        } else {
            &self.model_evs[k - self.real_evs.len()].decision
        }
    }

    /// Demand-charge weight on `e_inc` in slot-energy units.
    pub fn peak_weight(&self) -> f64 {
        self.w2 * self.p_d * 4.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(m));
        if self.prices.len() != SLOTS_PER_DAY {
            return bad(format!("price vector has {} entries", self.prices.len()));
        }
        if self.current_slot >= SLOTS_PER_DAY {
            return bad(format!("current slot {} out of range", self.current_slot));
        }
        if !(self.e_trans_slot > 0.0) {
            return bad("transformer limit must be positive".into());
        }
        if !(self.e_max_slot > 0.0) {
            return bad("e_max_slot must be positive".into());
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if ![self.w1, self.w2, self.p_d, self.e_old_peak_slot, self.e_del_min]
            .into_iter()
            .all(finite_nonneg)
            || !self.prices.iter().all(|&p| finite_nonneg(p))
        {
            return bad("weights, prices and peaks must be finite and non-negative".into());
        }
        for k in 0..self.ev_count() {
            let d = self.decision(k);
            if d.e.len() != SLOTS_PER_DAY || d.fixed_mask.len() != SLOTS_PER_DAY {
                return bad(format!("{}: vectors must have 96 entries", d.ev_ref));
            }
            if !finite_nonneg(d.carried_kwh) {
                return bad(format!("{}: carried energy must be non-negative", d.ev_ref));
            }
        }
        for r in &self.real_evs {
            r.scenarios.validate()?;
        }
        for m in &self.model_evs {
            if m.departure_slot <= m.arrival_slot || m.departure_slot > SLOTS_PER_DAY {
                return bad(format!("{}: empty model window", m.decision.ev_ref));
            }
        }
        Ok(())
    }
}

/// One log-utility term: a scenario of a real EV or the single window of a
/// model EV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub weight: f64,
    pub start: usize,
    pub end: usize,
}

/// Terms of EV `k`, in candidate order for real EVs (active ones only).
pub fn terms(prob: &StepProblem, k: usize) -> Vec<Term> {
    if k < prob.real_evs.len() {
        let set = &prob.real_evs[k].scenarios;
        let weights = scenario_weights(set).unwrap_or_default();
        set.candidates
            .iter()
            .zip(weights)
            .filter(|(c, _)| c.active)
            .map(|(c, weight)| Term {
                weight,
                start: set.arrival_slot,
                end: c.departure_slot,
            })
            .collect()
    } else {
        let m = &prob.model_evs[k - prob.real_evs.len()];
        vec![Term {
            weight: 1.0,
            start: m.arrival_slot,
            end: m.departure_slot,
        }]
    }
}

pub fn is_fixed(prob: &StepProblem, k: usize, t: usize) -> bool {
    t < prob.current_slot || prob.decision(k).fixed_mask[t]
}

/// Slots of EV `k` the solver may choose: not fixed and inside some window.
pub fn free_mask(prob: &StepProblem, k: usize) -> Vec<bool> {
    let ts = terms(prob, k);
    (0..SLOTS_PER_DAY)
        .map(|t| !is_fixed(prob, k, t) && ts.iter().any(|w| (w.start..w.end).contains(&t)))
        .collect()
}

/// The value a fixed slot holds (0 for slots that are neither fixed nor free).
pub fn fixed_value(prob: &StepProblem, k: usize, t: usize) -> f64 {
    if is_fixed(prob, k, t) {
        prob.decision(k).e[t]
    } else {
        0.0
    }
}

/// Delivered energy required by a term, after the optional relaxation.
pub fn requirement(prob: &StepProblem, k: usize, term: &Term, free: &[bool]) -> f64 {
    if !prob.relax_del_min {
        return prob.e_del_min;
    }
    let d = prob.decision(k);
    let reachable: f64 = d.carried_kwh
        + (term.start..term.end)
            .map(|t| {
                if free[t] {
                    prob.e_max_slot
                } else {
                    fixed_value(prob, k, t)
                }
            })
            .sum::<f64>();
    prob.e_del_min.min(reachable)
}

/// Energy a term counts: carried plus every slot in its window.
pub fn term_energy(prob: &StepProblem, k: usize, term: &Term, e: &[f64]) -> f64 {
    prob.decision(k).carried_kwh + e[term.start..term.end].iter().sum::<f64>()
}

/// Total scheduled load per slot.
pub fn slot_loads(plans: &[Vec<f64>]) -> Vec<f64> {
    let mut load = vec![0.0; SLOTS_PER_DAY];
    for p in plans {
        for (l, v) in load.iter_mut().zip(p) {
            *l += v;
        }
    }
    load
}

/// Smallest `e_inc` consistent with the loads: `max(0, max_t L_t - e_old)`
/// over the current and future slots.
pub fn implied_e_inc(prob: &StepProblem, plans: &[Vec<f64>]) -> f64 {
    let load = slot_loads(plans);
    load[prob.current_slot..]
        .iter()
        .map(|l| l - prob.e_old_peak_slot)
        .fold(0.0, f64::max)
}

/// Objective (2a) evaluated on full 96-slot plans, including the constant
/// contribution of fixed slots.
pub fn objective(prob: &StepProblem, plans: &[Vec<f64>], e_inc: f64) -> f64 {
    let mut f = -prob.peak_weight() * e_inc;
    for (k, e) in plans.iter().enumerate() {
        for term in terms(prob, k) {
            f += term.weight * prob.w1 * (term_energy(prob, k, &term, e) + 1.0).ln();
        }
        f -= prob.w2 * e.iter().zip(&prob.prices).map(|(x, p)| x * p).sum::<f64>();
    }
    f
}

/// Largest violation of any constraint of the problem, in kWh.
pub fn max_violation(prob: &StepProblem, plans: &[Vec<f64>], e_inc: f64) -> f64 {
    let mut worst: f64 = (-e_inc).max(0.0);
    for (k, e) in plans.iter().enumerate() {
        let free = free_mask(prob, k);
        for t in 0..SLOTS_PER_DAY {
            let v = if free[t] {
                (-e[t]).max(e[t] - prob.e_max_slot).max(0.0)
            } else {
                (e[t] - fixed_value(prob, k, t)).abs()
            };
            worst = worst.max(v);
        }
        for term in terms(prob, k) {
            let req = requirement(prob, k, &term, &free);
            worst = worst.max(req - term_energy(prob, k, &term, e));
        }
    }
    let load = slot_loads(plans);
    for t in prob.current_slot..SLOTS_PER_DAY {
        worst = worst
            .max(load[t] - prob.e_trans_slot)
            .max(load[t] - prob.e_old_peak_slot - e_inc);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(window: (usize, usize)) -> StepProblem {
        let mut prob = StepProblem::empty(vec![0.2; 96], 2.0, 1.0, 0.0, 100.0);
        prob.real_evs.push(RealEvEntry {
            decision: EvDecision::new("a", EvKind::Real),
            scenarios: DepartureScenarioSet::new("a", window.0, &[window.1]),
        });
        prob
    }

    #[test]
    fn free_mask_follows_windows_and_pins() {
        let mut prob = single((4, 8));
        prob.current_slot = 5;
        prob.real_evs[0].decision.pin(6, 0.5);
        let free = free_mask(&prob, 0);
        let idx: Vec<usize> = (0..96).filter(|&t| free[t]).collect();
        assert_eq!(idx, vec![5, 7]);
        assert_eq!(fixed_value(&prob, 0, 6), 0.5);
    }

    #[test]
    fn requirement_relaxes_to_capacity() {
        let mut prob = single((0, 2));
        prob.e_del_min = 10.0;
        let free = free_mask(&prob, 0);
        let t = terms(&prob, 0)[0];
        assert!((requirement(&prob, 0, &t, &free) - 3.3).abs() < 1e-12);
        prob.relax_del_min = false;
        assert_eq!(requirement(&prob, 0, &t, &free), 10.0);
    }

    #[test]
    fn objective_of_box_optimum() {
        let prob = single((0, 4));
        let mut e = vec![0.0; 96];
        e[..4].fill(1.65);
        let f = objective(&prob, &[e.clone()], 1.65);
        assert!((f - (2.0 * 7.6f64.ln() - 0.2 * 6.6)).abs() < 1e-12);
        assert_eq!(max_violation(&prob, &[e.clone()], 1.65), 0.0);
        assert!((max_violation(&prob, &[e.clone()], 0.0) - 1.65).abs() < 1e-12);
        e[10] = 0.1;
        assert!((max_violation(&prob, &[e], 1.65) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn implied_peak_increase() {
        let mut prob = single((0, 4));
        prob.e_old_peak_slot = 1.0;
        let mut e = vec![0.0; 96];
        e[2] = 1.5;
        assert!((implied_e_inc(&prob, &[e.clone()]) - 0.5).abs() < 1e-12);
        prob.current_slot = 3;
        assert_eq!(implied_e_inc(&prob, &[e]), 0.0);
    }
}
