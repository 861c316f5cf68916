use serde::{Deserialize, Serialize};

use super::problem::{terms, StepProblem};
use crate::units::SLOTS_PER_DAY;

/// Dual values for every constraint family, laid out like the problem:
/// per EV (real first, then model) and per slot or term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub lower: Vec<Vec<f64>>,
    pub upper: Vec<Vec<f64>>,
    /// One entry per active term, in the order of `problem::terms`.
    pub min_delivery: Vec<Vec<f64>>,
    pub transformer: Vec<f64>,
    pub peak: Vec<f64>,
    pub e_inc_lower: f64,
}

impl Multipliers {
    pub fn zeros(prob: &StepProblem) -> Self {
        let n = prob.ev_count();
        Self {
            lower: vec![vec![0.0; SLOTS_PER_DAY]; n],
            upper: vec![vec![0.0; SLOTS_PER_DAY]; n],
            min_delivery: (0..n).map(|k| vec![0.0; terms(prob, k).len()]).collect(),
            transformer: vec![0.0; SLOTS_PER_DAY],
            peak: vec![0.0; SLOTS_PER_DAY],
            e_inc_lower: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub phase1_iterations: usize,
    pub kkt_residual: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    /// Full 96-slot energy vectors, real EVs first, then model EVs.
    pub plans: Vec<Vec<f64>>,
    pub e_inc: f64,
    pub objective_value: f64,
    pub multipliers: Multipliers,
    pub stats: SolverStats,
}

impl SchedulePlan {
    pub fn total_energy(&self) -> f64 {
        self.plans.iter().flatten().sum()
    }

    /// Planned total load per slot (kWh).
    pub fn slot_loads(&self) -> Vec<f64> {
        super::problem::slot_loads(&self.plans)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveOutcome {
    Plan(SchedulePlan),
    /// The feasible set is empty; the string says which constraint proves it.
    Infeasible(String),
}

impl SolveOutcome {
    pub fn plan(&self) -> Option<&SchedulePlan> {
        match self {
            Self::Plan(p) => Some(p),
            Self::Infeasible(_) => None,
        }
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, Self::Infeasible(_))
    }
}
