//! The per-slot concave scheduling program and its solver.

mod build;
pub mod kkt;
pub mod oracle;
pub mod plan;
pub mod problem;
pub mod solver;

use serde::Serialize;

pub use build::build_problem;
pub use kkt::kkt_residual;
pub use oracle::{brute_force_oracle, lipschitz_bound, OracleOutcome};
pub use plan::{Multipliers, SchedulePlan, SolveOutcome, SolverStats};
pub use problem::{EvDecision, EvKind, ForcedCharge, ModelEvEntry, RealEvEntry, StepProblem};
pub use solver::{solve, SolverOptions};

/// One line of the optional per-step debug dump.
#[derive(Debug, Clone, Serialize)]
pub struct StepDump {
    pub slot: usize,
    pub real_evs: usize,
    pub model_evs: usize,
    pub free_variables: usize,
    pub active_scenarios: Vec<usize>,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
}

impl StepDump {
    pub fn new(prob: &StepProblem, outcome: &SolveOutcome) -> Self {
        let free_variables = (0..prob.ev_count())
            .map(|k| problem::free_mask(prob, k).iter().filter(|&&f| f).count())
            .sum();
        let plan = outcome.plan();
        Self {
            slot: prob.current_slot,
            real_evs: prob.real_evs.len(),
            model_evs: prob.model_evs.len(),
            free_variables,
            active_scenarios: prob.real_evs.iter().map(|r| r.scenarios.active_count()).collect(),
            feasible: plan.is_some(),
            objective: plan.map(|p| p.objective_value),
            kkt_residual: plan.map(|p| p.stats.kkt_residual),
            iterations: plan.map_or(0, |p| p.stats.iterations),
            wall_time_s: plan.map_or(0.0, |p| p.stats.wall_time_s),
        }
    }
}
