use std::cmp::Ordering;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ForcedRate, SimConfig};
use super::engine::run;
use super::output::{read_rows, replace_file, StreamingCsv};
use crate::error::{Error, Result};
use crate::ingest::{ChargingSession, ModelSet};
use crate::tariff::TariffSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub capacity_kw: f64,
    pub rate: ForcedRate,
    pub feasible: bool,
    pub first_infeasible: Option<String>,
}

fn rate_key(r: ForcedRate) -> f64 {
    r.0.unwrap_or(0.0)
}

fn grid_order(a: &GridPoint, b: &GridPoint) -> Ordering {
    rate_key(a.rate)
        .total_cmp(&rate_key(b.rate))
        .then(a.capacity_kw.total_cmp(&b.capacity_kw))
}

fn same_cell(p: &GridPoint, capacity: f64, rate: ForcedRate) -> bool {
    p.capacity_kw == capacity && p.rate == rate
}

/// Runs every (capacity, rate) pair on `jobs` threads. A point is infeasible
/// as soon as one step is.
///
/// With `sink`, each finished point is appended and flushed at once, points
/// already in the file are not rerun, and the finished file is rewritten in
/// grid order.
#[allow(clippy::too_many_arguments)]
pub fn sweep_feasibility(
    base: &SimConfig,
    capacities: &[f64],
    rates: &[ForcedRate],
    trace: &[ChargingSession],
    model: &ModelSet,
    tariff: &TariffSchedule,
    jobs: usize,
    sink: Option<&Path>,
) -> Result<Vec<GridPoint>> {
    if capacities.is_empty() || rates.is_empty() {
        return Err(Error::config("capacities", "sweep needs at least one capacity and one rate"));
    }
    let done: Vec<GridPoint> = match sink {
        Some(p) if p.exists() && std::fs::metadata(p).map(|m| m.len() > 0).unwrap_or(false) => read_rows(p)?,
        _ => Vec::new(),
    };
    let todo: Vec<(f64, ForcedRate)> = rates
        .iter()
        .flat_map(|&r| capacities.iter().map(move |&c| (c, r)))
        .filter(|&(c, r)| !done.iter().any(|p| same_cell(p, c, r)))
        .collect();
    if !done.is_empty() {
        log::info!("resuming sweep: {} points on file, {} to run", done.len(), todo.len());
    }
    let stream = sink.map(StreamingCsv::append).transpose()?.map(Mutex::new);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    let fresh: Vec<GridPoint> = pool.install(|| {
        todo.par_iter()
            .map(|&(capacity_kw, rate)| {
                let cfg = SimConfig {
                    label: format!("{capacity_kw}kW-{rate}"),
                    transformer_kw: capacity_kw,
                    forced_initial: rate,
                    stop_on_infeasible: true,
                    ..base.clone()
                };
                cfg.validate()?;
                let out = run(trace, &cfg, model, tariff)?;
                let point = GridPoint {
                    capacity_kw,
                    rate,
                    feasible: out.metrics.feasible,
                    first_infeasible: out.metrics.first_infeasible,
                };
                log::info!(
                    "{} kW, rate {}: {}",
                    capacity_kw,
                    rate,
                    if point.feasible { "feasible" } else { "infeasible" }
                );
                if let Some(s) = &stream {
                    s.lock().expect("sink lock").push(&point)?;
                }
                Ok(point)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut grid: Vec<GridPoint> = done
        .into_iter()
        .filter(|p| capacities.contains(&p.capacity_kw) && rates.contains(&p.rate))
        .chain(fresh)
        .collect();
    grid.sort_by(grid_order);
    if let Some(path) = sink {
        drop(stream);
        let mut w = csv::Writer::from_writer(Vec::new());
        for p in &grid {
            w.serialize(p)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
        replace_file(path, &bytes)?;
    }
    Ok(grid)
}

/// Cells breaking monotonicity: a feasible point whose larger-capacity or
/// smaller-rate neighbour is infeasible.
pub fn monotonicity_violations(grid: &[GridPoint]) -> Vec<String> {
    let mut out = Vec::new();
    for a in grid.iter().filter(|p| p.feasible) {
        for b in grid.iter().filter(|p| !p.feasible) {
            let more_capacity = b.rate == a.rate && b.capacity_kw >= a.capacity_kw;
            let less_rate = b.capacity_kw == a.capacity_kw && rate_key(b.rate) <= rate_key(a.rate);
            if more_capacity || less_rate {
                out.push(format!(
                    "({} kW, {}) feasible but ({} kW, {}) infeasible",
                    a.capacity_kw, a.rate, b.capacity_kw, b.rate
                ));
            }
        }
    }
    out
}

pub fn lookup(grid: &[GridPoint], capacity: f64, rate: ForcedRate) -> Option<&GridPoint> {
    grid.iter().find(|p| same_cell(p, capacity, rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(c: f64, r: Option<f64>, feasible: bool) -> GridPoint {
        GridPoint {
            capacity_kw: c,
            rate: ForcedRate(r),
            feasible,
            first_infeasible: None,
        }
    }

    #[test]
    fn monotone_grid_has_no_violations() {
        let grid = vec![
            pt(100.0, None, true),
            pt(150.0, None, true),
            pt(100.0, Some(1.0), false),
            pt(150.0, Some(1.0), true),
        ];
        assert!(monotonicity_violations(&grid).is_empty());
    }

    #[test]
    fn violations_are_reported() {
        let grid = vec![pt(100.0, Some(1.0), true), pt(150.0, Some(1.0), false)];
        assert_eq!(monotonicity_violations(&grid).len(), 1);
        let grid = vec![pt(100.0, Some(1.0), true), pt(100.0, Some(0.5), false)];
        assert_eq!(monotonicity_violations(&grid).len(), 1);
    }

    #[test]
    fn empty_lists_are_rejected() {
        let r = sweep_feasibility(
            &SimConfig::default(),
            &[],
            &[ForcedRate::NONE],
            &[],
            &ModelSet::reference(),
            &TariffSchedule::default(),
            1,
            None,
        );
        assert!(r.is_err());
    }
}
