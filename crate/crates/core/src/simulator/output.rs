//! CSV files written by simulation runs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::engine::{PlanSnapshot, RunOutput, SlotRecord, StepTiming};
use super::metrics::SimulationMetrics;
use crate::controller::SessionSummary;
use crate::error::{Error, Result};

/// One line of the metrics CSV: a test case's Table II columns and its
/// absolute metrics. The baseline row leaves the config columns empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub transformer_kw: Option<f64>,
    pub forced_initial: String,
    pub total_energy_kwh: f64,
    pub energy_cost_usd: f64,
    pub demand_charge_usd: f64,
    pub peak_kw: f64,
    pub midday_energy_kwh: f64,
    pub sessions: usize,
    pub rejected_arrivals: usize,
    pub feasible: bool,
    pub infeasible_steps: usize,
    pub first_infeasible: Option<String>,
}

impl MetricsRow {
    pub fn new(m: &SimulationMetrics, cfg: Option<&SimConfig>) -> Self {
        Self {
            label: m.label.clone(),
            w1: cfg.map(|c| c.w1),
            w2: cfg.map(|c| c.w2),
            transformer_kw: cfg.map(|c| c.transformer_kw),
            forced_initial: cfg.map(|c| c.forced_initial.to_string()).unwrap_or_default(),
            total_energy_kwh: m.total_energy_kwh,
            energy_cost_usd: m.energy_cost_usd,
            demand_charge_usd: m.demand_charge_usd,
            peak_kw: m.peak_kw,
            midday_energy_kwh: m.midday_energy_kwh,
            sessions: m.sessions,
            rejected_arrivals: m.rejected_arrivals,
            feasible: m.feasible,
            infeasible_steps: m.infeasible_steps,
            first_infeasible: m.first_infeasible.clone(),
        }
    }

    pub fn metrics(&self) -> SimulationMetrics {
        SimulationMetrics {
            label: self.label.clone(),
            total_energy_kwh: self.total_energy_kwh,
            energy_cost_usd: self.energy_cost_usd,
            demand_charge_usd: self.demand_charge_usd,
            peak_kw: self.peak_kw,
            midday_energy_kwh: self.midday_energy_kwh,
            sessions: self.sessions,
            rejected_arrivals: self.rejected_arrivals,
            feasible: self.feasible,
            infeasible_steps: self.infeasible_steps,
            first_infeasible: self.first_infeasible.clone(),
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.w1.is_none()
    }
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

/// Writes every row, flushes and syncs the file.
pub fn write_rows<T: Serialize>(path: impl AsRef<Path>, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    let inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    let f = inner.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(f);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    read_rows(path)
}

pub fn write_timeseries(path: impl AsRef<Path>, rows: &[SlotRecord]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_timings(path: impl AsRef<Path>, rows: &[StepTiming]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_sessions(path: impl AsRef<Path>, rows: &[SessionSummary]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Serialize)]
struct SnapshotRow<'a> {
    date: &'a chrono::NaiveDate,
    slot: usize,
    t: usize,
    planned_kw: f64,
}

/// Snapshots in long form: one line per (snapshot, slot of the day).
pub fn write_snapshots(path: impl AsRef<Path>, snaps: &[PlanSnapshot]) -> Result<()> {
    write_rows(
        path,
        snaps.iter().flat_map(|s| {
            s.planned_kw.iter().enumerate().map(move |(t, &kw)| SnapshotRow {
                date: &s.date,
                slot: s.slot,
                t,
                planned_kw: kw,
            })
        }),
    )
}

/// Writes the output set of one run into `dir`: `timeseries.csv`,
/// `sessions.csv`, `solver_timing.csv` and, when recorded,
/// `snapshots.csv`. `tag` prefixes each file name.
pub fn write_run(dir: impl AsRef<Path>, tag: &str, out: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    let name = |f: &str| dir.join(if tag.is_empty() { f.to_string() } else { format!("{tag}_{f}") });
    write_timeseries(name("timeseries.csv"), &out.timeseries)?;
    write_sessions(name("sessions.csv"), &out.sessions)?;
    if !out.timings.is_empty() {
        write_timings(name("solver_timing.csv"), &out.timings)?;
    }
    if !out.snapshots.is_empty() {
        write_snapshots(name("snapshots.csv"), &out.snapshots)?;
    }
    Ok(())
}

/// Appends and flushes lines one at a time.
pub struct StreamingCsv {
    w: csv::Writer<File>,
}

impl StreamingCsv {
    /// Opens `path` for appending; the header is written only to an empty file.
    pub fn append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let empty = f.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
        let w = csv::WriterBuilder::new().has_headers(empty).from_writer(f);
        Ok(Self { w })
    }

    pub fn push<T: Serialize>(&mut self, row: &T) -> Result<()> {
        self.w.serialize(row)?;
        self.w.flush().map_err(|e| Error::io("<stream>", e))?;
        Ok(())
    }
}

/// Writes `text` to `path` through a temporary file and a rename.
pub fn replace_file(path: impl AsRef<Path>, text: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(text).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
