//! Command-line front end.
//!
//! Exit codes: 0 success (an infeasible run is a result, not a failure),
//! 1 usage error, 2 input error, 3 internal or solver error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::ingest::{
    generate_synthetic_trace, parse_sessions, write_rejects, write_sessions, ChargingSession, ModelSet,
    SynthConfig,
};
use crate::simulator::output::{self, MetricsRow};
use crate::simulator::report::{self, render};
use crate::simulator::sweep::{monotonicity_violations, sweep_feasibility};
use crate::simulator::{baseline_status_quo, run_with, ForcedRate, RunOptions, SimConfig};
use crate::tariff::TariffSchedule;
use crate::units::BLOCKS_PER_DAY;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "evlot", version, about = "Smart charging optimizer and simulator for workplace EV parking lots")]
pub struct Cli {
    /// Only print errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    pub quiet: bool,
    /// More output; -v adds the optimizer's per-step dump.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build per-weekday arrival block statistics from a session CSV.
    BuildModel {
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Where rejected rows go (default: next to the model file).
        #[arg(long)]
        rejects: Option<PathBuf>,
        /// Fail when any row is rejected.
        #[arg(long)]
        strict: bool,
    },
    /// Sample a synthetic session trace.
    GenerateTrace {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "2019-06-17")]
        start: NaiveDate,
        #[arg(long, default_value = "2019-06-29")]
        end: NaiveDate,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Model file (default: the built-in reference calibration).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 50.0)]
        min_arrivals: f64,
        #[arg(long, default_value_t = 100.0)]
        max_arrivals: f64,
    },
    /// Run one test case and the uncontrolled baseline.
    Simulate {
        #[command(flatten)]
        manifest: ManifestArgs,
        /// Slots at which to record the whole-day plan.
        #[arg(long, value_delimiter = ',')]
        snapshot_slots: Vec<usize>,
    },
    /// Sweep transformer capacity against forced initial charge rate.
    Sweep {
        #[command(flatten)]
        manifest: ManifestArgs,
        #[arg(long, value_delimiter = ',', default_value = "100,110,125,150,250")]
        capacities: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "none,1/4,1/2,1")]
        rates: Vec<String>,
        /// Parallel runs (default: available processors).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print a comparison table from metrics CSVs.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ManifestArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Session trace CSV (overrides the config's `trace`).
    #[arg(long, conflicts_with = "synthetic_seed")]
    pub trace: Option<PathBuf>,
    /// Generate a synthetic trace with this seed (overrides the config).
    #[arg(long)]
    pub synthetic_seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Controller seed (overrides `rng_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub tariff: Option<PathBuf>,
}

enum TraceSource {
    File(PathBuf),
    Synthetic(u64, SynthConfig),
}

/// A validated run: config, inputs and output location.
struct Manifest {
    cfg: SimConfig,
    source: TraceSource,
    out: PathBuf,
}

impl Manifest {
    fn resolve(args: &ManifestArgs) -> Result<Self> {
        let mut cfg = SimConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.rng_seed = seed;
        }
        if args.model.is_some() {
            cfg.model = args.model.clone();
        }
        if args.tariff.is_some() {
            cfg.tariff = args.tariff.clone();
        }
        let source = match (&args.trace, args.synthetic_seed) {
            (Some(t), _) => TraceSource::File(t.clone()),
            (None, Some(seed)) => TraceSource::Synthetic(
                seed,
                cfg.synthetic.as_ref().map(|s| s.generator.clone()).unwrap_or_default(),
            ),
            (None, None) => match (&cfg.trace, &cfg.synthetic) {
                (Some(t), None) => TraceSource::File(t.clone()),
                (None, Some(s)) => TraceSource::Synthetic(s.seed, s.generator.clone()),
                _ => {
                    return Err(Error::config(
                        "trace",
                        "give exactly one of a trace file or synthetic parameters",
                    ))
                }
            },
        };
        std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        Ok(Self {
            cfg,
            source,
            out: args.out.clone(),
        })
    }

    fn model(&self) -> Result<ModelSet> {
        match &self.cfg.model {
            Some(p) => ModelSet::load(p),
            None => Ok(ModelSet::reference()),
        }
    }

    fn tariff(&self) -> Result<TariffSchedule> {
        match &self.cfg.tariff {
            Some(p) => TariffSchedule::load(p),
            None => Ok(TariffSchedule::default()),
        }
    }

    fn trace(&self, model: &ModelSet) -> Result<Vec<ChargingSession>> {
        match &self.source {
            TraceSource::File(p) => {
                let parsed = parse_sessions(p)?;
                if !parsed.rejects.is_empty() {
                    log::warn!("{}: {} rows rejected", p.display(), parsed.rejects.len());
                }
                Ok(parsed.sessions)
            }
            TraceSource::Synthetic(seed, gen) => Ok(generate_synthetic_trace(
                model,
                self.cfg.start,
                self.cfg.end,
                *seed,
                gen,
            )),
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Csv(_) | Error::Format(_) | Error::Config { .. } => EXIT_INPUT,
        Error::Contract(_) | Error::Solver(_) => EXIT_INTERNAL,
    }
}

fn init_logging(cli: &Cli) {
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging(&cli);
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::BuildModel {
            sessions,
            out,
            rejects,
            strict,
        } => cmd_build_model(&sessions, &out, rejects.as_deref(), strict),
        Command::GenerateTrace {
            out,
            start,
            end,
            seed,
            model,
            min_arrivals,
            max_arrivals,
        } => {
            if end < start {
                return Err(Error::config("end", "is before start"));
            }
            let model = match model {
                Some(p) => ModelSet::load(p)?,
                None => ModelSet::reference(),
            };
            let cfg = SynthConfig {
                weekday_arrivals: (min_arrivals, max_arrivals),
                ..Default::default()
            };
            let trace = generate_synthetic_trace(&model, start, end, seed, &cfg);
            write_sessions(&out, &trace)?;
            log::info!("wrote {} sessions to {}", trace.len(), out.display());
            Ok(EXIT_OK)
        }
        Command::Simulate {
            manifest,
            snapshot_slots,
        } => cmd_simulate(&Manifest::resolve(&manifest)?, snapshot_slots),
        Command::Sweep {
            manifest,
            capacities,
            rates,
            jobs,
        } => {
            let rates = rates
                .iter()
                .map(|r| ForcedRate::parse(r).map_err(|m| Error::config("rates", m)))
                .collect::<Result<Vec<_>>>()?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            cmd_sweep(&Manifest::resolve(&manifest)?, &capacities, &rates, jobs)
        }
        Command::Report { metrics, out } => cmd_report(&metrics, out.as_deref()),
    }
}

pub fn cmd_build_model(sessions: &Path, out: &Path, rejects: Option<&Path>, strict: bool) -> Result<i32> {
    let parsed = parse_sessions(sessions)?;
    let reject_path = rejects
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("rejects.csv"));
    if !parsed.rejects.is_empty() {
        write_rejects(&reject_path, &parsed.rejects)?;
        log::warn!("{} rows rejected, see {}", parsed.rejects.len(), reject_path.display());
        if strict {
            eprintln!("error: rejected rows, report at {}", reject_path.display());
            return Ok(EXIT_INPUT);
        }
    }
    if parsed.sessions.is_empty() {
        log::warn!("no sessions in {}; writing an all-zero model", sessions.display());
    }
    let model = ModelSet::from_sessions(&parsed.sessions);
    model.save(out)?;
    println!("{}", model_summary(&model));
    Ok(EXIT_OK)
}

/// Weekday (Mon-Fri) averages per arrival block.
pub fn model_summary(model: &ModelSet) -> String {
    let mut text = format!(
        "{:<13}  {:>9}  {:>11}  {:>10}\n",
        "Arrival", "Arrivals", "Energy kWh", "Stay min"
    );
    for b in 0..BLOCKS_PER_DAY {
        let stats: Vec<_> = (0..5).map(|d| model.block(d, b)).collect();
        let arrivals: f64 = stats.iter().map(|s| s.mean_arrivals_per_day).sum();
        let weighted = |f: fn(&crate::ingest::ArrivalBlockStats) -> f64| {
            if arrivals > 0.0 {
                stats.iter().map(|s| s.mean_arrivals_per_day * f(s)).sum::<f64>() / arrivals
            } else {
                0.0
            }
        };
        text.push_str(&format!(
            "{:02}:00-{:02}:00    {:>9.2}  {:>11.2}  {:>10.0}\n",
            2 * b,
            2 * b + 2,
            arrivals / 5.0,
            weighted(|s| s.mean_energy_kwh),
            weighted(|s| s.mean_stay_min),
        ));
    }
    text
}

fn cmd_simulate(m: &Manifest, snapshot_slots: Vec<usize>) -> Result<i32> {
    let model = m.model()?;
    let tariff = m.tariff()?;
    let trace = m.trace(&model)?;
    let baseline = baseline_status_quo(&trace, &tariff, &m.cfg);
    output::write_run(&m.out, "baseline", &baseline)?;
    let opts = RunOptions { snapshot_slots };
    let label = if m.cfg.label.is_empty() { "test" } else { m.cfg.label.as_str() };
    let (result, code) = match run_with(&trace, &m.cfg, &model, &tariff, &opts) {
        Ok(out) => (out, EXIT_OK),
        Err(abort) => {
            eprintln!("error: {}", abort.error);
            (*abort.partial, EXIT_INTERNAL)
        }
    };
    output::write_run(&m.out, label, &result)?;
    output::write_metrics(
        m.out.join("metrics.csv"),
        &[
            MetricsRow::new(&baseline.metrics, None),
            MetricsRow::new(&result.metrics, Some(&m.cfg)),
        ],
    )?;
    output::replace_file(m.out.join("config.toml"), m.cfg.to_toml_string().as_bytes())?;
    let mm = &result.metrics;
    if mm.feasible {
        log::info!(
            "{label}: {:.1} kWh, ${:.2} energy, ${:.2} demand, peak {:.1} kW",
            mm.total_energy_kwh,
            mm.energy_cost_usd,
            mm.demand_charge_usd,
            mm.peak_kw
        );
    } else {
        log::info!("{label}: infeasible at {}", mm.first_infeasible.as_deref().unwrap_or("?"));
    }
    log::info!("p99 step time {:.3} s", result.wall_time_percentile(0.99));
    Ok(code)
}

fn cmd_sweep(m: &Manifest, capacities: &[f64], rates: &[ForcedRate], jobs: usize) -> Result<i32> {
    let model = m.model()?;
    let tariff = m.tariff()?;
    let trace = m.trace(&model)?;
    let path = m.out.join("feasibility.csv");
    let grid = sweep_feasibility(&m.cfg, capacities, rates, &trace, &model, &tariff, jobs, Some(&path))?;
    for v in monotonicity_violations(&grid) {
        log::warn!("not monotone: {v}");
    }
    log::info!(
        "{} of {} points feasible, grid in {}",
        grid.iter().filter(|p| p.feasible).count(),
        grid.len(),
        path.display()
    );
    Ok(EXIT_OK)
}

fn cmd_report(paths: &[PathBuf], out: Option<&Path>) -> Result<i32> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(output::read_metrics(p)?);
    }
    let baseline = rows
        .iter()
        .find(|r| r.is_baseline())
        .ok_or_else(|| Error::Format("no baseline row in the metrics files".into()))?
        .metrics();
    let mut tests: Vec<MetricsRow> = rows.into_iter().filter(|r| !r.is_baseline()).collect();
    tests.sort_by(|a, b| a.label.cmp(&b.label));
    tests.dedup_by(|a, b| a.label == b.label);
    let table = report::report(&tests, &baseline);
    print!("{}", render(&table));
    if let Some(o) = out {
        output::write_rows(o, &table)?;
    }
    Ok(EXIT_OK)
}
