//! C ABI for the evlot library.
//!
//! Objects cross the boundary as opaque handles created by `evlot_*_new`,
//! `evlot_*_load` and friends and released with the matching `evlot_*_free`.
//! Every fallible call returns an [`EvlotStatus`]; on failure the message is
//! available from [`evlot_last_error`] on the same thread.
//!
//! Dates are passed as `YYYYMMDD` integers.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use chrono::NaiveDate;
use evlot::controller::{ControllerConfig, ParkingLotState};
use evlot::ingest::{generate_synthetic_trace, parse_sessions, ChargingSession, ModelSet, SynthConfig};
use evlot::simulator::{baseline_status_quo, run, ForcedRate, SimConfig, SimulationMetrics};
use evlot::tariff::TariffSchedule;
use evlot::units::{kw_to_slot_kwh, SLOTS_PER_BLOCK, SLOTS_PER_DAY};
use evlot::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvlotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Contract = 6,
    Solver = 7,
    Panic = 8,
}

/// Run parameters. `forced_initial` is a fraction of `p_max_kw`; zero or
/// less means no forced initial charge.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EvlotConfig {
    pub w1: f64,
    pub w2: f64,
    pub transformer_kw: f64,
    pub forced_initial: f64,
    pub n_scenarios: u32,
    pub e_del_min: f64,
    pub relax_del_min: bool,
    pub start_date: i32,
    pub end_date: i32,
    pub rng_seed: u64,
    pub evse_count: u32,
    pub p_max_kw: f64,
    pub stay_cv: f64,
    pub e_old_seed_kw: f64,
    pub detect_full: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct EvlotMetrics {
    pub total_energy_kwh: f64,
    pub energy_cost_usd: f64,
    pub demand_charge_usd: f64,
    pub peak_kw: f64,
    pub midday_energy_kwh: f64,
    pub sessions: u64,
    pub rejected_arrivals: u64,
    pub infeasible_steps: u64,
    pub feasible: bool,
}

pub struct EvlotTariff(TariffSchedule);

pub struct EvlotModel(ModelSet);

pub struct EvlotTrace {
    sessions: Vec<ChargingSession>,
    rejected: usize,
}

/// A parking lot driven slot by slot from the host.
pub struct EvlotLot {
    state: ParkingLotState,
    cfg: ControllerConfig,
    model: ModelSet,
    tariff: TariffSchedule,
    setpoints: BTreeMap<usize, f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EvlotStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => EvlotStatus::Io,
            Error::Csv(_) | Error::Format(_) => EvlotStatus::Format,
            Error::Config { .. } => EvlotStatus::Config,
            Error::Contract(_) => EvlotStatus::Contract,
            Error::Solver(_) => EvlotStatus::Solver,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EvlotStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EvlotStatus::InvalidArgument, msg.into())
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul removed"));
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EvlotStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            EvlotStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(Some(format!("internal panic: {msg}")));
            EvlotStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn date_arg(v: i32, what: &str) -> Result<NaiveDate, Failure> {
    NaiveDate::from_ymd_opt(v / 10_000, (v / 100 % 100) as u32, (v % 100) as u32)
        .ok_or_else(|| invalid(format!("`{what}` = {v} is not a YYYYMMDD date")))
}

fn date_int(d: NaiveDate) -> i32 {
    use chrono::Datelike;
    d.year() * 10_000 + d.month() as i32 * 100 + d.day() as i32
}

impl EvlotConfig {
    fn to_sim(self) -> Result<SimConfig, Failure> {
        let cfg = SimConfig {
            label: "ffi".into(),
            w1: self.w1,
            w2: self.w2,
            transformer_kw: self.transformer_kw,
            forced_initial: ForcedRate((self.forced_initial > 0.0).then_some(self.forced_initial)),
            n_scenarios: self.n_scenarios as usize,
            e_del_min: self.e_del_min,
            relax_del_min: self.relax_del_min,
            start: date_arg(self.start_date, "start_date")?,
            end: date_arg(self.end_date, "end_date")?,
            rng_seed: self.rng_seed,
            evse_count: self.evse_count as usize,
            p_max_kw: self.p_max_kw,
            stay_cv: self.stay_cv,
            e_old_seed_kw: self.e_old_seed_kw,
            detect_full: self.detect_full,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<&SimulationMetrics> for EvlotMetrics {
    fn from(m: &SimulationMetrics) -> Self {
        Self {
            total_energy_kwh: m.total_energy_kwh,
            energy_cost_usd: m.energy_cost_usd,
            demand_charge_usd: m.demand_charge_usd,
            peak_kw: m.peak_kw,
            midday_energy_kwh: m.midday_energy_kwh,
            sessions: m.sessions as u64,
            rejected_arrivals: m.rejected_arrivals as u64,
            infeasible_steps: m.infeasible_steps as u64,
            feasible: m.feasible,
        }
    }
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next `evlot_*` call on the same thread.
#[no_mangle]
pub extern "C" fn evlot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn evlot_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Fills `out` with the library defaults.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `EvlotConfig`.
#[no_mangle]
pub unsafe extern "C" fn evlot_config_default(out: *mut EvlotConfig) -> EvlotStatus {
    guard(|| {
        let out = get_mut(out, "out")?;
        let d = SimConfig::default();
        *out = EvlotConfig {
            w1: d.w1,
            w2: d.w2,
            transformer_kw: d.transformer_kw,
            forced_initial: d.forced_initial.0.unwrap_or(0.0),
            n_scenarios: d.n_scenarios as u32,
            e_del_min: d.e_del_min,
            relax_del_min: d.relax_del_min,
            start_date: date_int(d.start),
            end_date: date_int(d.end),
            rng_seed: d.rng_seed,
            evse_count: d.evse_count as u32,
            p_max_kw: d.p_max_kw,
            stay_cv: d.stay_cv,
            e_old_seed_kw: d.e_old_seed_kw,
            detect_full: d.detect_full,
        };
        Ok(())
    })
}

/// Checks `cfg` the way a run would.
///
/// # Safety
/// `cfg` must be NULL or point to a valid `EvlotConfig`.
#[no_mangle]
pub unsafe extern "C" fn evlot_config_validate(cfg: *const EvlotConfig) -> EvlotStatus {
    guard(|| get(cfg, "cfg")?.to_sim().map(drop))
}

/// The built-in tariff.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn evlot_tariff_default(out: *mut *mut EvlotTariff) -> EvlotStatus {
    guard(|| put(out, EvlotTariff(TariffSchedule::default())))
}

/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` as in
/// [`evlot_tariff_default`].
#[no_mangle]
pub unsafe extern "C" fn evlot_tariff_load(path: *const c_char, out: *mut *mut EvlotTariff) -> EvlotStatus {
    guard(|| {
        let t = TariffSchedule::load(path_arg(path, "path")?)?;
        put(out, EvlotTariff(t))
    })
}

/// # Safety
/// `t` must be NULL or a handle from this library not freed yet.
#[no_mangle]
pub unsafe extern "C" fn evlot_tariff_free(t: *mut EvlotTariff) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// The built-in arrival model.
///
/// # Safety
/// `out` must be NULL or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn evlot_model_reference(out: *mut *mut EvlotModel) -> EvlotStatus {
    guard(|| put(out, EvlotModel(ModelSet::reference())))
}

/// Loads a model file written by `evlot build-model`.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` as in
/// [`evlot_model_reference`].
#[no_mangle]
pub unsafe extern "C" fn evlot_model_load(path: *const c_char, out: *mut *mut EvlotModel) -> EvlotStatus {
    guard(|| {
        let m = ModelSet::load(path_arg(path, "path")?)?;
        put(out, EvlotModel(m))
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library not freed yet.
#[no_mangle]
pub unsafe extern "C" fn evlot_model_free(m: *mut EvlotModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Parses a session CSV. Malformed rows are skipped and counted, see
/// [`evlot_trace_rejected`].
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be NULL or
/// point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn evlot_trace_load(path: *const c_char, out: *mut *mut EvlotTrace) -> EvlotStatus {
    guard(|| {
        let parsed = parse_sessions(path_arg(path, "path")?)?;
        put(
            out,
            EvlotTrace {
                sessions: parsed.sessions,
                rejected: parsed.rejects.len(),
            },
        )
    })
}

/// Samples a synthetic trace from `model` for the dates `[start, end]`.
///
/// # Safety
/// `model` must be NULL or a live handle; `out` as in [`evlot_trace_load`].
#[no_mangle]
pub unsafe extern "C" fn evlot_trace_synthetic(
    model: *const EvlotModel,
    start_date: i32,
    end_date: i32,
    seed: u64,
    out: *mut *mut EvlotTrace,
) -> EvlotStatus {
    guard(|| {
        let model = get(model, "model")?;
        let start = date_arg(start_date, "start_date")?;
        let end = date_arg(end_date, "end_date")?;
        if end < start {
            return Err(invalid("end_date is before start_date"));
        }
        let sessions = generate_synthetic_trace(&model.0, start, end, seed, &SynthConfig::default());
        put(out, EvlotTrace { sessions, rejected: 0 })
    })
}

/// Number of sessions, 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_trace_len(t: *const EvlotTrace) -> usize {
    t.as_ref().map_or(0, |t| t.sessions.len())
}

/// Rows skipped while loading, 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_trace_rejected(t: *const EvlotTrace) -> usize {
    t.as_ref().map_or(0, |t| t.rejected)
}

/// # Safety
/// `t` must be NULL or a handle from this library not freed yet.
#[no_mangle]
pub unsafe extern "C" fn evlot_trace_free(t: *mut EvlotTrace) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Closed-loop controlled run. An infeasible run is a result: the call
/// succeeds and `out->feasible` is false.
///
/// # Safety
/// Pointers must be NULL or valid; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn evlot_simulate(
    cfg: *const EvlotConfig,
    trace: *const EvlotTrace,
    model: *const EvlotModel,
    tariff: *const EvlotTariff,
    out: *mut EvlotMetrics,
) -> EvlotStatus {
    guard(|| {
        let cfg = get(cfg, "cfg")?.to_sim()?;
        let trace = get(trace, "trace")?;
        let model = get(model, "model")?;
        let tariff = get(tariff, "tariff")?;
        let out = get_mut(out, "out")?;
        let result = run(&trace.sessions, &cfg, &model.0, &tariff.0).map_err(Error::from)?;
        *out = EvlotMetrics::from(&result.metrics);
        Ok(())
    })
}

/// Uncontrolled baseline: every EV charges at full power on arrival.
///
/// # Safety
/// Pointers must be NULL or valid; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn evlot_baseline(
    cfg: *const EvlotConfig,
    trace: *const EvlotTrace,
    tariff: *const EvlotTariff,
    out: *mut EvlotMetrics,
) -> EvlotStatus {
    guard(|| {
        let cfg = get(cfg, "cfg")?.to_sim()?;
        let trace = get(trace, "trace")?;
        let tariff = get(tariff, "tariff")?;
        let out = get_mut(out, "out")?;
        *out = EvlotMetrics::from(&baseline_status_quo(&trace.sessions, &tariff.0, &cfg).metrics);
        Ok(())
    })
}

/// Creates a lot positioned at slot 0 of `cfg->start_date`. The model and
/// tariff are copied.
///
/// # Safety
/// Pointers must be NULL or valid; `out` must point to storage for one
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_new(
    cfg: *const EvlotConfig,
    model: *const EvlotModel,
    tariff: *const EvlotTariff,
    out: *mut *mut EvlotLot,
) -> EvlotStatus {
    guard(|| {
        let sim = get(cfg, "cfg")?.to_sim()?;
        let model = get(model, "model")?.0.clone();
        let tariff = get(tariff, "tariff")?.0.clone();
        let ctrl = sim.controller();
        let mut state = ParkingLotState::new(sim.start, &ctrl, sim.rng_seed);
        state.start_day(sim.start, &model, &ctrl);
        put(
            out,
            EvlotLot {
                state,
                cfg: ctrl,
                model,
                tariff,
                setpoints: BTreeMap::new(),
            },
        )
    })
}

/// Moves to a later date. EVs still plugged in carry over.
///
/// # Safety
/// `lot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_start_day(lot: *mut EvlotLot, date: i32) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        let date = date_arg(date, "date")?;
        if date < lot.state.date {
            return Err(invalid("date is before the lot's current date"));
        }
        lot.state.start_day(date, &lot.model, &lot.cfg);
        lot.setpoints.clear();
        Ok(())
    })
}

/// Plugs in an EV. `*evse_out` receives the EVSE index, or -1 when the lot
/// is full.
///
/// # Safety
/// `lot` must be a live handle, `ev_ref` a NUL-terminated string and
/// `evse_out` writable.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_arrive(
    lot: *mut EvlotLot,
    ev_ref: *const c_char,
    slot: u32,
    evse_out: *mut i32,
) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        let name = path_arg(ev_ref, "ev_ref")?;
        let evse_out = get_mut(evse_out, "evse_out")?;
        let slot = slot as usize;
        if slot >= SLOTS_PER_DAY {
            return Err(invalid(format!("slot {slot} out of range")));
        }
        let stats = lot.model.sampling_stats(lot.state.day_of_week, slot / SLOTS_PER_BLOCK);
        let evse = lot.state.on_arrival(&name.to_string_lossy(), slot, stats, &lot.cfg);
        *evse_out = evse.map_or(-1, |e| e as i32);
        Ok(())
    })
}

/// Unplugs the EV at `evse`; `*delivered_kwh` (if not NULL) receives the
/// energy it got over the whole session.
///
/// # Safety
/// `lot` must be a live handle; `delivered_kwh` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_depart(
    lot: *mut EvlotLot,
    evse: u32,
    slot: u32,
    delivered_kwh: *mut f64,
) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        let summary = lot.state.on_departure(evse as usize, slot as usize)?;
        if let Some(d) = delivered_kwh.as_mut() {
            *d = summary.delivered_kwh;
        }
        Ok(())
    })
}

/// Solves for `slot` and writes one setpoint in kW per EVSE into `kw_out`
/// (`len` must be at least the EVSE count; empty EVSEs get 0).
/// `*feasible` is false when the step had no feasible schedule.
///
/// # Safety
/// `lot` must be a live handle, `kw_out` valid for `len` doubles and
/// `feasible` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_step(
    lot: *mut EvlotLot,
    slot: u32,
    kw_out: *mut f64,
    len: usize,
    feasible: *mut bool,
) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        if kw_out.is_null() {
            return Err(null("kw_out"));
        }
        let n = lot.state.evse_count;
        if len < n {
            return Err(invalid(format!("kw_out holds {len} values, lot has {n} EVSEs")));
        }
        let slot = slot as usize;
        if slot >= SLOTS_PER_DAY {
            return Err(invalid(format!("slot {slot} out of range")));
        }
        lot.state.prune_all(slot);
        let step = lot.state.step(&lot.tariff, &lot.cfg)?;
        let out = std::slice::from_raw_parts_mut(kw_out, len);
        out.fill(0.0);
        for (&evse, &kw) in &step.setpoints {
            out[evse] = kw;
        }
        if let Some(f) = feasible.as_mut() {
            *f = step.infeasible.is_none();
        }
        lot.setpoints = step.setpoints;
        Ok(())
    })
}

/// Records the energy actually delivered at `evse` in the current slot.
/// Less than the last setpoint marks the EV as full.
///
/// # Safety
/// `lot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_commit(lot: *mut EvlotLot, evse: u32, delivered_kwh: f64) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        if !(delivered_kwh >= 0.0) {
            return Err(invalid("delivered_kwh must be non-negative"));
        }
        let setpoint = lot.setpoints.get(&(evse as usize)).map_or(0.0, |&kw| kw_to_slot_kwh(kw));
        lot.state.commit_metered(evse as usize, setpoint, delivered_kwh)?;
        Ok(())
    })
}

/// Closes the current slot with the metered lot power.
///
/// # Safety
/// `lot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_end_slot(lot: *mut EvlotLot, total_kw: f64) -> EvlotStatus {
    guard(|| {
        let lot = get_mut(lot, "lot")?;
        lot.state.update_peak(total_kw.max(0.0));
        lot.setpoints.clear();
        Ok(())
    })
}

/// EVs currently plugged in, 0 for NULL.
///
/// # Safety
/// `lot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_plugged(lot: *const EvlotLot) -> usize {
    lot.as_ref().map_or(0, |l| l.state.plugged.len())
}

/// # Safety
/// `lot` must be NULL or a handle from this library not freed yet.
#[no_mangle]
pub unsafe extern "C" fn evlot_lot_free(lot: *mut EvlotLot) {
    if !lot.is_null() {
        drop(Box::from_raw(lot));
    }
}
