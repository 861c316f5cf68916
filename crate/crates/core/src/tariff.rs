//! Time-of-use energy prices and the monthly demand charge.
//!
//! A [`TariffSchedule`] holds one 96-entry price vector for weekdays and one
//! for weekends, plus a demand charge rate in $/kW assessed on the monthly
//! maximum 15-minute-average power. Schedules are loaded from a small TOML
//! file of labelled windows:
//!
//! ```toml
//! demand_charge_rate = 18.0
//!
//! [[weekday]]
//! label = "off-peak"
//! start = "00:00"
//! end = "08:30"
//! price = 0.09
//! ```
//!
//! Window times must sit on 15-minute boundaries and tile the whole day.
//! When no `[[weekend]]` windows are given, every weekend slot carries the
//! cheapest weekday off-peak price.

use std::fmt;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{SLOTS_PER_DAY, SLOT_MINUTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DayKind {
    Weekday,
    Weekend,
}

impl DayKind {
    pub fn of(date: NaiveDate) -> Self {
        match date.weekday() {
            Weekday::Sat | Weekday::Sun => DayKind::Weekend,
            _ => DayKind::Weekday,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TouLabel {
    OffPeak,
    PartialPeak,
    Peak,
}

impl fmt::Display for TouLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TouLabel::OffPeak => "off-peak",
            TouLabel::PartialPeak => "partial-peak",
            TouLabel::Peak => "peak",
        };
        f.write_str(s)
    }
}

/// A priced span of slots `[start_slot, end_slot)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TouWindow {
    pub label: TouLabel,
    pub start_slot: usize,
    pub end_slot: usize,
    pub price: f64,
}

impl TouWindow {
    pub fn new(label: TouLabel, start_slot: usize, end_slot: usize, price: f64) -> Self {
        Self {
            label,
            start_slot,
            end_slot,
            price,
        }
    }

    pub fn len(&self) -> usize {
        self.end_slot - self.start_slot
    }

    pub fn is_empty(&self) -> bool {
        self.end_slot <= self.start_slot
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TariffSchedule {
    slot_prices: Vec<f64>,
    weekend_slot_prices: Vec<f64>,
    demand_charge_rate: f64,
    windows: Vec<TouWindow>,
    weekend_windows: Vec<TouWindow>,
}

impl TariffSchedule {
    /// Assembles a schedule from window tables. The weekday table must tile
    /// all 96 slots without overlap; the weekend table too when supplied.
    pub fn from_windows(
        weekday: Vec<TouWindow>,
        weekend: Option<Vec<TouWindow>>,
        demand_charge_rate: f64,
    ) -> Result<Self> {
        if !(demand_charge_rate.is_finite() && demand_charge_rate >= 0.0) {
            return Err(Error::config(
                "demand_charge_rate",
                format!("must be a non-negative number, got {demand_charge_rate}"),
            ));
        }
        let slot_prices = assemble(&weekday, "weekday")?;
        let weekend_windows = match weekend {
            Some(w) => w,
            None => {
                let off_peak = weekday
                    .iter()
                    .filter(|w| w.label == TouLabel::OffPeak)
                    .map(|w| w.price)
                    .fold(f64::INFINITY, f64::min);
                let price = if off_peak.is_finite() {
                    off_peak
                } else {
                    slot_prices.iter().copied().fold(f64::INFINITY, f64::min)
                };
                vec![TouWindow::new(TouLabel::OffPeak, 0, SLOTS_PER_DAY, price)]
            }
        };
        let weekend_slot_prices = assemble(&weekend_windows, "weekend")?;
        Ok(Self {
            slot_prices,
            weekend_slot_prices,
            demand_charge_rate,
            windows: weekday,
            weekend_windows,
        })
    }

    /// One price for every slot of every day.
    pub fn flat(price: f64, demand_charge_rate: f64) -> Result<Self> {
        Self::from_windows(
            vec![TouWindow::new(TouLabel::OffPeak, 0, SLOTS_PER_DAY, price)],
            None,
            demand_charge_rate,
        )
    }

    /// Default E-19-like schedule: partial-peak 08:30-12:00, peak 12:00-18:00,
    /// off-peak otherwise, 18 $/kW demand charge.
    ///
    /// The prices are placeholders, not an actual utility rate sheet.
    pub fn e19_like() -> Self {
        Self::from_windows(
            vec![
                TouWindow::new(TouLabel::OffPeak, 0, 34, 0.09),
                TouWindow::new(TouLabel::PartialPeak, 34, 48, 0.12),
                TouWindow::new(TouLabel::Peak, 48, 72, 0.17),
                TouWindow::new(TouLabel::OffPeak, 72, 96, 0.09),
            ],
            None,
            18.0,
        )
        .expect("built-in tariff is valid")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: TariffFile =
            toml::from_str(text).map_err(|e| Error::Format(format!("tariff config: {e}")))?;
        file.into_schedule()
    }

    pub fn to_toml_string(&self) -> String {
        let file = TariffFile {
            demand_charge_rate: self.demand_charge_rate,
            weekday: self.windows.iter().map(WindowEntry::from).collect(),
            weekend: Some(self.weekend_windows.iter().map(WindowEntry::from).collect()),
        };
        toml::to_string(&file).expect("tariff serializes")
    }

    /// Per-slot $/kWh price vector for a day kind.
    pub fn price_vector(&self, day_kind: DayKind) -> &[f64] {
        match day_kind {
            DayKind::Weekday => &self.slot_prices,
            DayKind::Weekend => &self.weekend_slot_prices,
        }
    }

    pub fn demand_charge_rate(&self) -> f64 {
        self.demand_charge_rate
    }

    pub fn windows(&self) -> &[TouWindow] {
        &self.windows
    }

    pub fn weekend_windows(&self) -> &[TouWindow] {
        &self.weekend_windows
    }
}

impl Default for TariffSchedule {
    fn default() -> Self {
        Self::e19_like()
    }
}

fn assemble(windows: &[TouWindow], which: &str) -> Result<Vec<f64>> {
    let mut prices = vec![f64::NAN; SLOTS_PER_DAY];
    for w in windows {
        if w.is_empty() || w.end_slot > SLOTS_PER_DAY {
            return Err(Error::config(
                which,
                format!(
                    "window {} [{}, {}) is empty or leaves the day",
                    w.label, w.start_slot, w.end_slot
                ),
            ));
        }
        if !(w.price.is_finite() && w.price >= 0.0) {
            return Err(Error::config(
                which,
                format!("window {} has invalid price {}", w.label, w.price),
            ));
        }
        for p in &mut prices[w.start_slot..w.end_slot] {
            if !p.is_nan() {
                return Err(Error::config(
                    which,
                    format!("window {} overlaps another window", w.label),
                ));
            }
            *p = w.price;
        }
    }
    if let Some(gap) = prices.iter().position(|p| p.is_nan()) {
        return Err(Error::config(
            which,
            format!("windows do not cover slot {gap}"),
        ));
    }
    Ok(prices)
}

/// `pᵀe` in dollars.
pub fn energy_cost(energy_kwh: &[f64], prices: &[f64]) -> Result<f64> {
    if energy_kwh.len() != prices.len() {
        return Err(Error::Contract(format!(
            "energy vector has {} entries but price vector has {}",
            energy_kwh.len(),
            prices.len()
        )));
    }
    Ok(energy_kwh.iter().zip(prices).map(|(e, p)| e * p).sum())
}

/// Demand charge for a billing period whose maximum 15-minute power was `peak_power_kw`.
pub fn demand_charge(peak_power_kw: f64, tariff: &TariffSchedule) -> f64 {
    tariff.demand_charge_rate * peak_power_kw
}

#[derive(Debug, Serialize, Deserialize)]
struct TariffFile {
    demand_charge_rate: f64,
    weekday: Vec<WindowEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weekend: Option<Vec<WindowEntry>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WindowEntry {
    label: TouLabel,
    start: String,
    end: String,
    price: f64,
}

impl From<&TouWindow> for WindowEntry {
    fn from(w: &TouWindow) -> Self {
        WindowEntry {
            label: w.label,
            start: format_slot_time(w.start_slot),
            end: format_slot_time(w.end_slot),
            price: w.price,
        }
    }
}

impl TariffFile {
    fn into_schedule(self) -> Result<TariffSchedule> {
        let convert = |entries: Vec<WindowEntry>, which: &str| -> Result<Vec<TouWindow>> {
            entries
                .into_iter()
                .enumerate()
                .map(|(i, e)| {
                    let field = format!("{which}[{i}]");
                    Ok(TouWindow {
                        label: e.label,
                        start_slot: parse_slot_time(&e.start, &format!("{field}.start"))?,
                        end_slot: parse_slot_time(&e.end, &format!("{field}.end"))?,
                        price: e.price,
                    })
                })
                .collect()
        };
        let weekday = convert(self.weekday, "weekday")?;
        let weekend = self.weekend.map(|w| convert(w, "weekend")).transpose()?;
        TariffSchedule::from_windows(weekday, weekend, self.demand_charge_rate)
    }
}

/// Parses `HH:MM` on the 15-minute grid into a slot boundary in `0..=96`.
fn parse_slot_time(text: &str, field: &str) -> Result<usize> {
    let bad = || Error::config(field, format!("expected HH:MM on a 15-minute boundary, got `{text}`"));
    let (h, m) = text.trim().split_once(':').ok_or_else(bad)?;
    let h: u32 = h.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) || !m.is_multiple_of(SLOT_MINUTES) {
        return Err(bad());
    }
    Ok(((h * 60 + m) / SLOT_MINUTES) as usize)
}

fn format_slot_time(slot: usize) -> String {
    let minutes = slot as u32 * SLOT_MINUTES;
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}
