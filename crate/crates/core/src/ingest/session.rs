use std::io::Read;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{kw_to_slot_kwh, DEFAULT_P_MAX_KW};

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];
const WRITE_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// One plug-in event.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargingSession {
    pub session_id: String,
    pub evse_id: Option<String>,
    pub arrival: NaiveDateTime,
    pub departure: NaiveDateTime,
    pub energy_kwh: f64,
    /// 15-minute average kW, when the source carries it.
    pub per_slot_power: Option<Vec<f64>>,
}

impl ChargingSession {
    pub fn stay_minutes(&self) -> i64 {
        (self.departure - self.arrival).num_minutes()
    }

    pub fn arrival_date(&self) -> NaiveDate {
        self.arrival.date()
    }

    /// Checks the session invariants, returning the reason for the first failure.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.departure <= self.arrival {
            return Err("departure is not after arrival".into());
        }
        if !(self.energy_kwh.is_finite() && self.energy_kwh >= 0.0) {
            return Err(format!("energy {} is not a non-negative number", self.energy_kwh));
        }
        let stay_h = (self.departure - self.arrival).num_seconds() as f64 / 3600.0;
        let deliverable = stay_h * DEFAULT_P_MAX_KW + kw_to_slot_kwh(DEFAULT_P_MAX_KW);
        if self.energy_kwh > deliverable {
            return Err(format!(
                "energy {:.3} kWh exceeds the {:.3} kWh deliverable during the stay",
                self.energy_kwh, deliverable
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub session_id: String,
    pub evse_id: String,
    pub arrival: String,
    pub departure: String,
    pub energy_kwh: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedSessions {
    pub sessions: Vec<ChargingSession>,
    pub rejects: Vec<RejectedRow>,
}

#[derive(Debug, Deserialize)]
struct RawRow {
    session_id: String,
    #[serde(default)]
    evse_id: String,
    arrival: String,
    departure: String,
    energy_kwh: String,
}

#[derive(Debug, Serialize)]
struct OutRow<'a> {
    session_id: &'a str,
    evse_id: &'a str,
    arrival: String,
    departure: String,
    energy_kwh: String,
}

pub fn parse_sessions(path: impl AsRef<Path>) -> Result<ParsedSessions> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sessions_from_reader(file)
}

/// Parses session CSV rows. Rows breaking an invariant go to the reject
/// report; more than half the rows rejected is a format error.
pub fn parse_sessions_from_reader<R: Read>(reader: R) -> Result<ParsedSessions> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["session_id", "arrival", "departure", "energy_kwh"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Format(format!("session csv is missing column `{required}`")));
        }
    }

    let mut out = ParsedSessions::default();
    let mut total = 0usize;
    for record in rdr.records() {
        total += 1;
        let record = record?;
        let raw: RawRow = match record.deserialize(Some(&headers)) {
            Ok(r) => r,
            Err(e) => {
                let get = |i: usize| record.get(i).unwrap_or_default().to_string();
                out.rejects.push(RejectedRow {
                    session_id: get(0),
                    evse_id: get(1),
                    arrival: get(2),
                    departure: get(3),
                    energy_kwh: get(4),
                    reason: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match convert(&raw) {
            Ok(session) => out.sessions.push(session),
            Err(reason) => out.rejects.push(RejectedRow {
                session_id: raw.session_id,
                evse_id: raw.evse_id,
                arrival: raw.arrival,
                departure: raw.departure,
                energy_kwh: raw.energy_kwh,
                reason,
            }),
        }
    }
    if total > 0 && out.rejects.len() * 2 > total {
        return Err(Error::Format(format!(
            "{} of {} session rows rejected (first: {})",
            out.rejects.len(),
            total,
            out.rejects[0].reason
        )));
    }
    Ok(out)
}

fn convert(raw: &RawRow) -> std::result::Result<ChargingSession, String> {
    let arrival = parse_timestamp(&raw.arrival)?;
    let departure = parse_timestamp(&raw.departure)?;
    let energy_kwh: f64 = raw
        .energy_kwh
        .parse()
        .map_err(|_| format!("energy `{}` is not a number", raw.energy_kwh))?;
    let session = ChargingSession {
        session_id: raw.session_id.clone(),
        evse_id: (!raw.evse_id.is_empty()).then(|| raw.evse_id.clone()),
        arrival,
        departure,
        energy_kwh,
        per_slot_power: None,
    };
    session.validate()?;
    Ok(session)
}

fn parse_timestamp(text: &str) -> std::result::Result<NaiveDateTime, String> {
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(text, fmt).ok())
        .ok_or_else(|| format!("timestamp `{text}` is not ISO-8601"))
}

pub fn write_sessions(path: impl AsRef<Path>, sessions: &[ChargingSession]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    for s in sessions {
        wtr.serialize(OutRow {
            session_id: &s.session_id,
            evse_id: s.evse_id.as_deref().unwrap_or(""),
            arrival: s.arrival.format(WRITE_FORMAT).to_string(),
            departure: s.departure.format(WRITE_FORMAT).to_string(),
            energy_kwh: format!("{:.4}", s.energy_kwh),
        })?;
    }
    if sessions.is_empty() {
        wtr.write_record(["session_id", "evse_id", "arrival", "departure", "energy_kwh"])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_rejects(path: impl AsRef<Path>, rejects: &[RejectedRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    if rejects.is_empty() {
        wtr.write_record(["session_id", "evse_id", "arrival", "departure", "energy_kwh", "reason"])?;
    }
    for r in rejects {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
