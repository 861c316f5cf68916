use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::ingest::SynthConfig;
use crate::optimizer::SolverOptions;
use crate::scenario::DEFAULT_SCENARIOS;
use crate::units::{DEFAULT_EVSE_COUNT, DEFAULT_P_MAX_KW};

/// Forced initial charge rate as a fraction of `p_max_kw`.
///
/// Written in config files as `"none"`, `"1"`, `"1/2"`, `"1/4"`, `"p_max"`
/// or a bare number.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForcedRate(pub Option<f64>);

impl ForcedRate {
    pub const NONE: ForcedRate = ForcedRate(None);

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let t = text.trim().to_ascii_lowercase();
        let value = match t.as_str() {
            "none" | "no" | "" => return Ok(Self(None)),
            "p_max" | "pmax" | "full" => 1.0,
            _ => match t.split_once('/') {
                Some((n, d)) => {
                    let n: f64 = n.trim().parse().map_err(|_| format!("cannot parse `{text}`"))?;
                    let d: f64 = d.trim().parse().map_err(|_| format!("cannot parse `{text}`"))?;
                    n / d
                }
                None => t.parse().map_err(|_| format!("cannot parse `{text}`"))?,
            },
        };
        Ok(Self(Some(value)))
    }

    pub fn fraction(self) -> Option<f64> {
        self.0
    }
}

impl fmt::Display for ForcedRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            None => write!(f, "none"),
            Some(1.0) => write!(f, "1"),
            Some(0.5) => write!(f, "1/2"),
            Some(0.25) => write!(f, "1/4"),
            Some(x) => write!(f, "{x}"),
        }
    }
}

impl Serialize for ForcedRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ForcedRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(Self(Some(x))),
            Raw::Text(s) => Self::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

fn de_date<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<NaiveDate, D::Error> {
    let v = toml::Value::deserialize(d)?;
    let text = match v {
        toml::Value::String(s) => s,
        toml::Value::Datetime(dt) => dt.to_string(),
        other => return Err(serde::de::Error::custom(format!("expected a date, got {other}"))),
    };
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d").map_err(serde::de::Error::custom)
}

fn ser_date<S: Serializer>(d: &NaiveDate, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&d.format("%Y-%m-%d").to_string())
}

/// Synthetic trace parameters for a run without a recorded trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    #[serde(default)]
    pub generator: SynthConfig,
}

/// One test case: the Table II columns plus the run's plumbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub label: String,
    pub w1: f64,
    pub w2: f64,
    pub transformer_kw: f64,
    #[serde(default)]
    pub forced_initial: ForcedRate,
    #[serde(default = "default_scenarios")]
    pub n_scenarios: usize,
    #[serde(default)]
    pub e_del_min: f64,
    #[serde(default = "default_true")]
    pub relax_del_min: bool,
    #[serde(deserialize_with = "de_date", serialize_with = "ser_date")]
    pub start: NaiveDate,
    #[serde(deserialize_with = "de_date", serialize_with = "ser_date")]
    pub end: NaiveDate,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tariff: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "default_evse_count")]
    pub evse_count: usize,
    #[serde(default = "default_p_max")]
    pub p_max_kw: f64,
    #[serde(default = "default_stay_cv")]
    pub stay_cv: f64,
    #[serde(default)]
    pub e_old_seed_kw: f64,
    #[serde(default = "default_true")]
    pub detect_full: bool,
    /// Stop at the first infeasible step instead of finishing the range.
    #[serde(default)]
    pub stop_on_infeasible: bool,
}

fn default_scenarios() -> usize {
    DEFAULT_SCENARIOS
}
fn default_true() -> bool {
    true
}
fn default_evse_count() -> usize {
    DEFAULT_EVSE_COUNT
}
fn default_p_max() -> f64 {
    DEFAULT_P_MAX_KW
}
fn default_stay_cv() -> f64 {
    0.4
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            label: String::new(),
            w1: 10.0,
            w2: 1.0,
            transformer_kw: 150.0,
            forced_initial: ForcedRate::NONE,
            n_scenarios: DEFAULT_SCENARIOS,
            e_del_min: 0.0,
            relax_del_min: true,
            start: NaiveDate::from_ymd_opt(2019, 6, 17).unwrap(),
            end: NaiveDate::from_ymd_opt(2019, 6, 29).unwrap(),
            rng_seed: 0,
            tariff: None,
            model: None,
            trace: None,
            synthetic: None,
            evse_count: DEFAULT_EVSE_COUNT,
            p_max_kw: DEFAULT_P_MAX_KW,
            stay_cv: 0.4,
            e_old_seed_kw: 0.0,
            detect_full: true,
            stop_on_infeasible: false,
        }
    }
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file. Relative tariff, model and trace paths are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SimConfig = toml::from_str(&text)
            .map_err(|e| Error::Format(format!("config {}: {e}", path.display())))?;
        if cfg.label.is_empty() {
            cfg.label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.tariff, &mut cfg.model, &mut cfg.trace].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be finite and non-negative, got {v}")))
            }
        };
        finite_nonneg("w1", self.w1)?;
        finite_nonneg("w2", self.w2)?;
        finite_nonneg("e_del_min", self.e_del_min)?;
        finite_nonneg("e_old_seed_kw", self.e_old_seed_kw)?;
        finite_nonneg("stay_cv", self.stay_cv)?;
        if !(self.transformer_kw.is_finite() && self.transformer_kw > 0.0) {
            return Err(Error::config("transformer_kw", format!("must be positive, got {}", self.transformer_kw)));
        }
        if let Some(r) = self.forced_initial.0 {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config("forced_initial", format!("fraction must lie in (0, 1], got {r}")));
            }
        }
        if self.n_scenarios == 0 {
            return Err(Error::config("n_scenarios", "must be at least 1"));
        }
        if self.evse_count == 0 {
            return Err(Error::config("evse_count", "must be at least 1"));
        }
        if !(self.p_max_kw.is_finite() && self.p_max_kw > 0.0) {
            return Err(Error::config("p_max_kw", format!("must be positive, got {}", self.p_max_kw)));
        }
        if self.end < self.start {
            return Err(Error::config("end", format!("{} is before start {}", self.end, self.start)));
        }
        if self.trace.is_some() && self.synthetic.is_some() {
            return Err(Error::config("trace", "give either `trace` or `[synthetic]`, not both"));
        }
        Ok(())
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            w1: self.w1,
            w2: self.w2,
            transformer_kw: self.transformer_kw,
            forced_initial: self.forced_initial.0,
            n_scenarios: self.n_scenarios,
            e_del_min: self.e_del_min,
            relax_del_min: self.relax_del_min,
            evse_count: self.evse_count,
            p_max_kw: self.p_max_kw,
            stay_cv: self.stay_cv,
            e_old_seed_kw: self.e_old_seed_kw,
            detect_full: self.detect_full,
            solver: SolverOptions::default(),
        }
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> {
        self.start.iter_days().take_while({
            let end = self.end;
            move |d| *d <= end
        })
    }
}
