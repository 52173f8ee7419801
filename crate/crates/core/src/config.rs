//! Scenario configuration: a flat `key = value` document.
//!
//! ```text
//! # comments start with '#'
//! n_devices = 60
//! mac = pcsma
//! sf_set = {8,9,10}
//! p = 0.25
//! ```
//!
//! Lists use braces. Every key except `n_devices` has a default; unknown or
//! repeated keys are errors.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{ConfigError, Error};
use crate::gateway::DEFAULT_PATHS;
use crate::mac::MacMode;
use crate::phy::{LossParams, RadioParams, SensitivityTable, SpreadingFactor};
use crate::topology::{check_persistence, ClusterGeometry, PersistencePolicy};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Traffic {
    Periodic,
    /// Network-wide Poisson arrivals at `load_g` packets per packet-time, dealt
    /// to devices round-robin. Packet-time is the airtime of the first SF in the set.
    Poisson {
        load_g: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Offsets {
    Zero,
    /// Uniform in `[0, period)` per device, from the traffic stream.
    Uniform,
    /// Device `i` starts at `i * step_s`.
    Staggered {
        step_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub n_devices: usize,
    pub sim_time_s: f64,
    pub mac: MacMode,
    pub traffic: Traffic,
    pub period_set_s: Vec<f64>,
    pub sf_set: Vec<SpreadingFactor>,
    pub persistence: PersistencePolicy,
    pub geometry: ClusterGeometry,
    pub radio: RadioParams,
    pub loss: LossParams,
    pub sensitivity: SensitivityTable,
    pub tx_power_dbm: f64,
    /// Standard deviation of the per-device log-normal shadowing on the gateway link.
    pub shadowing_sigma_db: f64,
    pub gateway_paths: usize,
    /// Co-channel rejection margin; `None` means any same-SF overlap destroys both packets.
    pub capture_margin_db: Option<f64>,
    /// Overrides the per-device half-airtime sensing interval.
    pub sensing_interval_s: Option<f64>,
    pub duty_cycle: bool,
    pub offsets: Offsets,
    pub seed: u64,
    /// Explicit device list replacing generated placement and attributes.
    pub device_file: Option<PathBuf>,
}

fn sf(v: u8) -> SpreadingFactor {
    SpreadingFactor::new(v).expect("valid literal SF")
}

impl RunConfig {
    pub fn new(n_devices: usize) -> Self {
        RunConfig {
            name: "run".into(),
            n_devices,
            sim_time_s: 3600.0,
            mac: MacMode::Pcsma,
            traffic: Traffic::Periodic,
            period_set_s: vec![100.0, 200.0, 300.0, 400.0, 500.0],
            sf_set: vec![sf(8)],
            persistence: PersistencePolicy::Global(1.0),
            geometry: ClusterGeometry::default(),
            radio: RadioParams::default(),
            loss: LossParams::default(),
            sensitivity: SensitivityTable::default(),
            tx_power_dbm: 14.0,
            shadowing_sigma_db: 0.0,
            gateway_paths: DEFAULT_PATHS,
            capture_margin_db: None,
            sensing_interval_s: None,
            duty_cycle: false,
            offsets: Offsets::Uniform,
            seed: 1,
            device_file: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        let non_negative = |x: f64| x >= 0.0 && x.is_finite();
        let bad = |key: &str, msg: &str| Err(ConfigError::new(None, key, msg));
        if self.n_devices == 0 && self.device_file.is_none() {
            return bad("n_devices", "must be at least 1");
        }
        if !positive(self.sim_time_s) {
            return bad("sim_time_s", "must be positive");
        }
        if self.period_set_s.is_empty() {
            return bad("period_set_s", "must not be empty");
        }
        if self.period_set_s.iter().any(|&p| !positive(p)) {
            return bad("period_set_s", "periods must be positive");
        }
        if self.sf_set.is_empty() {
            return bad("sf_set", "must not be empty");
        }
        match &self.persistence {
            PersistencePolicy::Global(p) => {
                if check_persistence(*p).is_err() {
                    return bad("p", "must be in (0, 1]");
                }
            }
            PersistencePolicy::PerDevice(ps) => {
                if ps.iter().any(|&p| check_persistence(p).is_err()) {
                    return bad("p", "every value must be in (0, 1]");
                }
                if self.device_file.is_none() && ps.len() != self.n_devices {
                    return bad("p", "per-device list must have n_devices entries");
                }
            }
        }
        if self.geometry.n_areas < 1 {
            return bad("n_areas", "must be at least 1");
        }
        if !non_negative(self.geometry.cluster_radius_m) {
            return bad("cluster_radius_m", "must be non-negative");
        }
        if !non_negative(self.geometry.ring_radius_m) {
            return bad("ring_radius_m", "must be non-negative");
        }
        if self.gateway_paths < 1 {
            return bad("gateway_paths", "must be at least 1");
        }
        if !non_negative(self.shadowing_sigma_db) {
            return bad("shadowing_sigma_db", "must be non-negative");
        }
        if let Some(m) = self.capture_margin_db {
            if !non_negative(m) {
                return bad("capture_margin_db", "must be non-negative");
            }
        }
        if let Some(s) = self.sensing_interval_s {
            if !positive(s) {
                return bad("sensing_interval_s", "must be positive");
            }
        }
        if let Traffic::Poisson { load_g } = self.traffic {
            if !positive(load_g) {
                return bad("poisson_load_g", "must be positive");
            }
        }
        if let Offsets::Staggered { step_s } = self.offsets {
            if !non_negative(step_s) {
                return bad("offset_step_s", "must be non-negative");
            }
        }
        self.radio
            .validate()
            .map_err(|e| ConfigError::new(None, "radio", e.to_string()))?;
        self.loss
            .validate()
            .map_err(|e| ConfigError::new(None, "path_loss", e.to_string()))?;
        self.sensitivity
            .validate()
            .map_err(|e| ConfigError::new(None, "sensitivity", e.to_string()))?;
        Ok(())
    }

    /// Global persistence, or `None` for a per-device table.
    pub fn global_p(&self) -> Option<f64> {
        match self.persistence {
            PersistencePolicy::Global(p) => Some(p),
            PersistencePolicy::PerDevice(_) => None,
        }
    }
}

/// A raw value: scalar text or a brace list of scalars.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Value {
    Scalar(String),
    List(Vec<String>),
}

pub(crate) struct Entry {
    pub line: usize,
    pub key: String,
    pub value: Value,
    /// Value text as written, for keys with their own syntax.
    pub raw: String,
}

/// Splits a document into `key = value` entries, rejecting duplicates.
pub(crate) fn entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::new(Some(line), body, "expected `key = value`"))?;
        let key = key.trim().to_owned();
        if key.is_empty() {
            return Err(ConfigError::new(Some(line), "", "missing key"));
        }
        if !seen.insert(key.clone()) {
            return Err(ConfigError::new(Some(line), key, "duplicate key"));
        }
        let value = value.trim();
        let raw = value.to_owned();
        let value = if let Some(inner) = value.strip_prefix('{') {
            let inner = inner
                .strip_suffix('}')
                .ok_or_else(|| ConfigError::new(Some(line), &key, "unterminated list"))?;
            Value::List(
                inner
                    .split(',')
                    .map(|s| s.trim().to_owned())
                    .filter(|s| !s.is_empty())
                    .collect(),
            )
        } else {
            Value::Scalar(value.to_owned())
        };
        out.push(Entry {
            line,
            key,
            value,
            raw,
        });
    }
    Ok(out)
}

impl Entry {
    pub(crate) fn err(&self, msg: impl Into<String>) -> ConfigError {
        ConfigError::new(Some(self.line), &self.key, msg)
    }

    pub(crate) fn scalar(&self) -> Result<&str, ConfigError> {
        match &self.value {
            Value::Scalar(s) if !s.is_empty() => Ok(s),
            Value::Scalar(_) => Err(self.err("missing value")),
            Value::List(_) => Err(self.err("expected a single value, found a list")),
        }
    }

    pub(crate) fn items(&self) -> Vec<&str> {
        match &self.value {
            Value::Scalar(s) => vec![s.as_str()],
            Value::List(v) => v.iter().map(String::as_str).collect(),
        }
    }

    pub(crate) fn parse_num<T: std::str::FromStr>(&self, s: &str) -> Result<T, ConfigError> {
        s.parse()
            .map_err(|_| self.err(format!("malformed number `{s}`")))
    }

    pub(crate) fn f64(&self) -> Result<f64, ConfigError> {
        let v: f64 = self.parse_num(self.scalar()?)?;
        if !v.is_finite() {
            return Err(self.err("value must be finite"));
        }
        Ok(v)
    }

    pub(crate) fn f64_list(&self) -> Result<Vec<f64>, ConfigError> {
        self.items()
            .into_iter()
            .map(|s| {
                let v: f64 = self.parse_num(s)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.err("value must be finite"))
                }
            })
            .collect()
    }

    pub(crate) fn sf_list(&self) -> Result<Vec<SpreadingFactor>, ConfigError> {
        self.items()
            .into_iter()
            .map(|s| {
                let v: u8 = self.parse_num(s)?;
                SpreadingFactor::new(v).map_err(|e| self.err(e.to_string()))
            })
            .collect()
    }

    fn bool(&self) -> Result<bool, ConfigError> {
        match self.scalar()? {
            "true" | "on" | "yes" | "1" => Ok(true),
            "false" | "off" | "no" | "0" => Ok(false),
            other => Err(self.err(format!("expected a boolean, found `{other}`"))),
        }
    }

    fn table6(&self) -> Result<[f64; 6], ConfigError> {
        let v = self.f64_list()?;
        v.try_into().map_err(|v: Vec<f64>| {
            self.err(format!("expected 6 values (SF7..SF12), found {}", v.len()))
        })
    }
}

pub fn parse_mode(s: &str) -> Option<MacMode> {
    match s {
        "pcsma" | "p-csma" => Some(MacMode::Pcsma),
        "aloha" => Some(MacMode::Aloha),
        _ => None,
    }
}

/// Parses and validates a scenario document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::new(0);
    let mut n_devices_set = false;
    let mut traffic_kind: Option<(usize, String)> = None;
    let mut load_g: Option<f64> = None;
    let mut offsets_kind: Option<(usize, String)> = None;
    let mut offset_step: Option<f64> = None;

    for e in entries(text)? {
        match e.key.as_str() {
            "name" => cfg.name = e.scalar()?.to_owned(),
            "n_devices" => {
                cfg.n_devices = e.parse_num(e.scalar()?)?;
                n_devices_set = true;
            }
            "sim_time_s" => cfg.sim_time_s = e.f64()?,
            "mac" => {
                cfg.mac =
                    parse_mode(e.scalar()?).ok_or_else(|| e.err("expected `pcsma` or `aloha`"))?
            }
            "traffic" => traffic_kind = Some((e.line, e.scalar()?.to_owned())),
            "poisson_load_g" => load_g = Some(e.f64()?),
            "period_set_s" => cfg.period_set_s = e.f64_list()?,
            "sf_set" => cfg.sf_set = e.sf_list()?,
            "p" => {
                let ps = e.f64_list()?;
                if let Some(bad) = ps.iter().find(|p| check_persistence(**p).is_err()) {
                    return Err(e.err(format!("persistence {bad} outside (0, 1]")));
                }
                cfg.persistence = match e.value {
                    Value::Scalar(_) => PersistencePolicy::Global(ps[0]),
                    Value::List(_) => PersistencePolicy::PerDevice(ps),
                };
            }
            "n_areas" => {
                let n: usize = e.parse_num(e.scalar()?)?;
                if n < 1 {
                    return Err(e.err("must be at least 1"));
                }
                cfg.geometry.n_areas = n;
            }
            "cluster_radius_m" => cfg.geometry.cluster_radius_m = e.f64()?,
            "ring_radius_m" => cfg.geometry.ring_radius_m = e.f64()?,
            "seed" => cfg.seed = e.parse_num(e.scalar()?)?,
            "offsets" => offsets_kind = Some((e.line, e.scalar()?.to_owned())),
            "offset_step_s" => offset_step = Some(e.f64()?),
            "tx_power_dbm" => cfg.tx_power_dbm = e.f64()?,
            "bandwidth_hz" => cfg.radio.bandwidth_hz = e.f64()?,
            "coding_rate" => cfg.radio.coding_rate_index = e.parse_num(e.scalar()?)?,
            "preamble_symbols" => cfg.radio.preamble_symbols = e.parse_num(e.scalar()?)?,
            "explicit_header" => cfg.radio.explicit_header = e.bool()?,
            "crc" => cfg.radio.crc = e.bool()?,
            "low_data_rate_optimize" => {
                cfg.radio.low_data_rate_optimize = match e.scalar()? {
                    "auto" => None,
                    _ => Some(e.bool()?),
                }
            }
            "payload_bytes" => cfg.radio.payload_bytes = e.parse_num(e.scalar()?)?,
            "carrier_hz" => cfg.radio.carrier_hz = e.f64()?,
            "reference_loss_db" => cfg.loss.reference_loss_db = e.f64()?,
            "reference_distance_m" => cfg.loss.reference_distance_m = e.f64()?,
            "path_loss_exponent" => cfg.loss.exponent = e.f64()?,
            "shadowing_sigma_db" => cfg.shadowing_sigma_db = e.f64()?,
            "gateway_sensitivity_dbm" => cfg.sensitivity.gateway = e.table6()?,
            "device_sensitivity_dbm" => cfg.sensitivity.end_device = e.table6()?,
            "gateway_paths" => cfg.gateway_paths = e.parse_num(e.scalar()?)?,
            "capture_margin_db" => {
                cfg.capture_margin_db = match e.scalar()? {
                    "off" | "none" => None,
                    _ => Some(e.f64()?),
                }
            }
            "sensing_interval_s" => cfg.sensing_interval_s = Some(e.f64()?),
            "duty_cycle" => cfg.duty_cycle = e.bool()?,
            "device_file" => cfg.device_file = Some(PathBuf::from(e.scalar()?)),
            _ => return Err(e.err("unknown key")),
        }
    }

    if !n_devices_set && cfg.device_file.is_none() {
        return Err(ConfigError::new(None, "n_devices", "required key missing"));
    }
    cfg.traffic = match traffic_kind {
        None => Traffic::Periodic,
        Some((_, k)) if k == "periodic" => Traffic::Periodic,
        Some((line, k)) if k == "poisson" => Traffic::Poisson {
            load_g: load_g.ok_or_else(|| {
                ConfigError::new(
                    Some(line),
                    "poisson_load_g",
                    "required with traffic = poisson",
                )
            })?,
        },
        Some((line, k)) => {
            return Err(ConfigError::new(
                Some(line),
                "traffic",
                format!("expected `periodic` or `poisson`, found `{k}`"),
            ))
        }
    };
    cfg.offsets = match offsets_kind {
        None => Offsets::Uniform,
        Some((_, k)) if k == "zero" => Offsets::Zero,
        Some((_, k)) if k == "uniform" => Offsets::Uniform,
        Some((line, k)) if k == "staggered" => Offsets::Staggered {
            step_s: offset_step.ok_or_else(|| {
                ConfigError::new(
                    Some(line),
                    "offset_step_s",
                    "required with offsets = staggered",
                )
            })?,
        },
        Some((line, k)) => {
            return Err(ConfigError::new(
                Some(line),
                "offsets",
                format!("expected `zero`, `uniform` or `staggered`, found `{k}`"),
            ))
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a config file. A relative `device_file` is resolved against the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    if let (Some(dev), Some(dir)) = (cfg.device_file.as_mut(), path.parent()) {
        if dev.is_relative() {
            *dev = dir.join(&*dev);
        }
    }
    Ok(cfg)
}
