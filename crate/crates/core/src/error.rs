use std::path::PathBuf;

use thiserror::Error;

use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("cannot schedule an event at {at} s, clock is already at {now} s")]
    InPast { at: SimTime, now: SimTime },
}

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("invalid radio parameter: {0}")]
    Radio(&'static str),
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("device {0} is already booked")]
    AlreadyBooked(usize),
    #[error("device {0} is not booked")]
    NotBooked(usize),
    #[error("device index {0} out of range")]
    UnknownDevice(usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum PersistenceError {
    #[error("persistence {0} outside (0, 1]")]
    OutOfRange(f64),
    #[error("device index {0} out of range")]
    UnknownDevice(usize),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("packet {0} is not known to the gateway")]
    UnknownPacket(u64),
    #[error("packet {0} already registered")]
    DuplicatePacket(u64),
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("n_devices must be at least 1")]
    NoDevices,
    #[error("n_areas must be at least 1")]
    NoAreas,
    #[error("{0} must not be empty")]
    EmptySet(&'static str),
    #[error(
        "clusters not mutually hidden: closest members of adjacent clusters are {min_gap_m:.1} m \
         apart but end-device detect range reaches {device_range_m:.1} m \
         (increase ring_radius_m or decrease cluster_radius_m)"
    )]
    ClustersNotHidden { min_gap_m: f64, device_range_m: f64 },
    #[error(
        "cluster members up to {max_reach_m:.1} m from the gateway exceed the gateway detect \
         range of {gateway_range_m:.1} m (decrease ring_radius_m or cluster_radius_m)"
    )]
    OutOfGatewayRange {
        max_reach_m: f64,
        gateway_range_m: f64,
    },
    #[error(transparent)]
    Persistence(#[from] PersistenceError),
    #[error(transparent)]
    Phy(#[from] PhyError),
}

/// Configuration parse or validation failure, with the offending line and key when known.
#[derive(Debug, Error, PartialEq)]
#[error("{}{}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), key)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(line: Option<usize>, key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            line,
            key: key.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("inconsistent counters: {0}")]
    Inconsistent(String),
}

/// Top-level error for scenario runs, sweeps and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
