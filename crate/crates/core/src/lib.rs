//! Discrete-event simulator of single-gateway LoRa networks with a
//! p-persistent CSMA MAC layer and a pure-ALOHA baseline.
//!
//! Devices sense the channel through a precomputed vicinity matrix, so devices
//! out of each other's detect range remain hidden and can still collide at the
//! gateway. A device that finds the channel occupied backs off for half a
//! packet airtime and then reclaims it with its persistence probability `p`.
//!
//! - [`sim`]: event queue, virtual clock and seeded random streams
//! - [`phy`]: airtime, path loss, sensitivity and detect ranges
//! - [`topology`]: placement, attribute assignment, vicinity matrix
//! - [`mac`]: channel-state array, persistence table, device state machine
//! - [`gateway`]: demodulation paths and reception outcomes
//! - [`config`], [`scenario`], [`metrics`], [`sweep`]: runs, PRR and CSV output

pub mod config;
pub mod error;
pub mod gateway;
pub mod mac;
pub mod metrics;
pub mod phy;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod topology;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{Error, Result};
pub use metrics::{compute_prr, write_csv, Counters, ResultRow};
pub use scenario::{run_scenario, RunResult, TxRecord};
pub use sweep::{aloha_validation, parse_grid, run_sweep, Grid};
