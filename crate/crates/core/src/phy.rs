//! LoRa PHY arithmetic: airtime, log-distance path loss, sensitivities and
//! detect ranges.

use std::fmt;

use crate::error::PhyError;
use crate::sim::SimTime;

/// LoRa spreading factor, 7 through 12.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: u8 = 7;
    pub const MAX: u8 = 12;

    pub fn new(sf: u8) -> Result<Self, PhyError> {
        if (Self::MIN..=Self::MAX).contains(&sf) {
            Ok(SpreadingFactor(sf))
        } else {
            Err(PhyError::SpreadingFactor(sf))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    fn index(self) -> usize {
        usize::from(self.0 - Self::MIN)
    }

    pub fn all() -> impl Iterator<Item = SpreadingFactor> {
        (Self::MIN..=Self::MAX).map(SpreadingFactor)
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = PhyError;

    fn try_from(sf: u8) -> Result<Self, PhyError> {
        SpreadingFactor::new(sf)
    }
}

impl fmt::Display for SpreadingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub bandwidth_hz: f64,
    /// 1..=4, meaning coding rate 4/5..4/8.
    pub coding_rate_index: u8,
    pub preamble_symbols: u32,
    pub explicit_header: bool,
    pub crc: bool,
    /// `None` enables low data rate optimisation automatically for SF11 and SF12.
    pub low_data_rate_optimize: Option<bool>,
    pub payload_bytes: u32,
    pub carrier_hz: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        RadioParams {
            bandwidth_hz: 125_000.0,
            coding_rate_index: 1,
            preamble_symbols: 8,
            explicit_header: true,
            crc: true,
            low_data_rate_optimize: None,
            payload_bytes: 19,
            carrier_hz: 868.1e6,
        }
    }
}

impl RadioParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.bandwidth_hz.is_nan() || self.bandwidth_hz <= 0.0 {
            return Err(PhyError::Radio("bandwidth must be positive"));
        }
        if !(1..=4).contains(&self.coding_rate_index) {
            return Err(PhyError::Radio("coding rate index must be in 1..=4"));
        }
        if self.payload_bytes < 1 {
            return Err(PhyError::Radio("payload must be at least one byte"));
        }
        Ok(())
    }

    pub fn ldro(&self, sf: SpreadingFactor) -> bool {
        self.low_data_rate_optimize.unwrap_or(sf.value() >= 11)
    }
}

/// Number of payload symbols, header included.
fn payload_symbols(sf: SpreadingFactor, p: &RadioParams) -> u64 {
    let sf = i64::from(sf.value());
    let de = i64::from(p.ldro(SpreadingFactor(sf as u8)));
    let ih = i64::from(!p.explicit_header);
    let crc = i64::from(p.crc);
    let numerator = 8 * i64::from(p.payload_bytes) - 4 * sf + 28 + 16 * crc - 20 * ih;
    let denominator = 4 * (sf - 2 * de);
    // ceil for positive numerators; negative ones clamp to zero below.
    let blocks = if numerator > 0 {
        (numerator + denominator - 1) / denominator
    } else {
        0
    };
    8 + (blocks * (i64::from(p.coding_rate_index) + 4)) as u64
}

/// Time on air in seconds.
pub fn time_on_air(sf: u8, params: &RadioParams) -> Result<f64, PhyError> {
    let sf = SpreadingFactor::new(sf)?;
    params.validate()?;
    Ok(time_on_air_sf(sf, params))
}

pub fn time_on_air_sf(sf: SpreadingFactor, params: &RadioParams) -> f64 {
    let symbol_s = f64::from(1u32 << sf.value()) / params.bandwidth_hz;
    let preamble = (f64::from(params.preamble_symbols) + 4.25) * symbol_s;
    preamble + payload_symbols(sf, params) as f64 * symbol_s
}

/// Airtime rounded to the simulator's microsecond clock.
pub fn airtime(sf: SpreadingFactor, params: &RadioParams) -> SimTime {
    SimTime::from_secs(time_on_air_sf(sf, params))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub reference_loss_db: f64,
    pub reference_distance_m: f64,
    pub exponent: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            reference_loss_db: 7.7,
            reference_distance_m: 1.0,
            exponent: 3.76,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.exponent.is_nan() || self.exponent <= 0.0 {
            return Err(PhyError::Radio("path loss exponent must be positive"));
        }
        if self.reference_distance_m.is_nan() || self.reference_distance_m <= 0.0 {
            return Err(PhyError::Radio("reference distance must be positive"));
        }
        Ok(())
    }
}

/// Log-distance path loss. Distances below the reference distance are clamped to it.
pub fn path_loss_db(distance_m: f64, loss: &LossParams) -> f64 {
    let d = distance_m.max(loss.reference_distance_m);
    loss.reference_loss_db + 10.0 * loss.exponent * (d / loss.reference_distance_m).log10()
}

pub fn received_power_dbm(tx_power_dbm: f64, distance_m: f64, loss: &LossParams) -> f64 {
    tx_power_dbm - path_loss_db(distance_m, loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    EndDevice,
    Gateway,
}

/// Per-SF sensitivity in dBm, index 0 = SF7.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub end_device: [f64; 6],
    pub gateway: [f64; 6],
}

impl Default for SensitivityTable {
    fn default() -> Self {
        SensitivityTable {
            end_device: [-124.0, -127.0, -130.0, -133.0, -135.0, -137.0],
            gateway: [-130.0, -132.5, -135.0, -137.5, -140.0, -142.5],
        }
    }
}

impl SensitivityTable {
    pub fn get(&self, sf: SpreadingFactor, role: Role) -> f64 {
        match role {
            Role::EndDevice => self.end_device[sf.index()],
            Role::Gateway => self.gateway[sf.index()],
        }
    }

    /// Rows must be strictly decreasing in SF and the gateway row no less sensitive
    /// than the end-device row.
    pub fn validate(&self) -> Result<(), PhyError> {
        for row in [&self.end_device, &self.gateway] {
            if row
                .windows(2)
                .any(|w| w[1] >= w[0] || w[0].is_nan() || w[1].is_nan())
            {
                return Err(PhyError::Radio(
                    "sensitivity must strictly decrease as SF increases",
                ));
            }
        }
        if self
            .gateway
            .iter()
            .zip(&self.end_device)
            .any(|(g, d)| g > d || g.is_nan() || d.is_nan())
        {
            return Err(PhyError::Radio(
                "gateway sensitivity must not exceed end-device sensitivity",
            ));
        }
        Ok(())
    }
}

/// `prx >= sensitivity`; a signal exactly at the threshold is detected.
pub fn above_sensitivity(
    prx_dbm: f64,
    sf: SpreadingFactor,
    role: Role,
    table: &SensitivityTable,
) -> bool {
    prx_dbm >= table.get(sf, role)
}

/// Distance at which the received power falls to the sensitivity of `role` for `sf`.
///
/// Returns the reference distance when the link budget does not cover the
/// reference loss.
pub fn detect_range_m(
    sf: SpreadingFactor,
    role: Role,
    tx_power_dbm: f64,
    loss: &LossParams,
    table: &SensitivityTable,
) -> f64 {
    let budget = tx_power_dbm - loss.reference_loss_db - table.get(sf, role);
    if budget <= 0.0 {
        return loss.reference_distance_m;
    }
    loss.reference_distance_m * 10f64.powf(budget / (10.0 * loss.exponent))
}
