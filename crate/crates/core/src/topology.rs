//! Device placement, attribute assignment and the vicinity (non-hidden) matrix.

use std::f64::consts::PI;

use crate::error::{ConfigError, PersistenceError, TopologyError};
use crate::phy::{detect_range_m, LossParams, Role, SensitivityTable, SpreadingFactor};
use crate::sim::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub const ORIGIN: Position = Position {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Position { x, y, z }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn distance_to_gateway(&self) -> f64 {
        self.distance(&Position::ORIGIN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub id: usize,
    pub position: Position,
    pub sf: SpreadingFactor,
    pub tx_power_dbm: f64,
    pub period_s: f64,
    pub persistence: f64,
    /// Hidden-area (cluster) index.
    pub area: usize,
}

pub fn check_persistence(p: f64) -> Result<f64, PersistenceError> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(PersistenceError::OutOfRange(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PersistencePolicy {
    Global(f64),
    PerDevice(Vec<f64>),
}

/// SFs and periods are dealt round-robin by device index.
pub fn assign_attributes(
    n_devices: usize,
    sf_set: &[SpreadingFactor],
    period_set_s: &[f64],
    tx_power_dbm: f64,
    policy: &PersistencePolicy,
) -> Result<Vec<DeviceSpec>, TopologyError> {
    if n_devices == 0 {
        return Err(TopologyError::NoDevices);
    }
    if sf_set.is_empty() {
        return Err(TopologyError::EmptySet("sf_set"));
    }
    if period_set_s.is_empty() {
        return Err(TopologyError::EmptySet("period_set_s"));
    }
    (0..n_devices)
        .map(|id| {
            let persistence = match policy {
                PersistencePolicy::Global(p) => *p,
                // a short list is cycled like the other attribute sets
                PersistencePolicy::PerDevice(ps) if !ps.is_empty() => ps[id % ps.len()],
                PersistencePolicy::PerDevice(_) => return Err(TopologyError::EmptySet("p")),
            };
            Ok(DeviceSpec {
                id,
                position: Position::ORIGIN,
                sf: sf_set[id % sf_set.len()],
                tx_power_dbm,
                period_s: period_set_s[id % period_set_s.len()],
                persistence: check_persistence(persistence)?,
                area: 0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterGeometry {
    pub n_areas: usize,
    pub cluster_radius_m: f64,
    /// Distance of cluster centres from the gateway. Unused with a single area,
    /// whose cluster is centred on the gateway.
    pub ring_radius_m: f64,
}

impl Default for ClusterGeometry {
    fn default() -> Self {
        ClusterGeometry {
            n_areas: 1,
            cluster_radius_m: 500.0,
            ring_radius_m: 4000.0,
        }
    }
}

/// Ranges a placement has to respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeBounds {
    /// Largest end-device detect range over the SFs in use.
    pub device_range_m: f64,
    /// Smallest gateway detect range over the SFs in use.
    pub gateway_range_m: f64,
}

impl RangeBounds {
    pub fn for_sfs(
        sfs: &[SpreadingFactor],
        tx_power_dbm: f64,
        loss: &LossParams,
        table: &SensitivityTable,
    ) -> Self {
        let range = |sf, role| detect_range_m(sf, role, tx_power_dbm, loss, table);
        RangeBounds {
            device_range_m: sfs
                .iter()
                .map(|&sf| range(sf, Role::EndDevice))
                .fold(0.0, f64::max),
            gateway_range_m: sfs
                .iter()
                .map(|&sf| range(sf, Role::Gateway))
                .fold(f64::INFINITY, f64::min),
        }
    }
}

impl ClusterGeometry {
    pub fn center(&self, area: usize) -> Position {
        if self.n_areas == 1 {
            return Position::ORIGIN;
        }
        let angle = 2.0 * PI * area as f64 / self.n_areas as f64;
        Position::new(
            self.ring_radius_m * angle.cos(),
            self.ring_radius_m * angle.sin(),
            0.0,
        )
    }

    /// Lower bound on the distance between members of different clusters.
    pub fn min_inter_cluster_gap_m(&self) -> f64 {
        if self.n_areas < 2 {
            return f64::INFINITY;
        }
        let chord = 2.0 * self.ring_radius_m * (PI / self.n_areas as f64).sin();
        chord - 2.0 * self.cluster_radius_m
    }

    /// Furthest any member can be from the gateway.
    pub fn max_reach_m(&self) -> f64 {
        if self.n_areas == 1 {
            self.cluster_radius_m
        } else {
            self.ring_radius_m + self.cluster_radius_m
        }
    }

    pub fn check(&self, bounds: &RangeBounds) -> Result<(), TopologyError> {
        if self.n_areas == 0 {
            return Err(TopologyError::NoAreas);
        }
        let reach = self.max_reach_m();
        if reach > bounds.gateway_range_m {
            return Err(TopologyError::OutOfGatewayRange {
                max_reach_m: reach,
                gateway_range_m: bounds.gateway_range_m,
            });
        }
        let gap = self.min_inter_cluster_gap_m();
        if self.n_areas >= 2 && gap <= bounds.device_range_m {
            return Err(TopologyError::ClustersNotHidden {
                min_gap_m: gap,
                device_range_m: bounds.device_range_m,
            });
        }
        Ok(())
    }

    /// Even split; the first `n % n_areas` clusters take one extra device.
    pub fn cluster_sizes(&self, n_devices: usize) -> Vec<usize> {
        let base = n_devices / self.n_areas;
        let extra = n_devices % self.n_areas;
        (0..self.n_areas)
            .map(|a| base + usize::from(a < extra))
            .collect()
    }
}

/// Places devices in contiguous index blocks, one block per cluster, each member
/// uniform in the cluster disc. Returns `(position, area)` per device.
pub fn place_clusters(
    n_devices: usize,
    geom: &ClusterGeometry,
    bounds: &RangeBounds,
    rng: &mut RngStream,
) -> Result<Vec<(Position, usize)>, TopologyError> {
    if n_devices == 0 {
        return Err(TopologyError::NoDevices);
    }
    geom.check(bounds)?;
    let mut out = Vec::with_capacity(n_devices);
    for (area, size) in geom.cluster_sizes(n_devices).into_iter().enumerate() {
        let c = geom.center(area);
        for _ in 0..size {
            let r = geom.cluster_radius_m * rng.next_uniform().sqrt();
            let theta = 2.0 * PI * rng.next_uniform();
            out.push((
                Position::new(c.x + r * theta.cos(), c.y + r * theta.sin(), c.z),
                area,
            ));
        }
    }
    Ok(out)
}

/// Entry `(i, j)` is true iff device `i` can detect transmissions of device `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VicinityMatrix {
    n: usize,
    cells: Vec<bool>,
    audible: Vec<Vec<usize>>,
}

impl VicinityMatrix {
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut cells = vec![false; n * n];
        let mut audible = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && f(i, j) {
                    cells[i * n + j] = true;
                    audible[i].push(j);
                }
            }
        }
        VicinityMatrix { n, cells, audible }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.n + j]
    }

    /// Devices `i` can hear.
    pub fn audible(&self, i: usize) -> &[usize] {
        &self.audible[i]
    }

    pub fn mutually_visible(&self, i: usize, j: usize) -> bool {
        self.get(i, j) && self.get(j, i)
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Listener `i` detects `j` when their distance is within `j`'s end-device detect range.
pub fn build_vicinity(
    devices: &[DeviceSpec],
    loss: &LossParams,
    table: &SensitivityTable,
) -> VicinityMatrix {
    let ranges: Vec<f64> = devices
        .iter()
        .map(|d| detect_range_m(d.sf, Role::EndDevice, d.tx_power_dbm, loss, table))
        .collect();
    VicinityMatrix::from_fn(devices.len(), |i, j| {
        devices[i].position.distance(&devices[j].position) <= ranges[j]
    })
}

/// Parses a device list: one device per line, `id, x, y, z, sf, period_s, p`,
/// separated by commas and/or whitespace. Blank lines and `#` comments are
/// ignored. Ids must cover `0..N` exactly once.
pub fn parse_device_list(text: &str, tx_power_dbm: f64) -> Result<Vec<DeviceSpec>, ConfigError> {
    let mut devices: Vec<DeviceSpec> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let err = |key: &str, msg: String| ConfigError::new(Some(line_no), key, msg);
        if fields.len() != 7 {
            return Err(err(
                "device",
                format!(
                    "expected 7 fields (id, x, y, z, sf, period_s, p), found {}",
                    fields.len()
                ),
            ));
        }
        let num = |i: usize, key: &str| -> Result<f64, ConfigError> {
            fields[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(key, format!("malformed number `{}`", fields[i])))
        };
        let id: usize = fields[0]
            .parse()
            .map_err(|_| err("id", format!("malformed id `{}`", fields[0])))?;
        let sf = fields[4]
            .parse::<u8>()
            .ok()
            .and_then(|v| SpreadingFactor::new(v).ok())
            .ok_or_else(|| err("sf", format!("invalid spreading factor `{}`", fields[4])))?;
        let period_s = num(5, "period_s")?;
        if period_s <= 0.0 {
            return Err(err("period_s", "period must be positive".into()));
        }
        let p = num(6, "p")?;
        check_persistence(p).map_err(|e| err("p", e.to_string()))?;
        devices.push(DeviceSpec {
            id,
            position: Position::new(num(1, "x")?, num(2, "y")?, num(3, "z")?),
            sf,
            tx_power_dbm,
            period_s,
            persistence: p,
            area: 0,
        });
    }
    if devices.is_empty() {
        return Err(ConfigError::new(None, "device_file", "no devices listed"));
    }
    devices.sort_by_key(|d| d.id);
    for (expected, d) in devices.iter().enumerate() {
        if d.id != expected {
            return Err(ConfigError::new(
                None,
                "device_file",
                format!(
                    "device ids must be 0..{} without gaps or repeats",
                    devices.len()
                ),
            ));
        }
    }
    Ok(devices)
}
