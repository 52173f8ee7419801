//! Parameter sweeps over device count, persistence, SF mix and hidden areas,
//! and the pure-ALOHA throughput check.

use std::io::Write;

use rayon::prelude::*;

use crate::config::{entries, RunConfig, Traffic};
use crate::error::{ConfigError, Error};
use crate::mac::MacMode;
use crate::metrics::{compute_prr, join_list, mean_std, ResultRow, RowKind};
use crate::phy::SpreadingFactor;
use crate::scenario::{airtime_of_first_sf, run_scenario};
use crate::topology::PersistencePolicy;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub device_counts: Vec<usize>,
    pub p_values: Vec<f64>,
    pub sf_sets: Vec<Vec<SpreadingFactor>>,
    pub n_areas_values: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.device_counts.len()
            * self.p_values.len()
            * self.sf_sets.len()
            * self.n_areas_values.len()
    }

    pub fn runs(&self) -> usize {
        self.cells() * self.seeds.len()
    }

    fn check(&self) -> Result<(), ConfigError> {
        let empty = |key: &str| Err(ConfigError::new(None, key, "must not be empty"));
        if self.device_counts.is_empty() {
            return empty("device_counts");
        }
        if self.p_values.is_empty() {
            return empty("p_values");
        }
        if self.sf_sets.is_empty() || self.sf_sets.iter().any(Vec::is_empty) {
            return empty("sf_sets");
        }
        if self.n_areas_values.is_empty() {
            return empty("n_areas_values");
        }
        if self.seeds.is_empty() {
            return empty("seeds");
        }
        if self.device_counts.contains(&0) {
            return Err(ConfigError::new(
                None,
                "device_counts",
                "counts must be at least 1",
            ));
        }
        if self.n_areas_values.contains(&0) {
            return Err(ConfigError::new(
                None,
                "n_areas_values",
                "must be at least 1",
            ));
        }
        if self.p_values.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(ConfigError::new(
                None,
                "p_values",
                "values must be in (0, 1]",
            ));
        }
        Ok(())
    }
}

/// Parses a grid document:
///
/// ```text
/// device_counts = {20, 40, 60, 80}
/// p_values = {0.25, 0.5, 0.75, 1.0}
/// sf_sets = {8}, {8,9,10}
/// n_areas_values = {1, 2, 3}
/// seeds = 1..=10
/// ```
///
/// `seeds` also accepts a brace list or an exclusive `a..b` range.
pub fn parse_grid(text: &str) -> Result<Grid, ConfigError> {
    let mut device_counts = None;
    let mut p_values = None;
    let mut sf_sets = None;
    let mut n_areas_values = None;
    let mut seeds = None;
    for e in entries(text)? {
        match e.key.as_str() {
            "device_counts" => {
                device_counts = Some(
                    e.items()
                        .into_iter()
                        .map(|s| e.parse_num(s))
                        .collect::<Result<Vec<usize>, _>>()?,
                )
            }
            "p_values" => p_values = Some(e.f64_list()?),
            "n_areas_values" => {
                n_areas_values = Some(
                    e.items()
                        .into_iter()
                        .map(|s| e.parse_num(s))
                        .collect::<Result<Vec<usize>, _>>()?,
                )
            }
            "sf_sets" => {
                let mut sets = Vec::new();
                let mut rest = e.raw.as_str();
                while let Some(open) = rest.find('{') {
                    let close = rest[open..]
                        .find('}')
                        .ok_or_else(|| e.err("unterminated SF set"))?;
                    let inner = &rest[open + 1..open + close];
                    let set = inner
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            let v: u8 = e.parse_num(s)?;
                            SpreadingFactor::new(v).map_err(|err| e.err(err.to_string()))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    sets.push(set);
                    rest = &rest[open + close + 1..];
                }
                if sets.is_empty() {
                    return Err(e.err("expected one or more `{sf,...}` sets"));
                }
                sf_sets = Some(sets);
            }
            "seeds" => {
                let raw = e.raw.as_str();
                seeds = Some(if let Some((a, b)) = raw.split_once("..") {
                    let start: u64 = e.parse_num(a.trim())?;
                    let (end, inclusive) = match b.strip_prefix('=') {
                        Some(b) => (e.parse_num::<u64>(b.trim())?, true),
                        None => (e.parse_num::<u64>(b.trim())?, false),
                    };
                    if inclusive {
                        (start..=end).collect()
                    } else {
                        (start..end).collect()
                    }
                } else {
                    e.items()
                        .into_iter()
                        .map(|s| e.parse_num(s))
                        .collect::<Result<Vec<u64>, _>>()?
                });
            }
            _ => return Err(e.err("unknown key")),
        }
    }
    let missing = |key: &str| ConfigError::new(None, key, "required key missing");
    let grid = Grid {
        device_counts: device_counts.ok_or_else(|| missing("device_counts"))?,
        p_values: p_values.ok_or_else(|| missing("p_values"))?,
        sf_sets: sf_sets.ok_or_else(|| missing("sf_sets"))?,
        n_areas_values: n_areas_values.ok_or_else(|| missing("n_areas_values"))?,
        seeds: seeds.ok_or_else(|| missing("seeds"))?,
    };
    grid.check()?;
    Ok(grid)
}

/// One grid cell before seeds are applied.
#[derive(Debug, Clone)]
struct Cell {
    label: String,
    cfg: RunConfig,
}

fn cells(base: &RunConfig, grid: &Grid) -> Vec<Cell> {
    let mut out = Vec::with_capacity(grid.cells());
    for &n in &grid.device_counts {
        for &p in &grid.p_values {
            for sfs in &grid.sf_sets {
                for &areas in &grid.n_areas_values {
                    let label = format!(
                        "n{n:03}_p{p:.3}_sf{}_a{areas}",
                        sfs.iter()
                            .map(ToString::to_string)
                            .collect::<Vec<_>>()
                            .join("-")
                    );
                    let mut cfg = base.clone();
                    cfg.name = label.clone();
                    cfg.n_devices = n;
                    cfg.persistence = PersistencePolicy::Global(p);
                    cfg.sf_set = sfs.clone();
                    cfg.geometry.n_areas = areas;
                    out.push(Cell { label, cfg });
                }
            }
        }
    }
    out
}

fn run_row(cfg: &RunConfig) -> Result<ResultRow, Error> {
    let result = run_scenario(cfg)?;
    result.verify()?;
    let prr = compute_prr(&result.counters)?;
    Ok(ResultRow {
        scenario: cfg.name.clone(),
        kind: RowKind::Run(cfg.seed),
        mac: cfg.mac.as_str().into(),
        n_devices: result.topology.devices.len(),
        sf_set: join_list(&cfg.sf_set),
        p: cfg.global_p(),
        n_areas: cfg.geometry.n_areas,
        period_set: join_list(&cfg.period_set_s),
        counters: Some(result.counters),
        prr_generated: prr.generated,
        prr_sent: prr.sent,
    })
}

/// Runs every grid cell for every seed (in parallel), then appends per-cell
/// mean and sample standard deviation rows of the PRR columns.
///
/// The base config supplies everything the grid does not vary. The grid's
/// device counts, SF sets and areas replace generated placement, so a base
/// config with a `device_file` is rejected.
pub fn run_sweep(base: &RunConfig, grid: &Grid) -> Result<Vec<ResultRow>, Error> {
    grid.check()?;
    if base.device_file.is_some() {
        return Err(Error::Usage(
            "sweeps generate placements; remove device_file from the base config".into(),
        ));
    }
    let cells = cells(base, grid);
    let jobs: Vec<RunConfig> = cells
        .iter()
        .flat_map(|c| {
            grid.seeds.iter().map(move |&seed| {
                let mut cfg = c.cfg.clone();
                cfg.seed = seed;
                cfg
            })
        })
        .collect();
    let mut rows = jobs
        .par_iter()
        .map(run_row)
        .collect::<Result<Vec<_>, _>>()?;

    for cell in &cells {
        let runs: Vec<&ResultRow> = rows.iter().filter(|r| r.scenario == cell.label).collect();
        let gen: Vec<f64> = runs.iter().filter_map(|r| r.prr_generated).collect();
        let sent: Vec<f64> = runs.iter().filter_map(|r| r.prr_sent).collect();
        let (g, s) = (mean_std(&gen), mean_std(&sent));
        let template = runs[0].clone();
        for (kind, pick) in [(RowKind::Mean, 0), (RowKind::Std, 1)] {
            let stat = |v: Option<(f64, f64)>| v.map(|(m, sd)| if pick == 0 { m } else { sd });
            rows.push(ResultRow {
                kind,
                counters: None,
                prr_generated: stat(g),
                prr_sent: stat(s),
                ..template.clone()
            });
        }
    }
    rows.sort_by(|a, b| a.scenario.cmp(&b.scenario).then(a.kind.cmp(&b.kind)));
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlohaPoint {
    pub load_g: f64,
    /// Received packets per packet-time.
    pub throughput: f64,
    /// `G * exp(-2G)`.
    pub theory: f64,
    pub sent: u64,
    pub received: u64,
    pub packet_times: f64,
}

pub fn pure_aloha_throughput(g: f64) -> f64 {
    g * (-2.0 * g).exp()
}

/// Default base for the ALOHA check: 100 SF8 devices around the gateway.
pub fn aloha_base() -> RunConfig {
    let mut cfg = RunConfig::new(100);
    cfg.mac = MacMode::Aloha;
    cfg
}

/// Measures pure-ALOHA throughput at each offered load `G` (packets per
/// packet-time) over `packet_times` packet-times of simulated time.
pub fn aloha_validation(
    base: &RunConfig,
    g_values: &[f64],
    packet_times: f64,
) -> Result<Vec<AlohaPoint>, Error> {
    if base.mac != MacMode::Aloha {
        return Err(Error::Usage("ALOHA validation requires mac = aloha".into()));
    }
    if g_values.is_empty() {
        return Err(Error::Usage("no offered-load values given".into()));
    }
    if packet_times.is_nan() || packet_times <= 0.0 {
        return Err(Error::Usage("packet_times must be positive".into()));
    }
    let packet_time = airtime_of_first_sf(base).as_secs();
    g_values
        .par_iter()
        .map(|&g| {
            let mut cfg = base.clone();
            cfg.traffic = Traffic::Poisson { load_g: g };
            cfg.sim_time_s = packet_times * packet_time;
            let result = run_scenario(&cfg)?;
            result.verify()?;
            Ok(AlohaPoint {
                load_g: g,
                throughput: result.counters.received as f64 / packet_times,
                theory: pure_aloha_throughput(g),
                sent: result.counters.sent,
                received: result.counters.received,
                packet_times,
            })
        })
        .collect()
}

pub fn write_aloha_csv<W: Write>(points: &[AlohaPoint], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "g",
        "throughput",
        "theory",
        "sent",
        "received",
        "packet_times",
    ])?;
    for p in points {
        w.write_record([
            format!("{:.6}", p.load_g),
            format!("{:.6}", p.throughput),
            format!("{:.6}", p.theory),
            p.sent.to_string(),
            p.received.to_string(),
            format!("{:.1}", p.packet_times),
        ])?;
    }
    w.flush()
}
