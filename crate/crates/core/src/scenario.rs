//! Single-run execution: topology construction, the event loop wiring the MAC
//! onto the gateway, and the per-packet transmission log.

use std::collections::HashMap;
use std::io::Write;

use rand_distr::{Distribution, Normal};

use crate::config::{Offsets, RunConfig, Traffic};
use crate::error::{Error, MetricsError, TopologyError};
use crate::gateway::{AirPacket, Gateway, ReceptionOutcome};
use crate::mac::{
    DutyCycleGuard, GenerateAction, Mac, PendingPacket, PersistenceTable, RetryAction,
};
use crate::metrics::Counters;
use crate::phy::{airtime, received_power_dbm, SpreadingFactor};
use crate::sim::{streams, RngStream, Scheduler, SimTime};
use crate::topology::{
    assign_attributes, build_vicinity, parse_device_list, place_clusters, DeviceSpec, RangeBounds,
    VicinityMatrix,
};

/// Devices, their vicinity matrix and their received power at the gateway.
#[derive(Debug, Clone)]
pub struct Topology {
    pub devices: Vec<DeviceSpec>,
    pub vicinity: VicinityMatrix,
    pub gateway_prx_dbm: Vec<f64>,
}

pub fn build_topology(cfg: &RunConfig) -> Result<Topology, Error> {
    cfg.validate()?;
    let mut placement = RngStream::new(cfg.seed, streams::PLACEMENT);
    let devices = match &cfg.device_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_device_list(&text, cfg.tx_power_dbm)?
        }
        None => {
            let mut devices = assign_attributes(
                cfg.n_devices,
                &cfg.sf_set,
                &cfg.period_set_s,
                cfg.tx_power_dbm,
                &cfg.persistence,
            )?;
            let bounds =
                RangeBounds::for_sfs(&cfg.sf_set, cfg.tx_power_dbm, &cfg.loss, &cfg.sensitivity);
            let placed = place_clusters(cfg.n_devices, &cfg.geometry, &bounds, &mut placement)?;
            for (d, (pos, area)) in devices.iter_mut().zip(placed) {
                d.position = pos;
                d.area = area;
            }
            devices
        }
    };
    let shadowing: Vec<f64> = if cfg.shadowing_sigma_db > 0.0 {
        let normal = Normal::new(0.0, cfg.shadowing_sigma_db)
            .map_err(|_| TopologyError::EmptySet("shadowing_sigma_db"))?;
        devices
            .iter()
            .map(|_| normal.sample(placement.rng_mut()))
            .collect()
    } else {
        vec![0.0; devices.len()]
    };
    let gateway_prx_dbm = devices
        .iter()
        .zip(&shadowing)
        .map(|(d, s)| {
            received_power_dbm(d.tx_power_dbm, d.position.distance_to_gateway(), &cfg.loss) - s
        })
        .collect();
    let vicinity = build_vicinity(&devices, &cfg.loss, &cfg.sensitivity);
    Ok(Topology {
        devices,
        vicinity,
        gateway_prx_dbm,
    })
}

/// One line of the transmission log.
#[derive(Debug, Clone, PartialEq)]
pub struct TxRecord {
    pub packet: u64,
    pub device: usize,
    pub sf: SpreadingFactor,
    pub generated_at: SimTime,
    pub air_start: SimTime,
    pub air_end: SimTime,
    pub prx_dbm: f64,
    pub outcome: ReceptionOutcome,
}

/// Bookkeeping used by the conservation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunDiagnostics {
    pub events_executed: usize,
    pub books: u64,
    pub frees: u64,
    pub path_binds: u64,
    pub path_releases: u64,
    pub peak_bound_paths: usize,
    pub gateway_paths: usize,
    pub deferrals: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub topology: Topology,
    pub counters: Counters,
    pub log: Vec<TxRecord>,
    pub diagnostics: RunDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Generate(usize),
    Arrival,
    Retry(usize),
    TxEnd(u64),
}

struct Network {
    topo: Topology,
    mac: Mac,
    gateway: Gateway,
    airtime: Vec<SimTime>,
    sensing: Vec<SimTime>,
    period: Vec<SimTime>,
    traffic: RngStream,
    persistence_rng: RngStream,
    poisson_rate: f64,
    next_arrival_device: usize,
    next_packet: u64,
    generation_end: SimTime,
    draining: bool,
    in_air: HashMap<u64, SimTime>,
    log: Vec<TxRecord>,
}

impl Network {
    fn new_packet(&mut self, now: SimTime) -> PendingPacket {
        let id = self.next_packet;
        self.next_packet += 1;
        PendingPacket {
            id,
            generated_at: now,
        }
    }

    fn schedule(sched: &mut Scheduler<Event>, at: SimTime, ev: Event) {
        sched
            .schedule(at, ev)
            .expect("simulation events are never scheduled in the past");
    }

    fn start_transmission(
        &mut self,
        sched: &mut Scheduler<Event>,
        device: usize,
        packet: PendingPacket,
        now: SimTime,
    ) {
        let air = AirPacket {
            id: packet.id,
            device,
            sf: self.topo.devices[device].sf,
            prx_dbm: self.topo.gateway_prx_dbm[device],
            air_start: now,
            air_end: now + self.airtime[device],
        };
        self.gateway
            .on_tx_start(air)
            .expect("packet ids are unique");
        self.in_air.insert(packet.id, packet.generated_at);
        Self::schedule(sched, air.air_end, Event::TxEnd(packet.id));
    }

    fn generate(&mut self, sched: &mut Scheduler<Event>, device: usize, now: SimTime) {
        let packet = self.new_packet(now);
        let action = self.mac.on_generate(
            device,
            packet,
            now,
            self.airtime[device],
            &self.topo.vicinity,
        );
        match action {
            GenerateAction::Transmit(p) => self.start_transmission(sched, device, p, now),
            GenerateAction::Backoff => {
                Self::schedule(sched, now + self.sensing[device], Event::Retry(device))
            }
            GenerateAction::Suppressed(_) => {}
        }
    }

    fn handle(&mut self, sched: &mut Scheduler<Event>, now: SimTime, ev: Event) {
        match ev {
            Event::Generate(device) => {
                if self.draining {
                    return;
                }
                // the periodic timer runs regardless of what the MAC does
                let next = now + self.period[device];
                self.mac.device_mut(device).next_generation_at = next;
                if next < self.generation_end {
                    Self::schedule(sched, next, Event::Generate(device));
                }
                self.generate(sched, device, now);
            }
            Event::Arrival => {
                if self.draining {
                    return;
                }
                let n = self.topo.devices.len();
                let device = self.next_arrival_device;
                self.next_arrival_device = (device + 1) % n;
                let gap = SimTime::from_secs(self.traffic.next_exponential(self.poisson_rate));
                let next = now + gap;
                if next < self.generation_end {
                    Self::schedule(sched, next, Event::Arrival);
                }
                self.generate(sched, device, now);
            }
            Event::Retry(device) => {
                if self.draining {
                    return;
                }
                let action = self.mac.retry_claiming(
                    device,
                    now,
                    self.airtime[device],
                    &self.topo.vicinity,
                    &mut self.persistence_rng,
                );
                match action {
                    RetryAction::Transmit(p) => self.start_transmission(sched, device, p, now),
                    RetryAction::Busy | RetryAction::Deferred => {
                        Self::schedule(sched, now + self.sensing[device], Event::Retry(device))
                    }
                    RetryAction::Refused | RetryAction::Stale => {}
                }
            }
            Event::TxEnd(packet) => {
                let (outcome, air) = self
                    .gateway
                    .on_tx_end(packet)
                    .expect("every transmission end matches a start");
                // all four outcomes release the sender's channel flag
                self.mac
                    .free_channel(air.device)
                    .expect("transmitting device holds the channel");
                let generated_at = self.in_air.remove(&packet).unwrap_or(air.air_start);
                self.log.push(TxRecord {
                    packet,
                    device: air.device,
                    sf: air.sf,
                    generated_at,
                    air_start: air.air_start,
                    air_end: air.air_end,
                    prx_dbm: air.prx_dbm,
                    outcome,
                });
            }
        }
    }
}

impl RunResult {
    /// Conservation checks: counter identities, one free per booking, one
    /// release per path binding and bound paths within the gateway limit.
    pub fn verify(&self) -> Result<(), MetricsError> {
        self.counters.check()?;
        let d = &self.diagnostics;
        if d.books != d.frees {
            return Err(MetricsError::Inconsistent(format!(
                "{} channel bookings but {} frees",
                d.books, d.frees
            )));
        }
        if d.books != self.counters.sent {
            return Err(MetricsError::Inconsistent(format!(
                "{} channel bookings for {} sent packets",
                d.books, self.counters.sent
            )));
        }
        if d.path_binds != d.path_releases {
            return Err(MetricsError::Inconsistent(format!(
                "{} path bindings but {} releases",
                d.path_binds, d.path_releases
            )));
        }
        if d.peak_bound_paths > d.gateway_paths {
            return Err(MetricsError::Inconsistent(format!(
                "{} paths bound at once, gateway has {}",
                d.peak_bound_paths, d.gateway_paths
            )));
        }
        Ok(())
    }
}

/// Runs one scenario for `sim_time_s`.
///
/// Packets are generated in `[0, sim_time_s)`. Transmissions still on air at
/// the end are completed; packets still backing off are reported as pending.
pub fn run_scenario(cfg: &RunConfig) -> Result<RunResult, Error> {
    let topo = build_topology(cfg)?;
    let n = topo.devices.len();
    let airtime: Vec<SimTime> = topo
        .devices
        .iter()
        .map(|d| airtime(d.sf, &cfg.radio))
        .collect();
    let sensing: Vec<SimTime> = match cfg.sensing_interval_s {
        Some(s) => vec![SimTime::from_secs(s); n],
        None => airtime
            .iter()
            .map(|a| SimTime::from_micros(a.as_micros().div_ceil(2)))
            .collect(),
    };
    let period: Vec<SimTime> = topo
        .devices
        .iter()
        .map(|d| SimTime::from_secs(d.period_s))
        .collect();
    let persistence = PersistenceTable::new(topo.devices.iter().map(|d| d.persistence).collect())
        .map_err(TopologyError::from)?;
    let mut mac = Mac::new(cfg.mac, persistence);
    if cfg.duty_cycle {
        mac = mac.with_duty_cycle(DutyCycleGuard::eu868(n));
    }
    let packet_time = airtime_of_first_sf(cfg);
    let poisson_rate = match cfg.traffic {
        Traffic::Poisson { load_g } => load_g / packet_time.as_secs(),
        Traffic::Periodic => 0.0,
    };

    let mut gateway = Gateway::new(cfg.gateway_paths, cfg.sensitivity.clone());
    if let Some(margin) = cfg.capture_margin_db {
        gateway = gateway.with_capture(margin);
    }
    let mut net = Network {
        mac,
        gateway,
        airtime,
        sensing,
        period,
        traffic: RngStream::new(cfg.seed, streams::TRAFFIC),
        persistence_rng: RngStream::new(cfg.seed, streams::PERSISTENCE),
        poisson_rate,
        next_arrival_device: 0,
        next_packet: 0,
        generation_end: SimTime::from_secs(cfg.sim_time_s),
        draining: false,
        in_air: HashMap::new(),
        log: Vec::new(),
        topo,
    };
    let mut sched = Scheduler::new();

    match cfg.traffic {
        Traffic::Periodic => {
            for device in 0..n {
                let offset = match cfg.offsets {
                    Offsets::Zero => SimTime::ZERO,
                    Offsets::Uniform => SimTime::from_secs(
                        net.traffic.next_uniform() * net.topo.devices[device].period_s,
                    ),
                    Offsets::Staggered { step_s } => SimTime::from_secs(step_s * device as f64),
                };
                if offset < net.generation_end {
                    net.mac.device_mut(device).next_generation_at = offset;
                    Network::schedule(&mut sched, offset, Event::Generate(device));
                }
            }
        }
        Traffic::Poisson { .. } => {
            let first = SimTime::from_secs(net.traffic.next_exponential(net.poisson_rate));
            if first < net.generation_end {
                Network::schedule(&mut sched, first, Event::Arrival);
            }
        }
    }

    let mut executed = sched.run(net.generation_end, |s, t, e| net.handle(s, t, e));
    net.draining = true;
    executed += sched.run_to_completion(|s, t, e| net.handle(s, t, e));

    let mut counters = Counters::default();
    for st in net.mac.devices() {
        counters.generated += st.generated;
        counters.sent += st.sent;
        counters.suppressed += st.suppressed;
    }
    counters.pending_at_end = net.mac.pending_count();
    for rec in &net.log {
        match rec.outcome {
            ReceptionOutcome::Received => counters.received += 1,
            ReceptionOutcome::Collided => counters.collided += 1,
            ReceptionOutcome::UnderSensitivity => counters.under_sensitivity += 1,
            ReceptionOutcome::NoDemodPath => counters.no_path += 1,
        }
    }
    net.log.sort_by_key(|t| (t.air_start, t.packet));
    let diagnostics = RunDiagnostics {
        events_executed: executed,
        books: net.mac.channel().books(),
        frees: net.mac.channel().frees(),
        path_binds: net.gateway.binds(),
        path_releases: net.gateway.releases(),
        peak_bound_paths: net.gateway.peak_bound(),
        gateway_paths: net.gateway.n_paths(),
        deferrals: net.mac.devices().iter().map(|d| d.deferrals).sum(),
    };
    Ok(RunResult {
        topology: net.topo,
        counters,
        log: net.log,
        diagnostics,
    })
}

/// Airtime of the first configured SF; the unit of offered load for Poisson traffic.
pub fn airtime_of_first_sf(cfg: &RunConfig) -> SimTime {
    airtime(cfg.sf_set[0], &cfg.radio)
}

pub const TRACE_HEADER: &str =
    "#packet\tdevice\tsf\tgenerated_at_s\tair_start_s\tair_end_s\tprx_dbm\toutcome";

/// Writes the transmission log as tab-separated text, one packet per line in
/// air-end order, after a `#`-prefixed header naming the columns.
pub fn write_trace<W: Write>(log: &[TxRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in log {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.3}\t{}",
            r.packet, r.device, r.sf, r.generated_at, r.air_start, r.air_end, r.prx_dbm, r.outcome
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::MacMode;

    fn single(period: f64) -> RunConfig {
        let mut cfg = RunConfig::new(1);
        cfg.period_set_s = vec![period];
        cfg.offsets = Offsets::Zero;
        cfg
    }

    #[test]
    fn single_device_counts() {
        let r = run_scenario(&single(100.0)).unwrap();
        assert_eq!(r.counters.generated, 36);
        assert_eq!(r.counters.received, 36);
        assert_eq!(r.log[0].air_start, SimTime::ZERO);
        assert_eq!(r.log[35].air_start, SimTime::from_secs(3500.0));
    }

    #[test]
    fn period_shorter_than_airtime_suppresses() {
        let mut cfg = single(0.05);
        cfg.sim_time_s = 1.0;
        let r = run_scenario(&cfg).unwrap();
        // firings every 50 ms; each 102.912 ms packet swallows the next two firings
        assert_eq!(r.counters.generated, 20);
        assert_eq!(r.counters.sent, 7);
        assert_eq!(r.counters.suppressed, 13);
        assert_eq!(r.counters.received, 7);
    }

    #[test]
    fn aloha_single_device_matches_pcsma() {
        let mut cfg = single(100.0);
        cfg.offsets = Offsets::Uniform;
        let a = run_scenario(&cfg).unwrap();
        cfg.mac = MacMode::Aloha;
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn trace_format() {
        let r = run_scenario(&single(1000.0)).unwrap();
        let mut buf = Vec::new();
        write_trace(&r.log[..1], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(TRACE_HEADER));
        let fields: Vec<&str> = lines.next().unwrap().split('\t').collect();
        assert_eq!(
            fields[..6],
            ["0", "0", "8", "0.000000", "0.000000", "0.102912"]
        );
        assert_eq!(fields[7], "received");
    }
}
