//! Single-gateway reception: demodulation path allocation, same-SF collision
//! tainting and outcome classification.

use std::collections::HashMap;
use std::fmt;

use crate::error::GatewayError;
use crate::phy::{above_sensitivity, Role, SensitivityTable, SpreadingFactor};
use crate::sim::SimTime;

pub const DEFAULT_PATHS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReceptionOutcome {
    UnderSensitivity,
    NoDemodPath,
    Collided,
    Received,
}

impl ReceptionOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ReceptionOutcome::UnderSensitivity => "under_sensitivity",
            ReceptionOutcome::NoDemodPath => "no_path",
            ReceptionOutcome::Collided => "collided",
            ReceptionOutcome::Received => "received",
        }
    }
}

impl fmt::Display for ReceptionOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AirPacket {
    pub id: u64,
    pub device: usize,
    pub sf: SpreadingFactor,
    pub prx_dbm: f64,
    pub air_start: SimTime,
    pub air_end: SimTime,
}

/// What happened to a packet when it arrived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    UnderSensitivity,
    NoDemodPath,
    Bound { path: usize },
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    packet: u64,
    sf: SpreadingFactor,
    air_end: SimTime,
}

#[derive(Debug, Clone)]
struct InFlight {
    packet: AirPacket,
    admission: Admission,
    tainted: bool,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    table: SensitivityTable,
    slots: Vec<Option<Slot>>,
    in_flight: HashMap<u64, InFlight>,
    capture_margin_db: Option<f64>,
    binds: u64,
    releases: u64,
    peak_bound: usize,
}

impl Gateway {
    pub fn new(n_paths: usize, table: SensitivityTable) -> Self {
        Gateway {
            table,
            slots: vec![None; n_paths],
            in_flight: HashMap::new(),
            capture_margin_db: None,
            binds: 0,
            releases: 0,
            peak_bound: 0,
        }
    }

    /// Lets a packet survive a same-SF overlap when it is at least `margin_db`
    /// stronger than every packet it overlaps. Off by default.
    pub fn with_capture(mut self, margin_db: f64) -> Self {
        self.capture_margin_db = Some(margin_db);
        self
    }

    /// Whether `a` is destroyed by an overlapping `b`.
    fn destroys(&self, b_dbm: f64, a_dbm: f64) -> bool {
        match self.capture_margin_db {
            None => true,
            Some(m) => a_dbm - b_dbm < m,
        }
    }

    pub fn n_paths(&self) -> usize {
        self.slots.len()
    }

    /// A slot is held until its packet's air-end. One whose packet has already
    /// ended at `now` counts as free even if the end event has not run yet, so
    /// back-to-back packets never see a zero-length overlap.
    fn live(slot: &Option<Slot>, now: SimTime) -> Option<&Slot> {
        slot.as_ref().filter(|s| s.air_end > now)
    }

    pub fn bound_at(&self, now: SimTime) -> usize {
        self.slots
            .iter()
            .filter(|s| Self::live(s, now).is_some())
            .count()
    }

    /// Highest number of simultaneously bound paths seen so far.
    pub fn peak_bound(&self) -> usize {
        self.peak_bound
    }

    pub fn binds(&self) -> u64 {
        self.binds
    }

    pub fn releases(&self) -> u64 {
        self.releases
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.len()
    }

    /// Called at air-start. Packets below sensitivity or without a free path
    /// are dropped and never interfere. A bound packet taints, and is tainted
    /// by, every live bound packet of the same SF.
    pub fn on_tx_start(&mut self, packet: AirPacket) -> Result<Admission, GatewayError> {
        if self.in_flight.contains_key(&packet.id) {
            return Err(GatewayError::DuplicatePacket(packet.id));
        }
        let now = packet.air_start;
        let admission = if !above_sensitivity(packet.prx_dbm, packet.sf, Role::Gateway, &self.table)
        {
            Admission::UnderSensitivity
        } else if let Some(path) = self.slots.iter().position(|s| Self::live(s, now).is_none()) {
            Admission::Bound { path }
        } else {
            Admission::NoDemodPath
        };

        let mut tainted = false;
        if let Admission::Bound { path } = admission {
            let rivals: Vec<u64> = self
                .slots
                .iter()
                .filter_map(|s| Self::live(s, now))
                .filter(|s| s.sf == packet.sf)
                .map(|s| s.packet)
                .collect();
            for id in rivals {
                let Some(other_dbm) = self.in_flight.get(&id).map(|o| o.packet.prx_dbm) else {
                    continue;
                };
                tainted |= self.destroys(other_dbm, packet.prx_dbm);
                let hit = self.destroys(packet.prx_dbm, other_dbm);
                if let Some(other) = self.in_flight.get_mut(&id) {
                    other.tainted |= hit;
                }
            }
            if self.slots[path].take().is_some() {
                // previous occupant already ended; its end event will find the slot reused
                self.releases += 1;
            }
            self.slots[path] = Some(Slot {
                packet: packet.id,
                sf: packet.sf,
                air_end: packet.air_end,
            });
            self.binds += 1;
            self.peak_bound = self.peak_bound.max(self.bound_at(now));
        }
        self.in_flight.insert(
            packet.id,
            InFlight {
                packet,
                admission,
                tainted,
            },
        );
        Ok(admission)
    }

    /// Called at air-end. Releases the packet's path and assigns its final outcome.
    /// The caller frees the sender's channel flag whatever the outcome.
    pub fn on_tx_end(
        &mut self,
        packet_id: u64,
    ) -> Result<(ReceptionOutcome, AirPacket), GatewayError> {
        let entry = self
            .in_flight
            .remove(&packet_id)
            .ok_or(GatewayError::UnknownPacket(packet_id))?;
        let outcome = match entry.admission {
            Admission::UnderSensitivity => ReceptionOutcome::UnderSensitivity,
            Admission::NoDemodPath => ReceptionOutcome::NoDemodPath,
            Admission::Bound { path } => {
                if self.slots[path].is_some_and(|s| s.packet == packet_id) {
                    self.slots[path] = None;
                    self.releases += 1;
                }
                if entry.tainted {
                    ReceptionOutcome::Collided
                } else {
                    ReceptionOutcome::Received
                }
            }
        };
        Ok((outcome, entry.packet))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(id: u64, sf: u8, prx: f64, start_us: u64, len_us: u64) -> AirPacket {
        AirPacket {
            id,
            device: id as usize,
            sf: SpreadingFactor::new(sf).unwrap(),
            prx_dbm: prx,
            air_start: SimTime::from_micros(start_us),
            air_end: SimTime::from_micros(start_us + len_us),
        }
    }

    fn gw() -> Gateway {
        Gateway::new(DEFAULT_PATHS, SensitivityTable::default())
    }

    #[test]
    fn lone_packet_is_received() {
        let mut g = gw();
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(g.binds(), g.releases());
    }

    #[test]
    fn ninth_packet_gets_no_path() {
        let mut g = gw();
        for id in 0..8 {
            // distinct SFs would not matter for path accounting
            assert!(matches!(
                g.on_tx_start(packet(id, 8, -100.0, 0, 1000)).unwrap(),
                Admission::Bound { .. }
            ));
        }
        assert_eq!(
            g.on_tx_start(packet(8, 8, -100.0, 0, 1000)).unwrap(),
            Admission::NoDemodPath
        );
        assert_eq!(g.peak_bound(), 8);
        assert_eq!(g.on_tx_end(8).unwrap().0, ReceptionOutcome::NoDemodPath);
        for id in 0..8 {
            assert_eq!(g.on_tx_end(id).unwrap().0, ReceptionOutcome::Collided);
        }
        assert_eq!(g.binds(), 8);
        assert_eq!(g.releases(), 8);
    }

    #[test]
    fn weak_packet_does_not_interfere() {
        let mut g = gw();
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        assert_eq!(
            g.on_tx_start(packet(2, 8, -140.0, 10, 1000)).unwrap(),
            Admission::UnderSensitivity
        );
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(
            g.on_tx_end(2).unwrap().0,
            ReceptionOutcome::UnderSensitivity
        );
    }

    #[test]
    fn different_sfs_are_orthogonal() {
        let mut g = gw();
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        g.on_tx_start(packet(2, 9, -100.0, 500, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(g.on_tx_end(2).unwrap().0, ReceptionOutcome::Received);
    }

    #[test]
    fn same_sf_overlap_destroys_both() {
        let mut g = gw();
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        g.on_tx_start(packet(2, 8, -60.0, 999, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Collided);
        assert_eq!(g.on_tx_end(2).unwrap().0, ReceptionOutcome::Collided);
    }

    #[test]
    fn back_to_back_packets_do_not_collide() {
        let mut g = gw();
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        // starts exactly when packet 1 ends, before packet 1's end event ran
        g.on_tx_start(packet(2, 8, -100.0, 1000, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(g.on_tx_end(2).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(g.binds(), g.releases());
    }

    #[test]
    fn unknown_and_duplicate_packets() {
        let mut g = gw();
        assert_eq!(g.on_tx_end(7), Err(GatewayError::UnknownPacket(7)));
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        assert_eq!(
            g.on_tx_start(packet(1, 8, -100.0, 0, 1000)),
            Err(GatewayError::DuplicatePacket(1))
        );
    }

    #[test]
    fn capture_margin_spares_the_stronger_packet() {
        let mut g = gw().with_capture(6.0);
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        g.on_tx_start(packet(2, 8, -110.0, 100, 1000)).unwrap();
        g.on_tx_start(packet(3, 9, -100.0, 200, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Received);
        assert_eq!(g.on_tx_end(2).unwrap().0, ReceptionOutcome::Collided);
        assert_eq!(g.on_tx_end(3).unwrap().0, ReceptionOutcome::Received);

        let mut g = gw().with_capture(6.0);
        g.on_tx_start(packet(1, 8, -100.0, 0, 1000)).unwrap();
        g.on_tx_start(packet(2, 8, -103.0, 100, 1000)).unwrap();
        assert_eq!(g.on_tx_end(1).unwrap().0, ReceptionOutcome::Collided);
        assert_eq!(g.on_tx_end(2).unwrap().0, ReceptionOutcome::Collided);
    }
}
