//! Device MAC: channel-state array, persistence table and the per-device
//! claiming state machine for p-CSMA and pure ALOHA.
//!
//! The state machine does not touch the event queue. Each entry point updates
//! MAC state and returns an action telling the caller what to schedule, so the
//! same logic is driven by the scenario's event loop and by unit tests.

use std::collections::VecDeque;

use crate::error::{ChannelError, PersistenceError};
use crate::sim::{RngStream, SimTime};
use crate::topology::{check_persistence, VicinityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelCondition {
    Idle,
    Occupied,
}

/// One busy flag per device. A flag is raised for exactly the device's on-air interval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelStateArray {
    flags: Vec<bool>,
    books: u64,
    frees: u64,
}

impl ChannelStateArray {
    pub fn new(n_devices: usize) -> Self {
        ChannelStateArray {
            flags: vec![false; n_devices],
            books: 0,
            frees: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn is_busy(&self, device: usize) -> bool {
        self.flags[device]
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn book(&mut self, device: usize) -> Result<(), ChannelError> {
        let flag = self
            .flags
            .get_mut(device)
            .ok_or(ChannelError::UnknownDevice(device))?;
        if *flag {
            return Err(ChannelError::AlreadyBooked(device));
        }
        *flag = true;
        self.books += 1;
        Ok(())
    }

    pub fn free(&mut self, device: usize) -> Result<(), ChannelError> {
        let flag = self
            .flags
            .get_mut(device)
            .ok_or(ChannelError::UnknownDevice(device))?;
        if !*flag {
            return Err(ChannelError::NotBooked(device));
        }
        *flag = false;
        self.frees += 1;
        Ok(())
    }

    pub fn books(&self) -> u64 {
        self.books
    }

    pub fn frees(&self) -> u64 {
        self.frees
    }
}

/// Occupied iff some device the listener can hear is on air. The transmitter's
/// SF is not consulted and the listener's own flag is ignored.
pub fn sense(
    device: usize,
    state: &ChannelStateArray,
    vicinity: &VicinityMatrix,
) -> ChannelCondition {
    if vicinity.audible(device).iter().any(|&j| state.is_busy(j)) {
        ChannelCondition::Occupied
    } else {
        ChannelCondition::Idle
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceTable {
    values: Vec<f64>,
}

impl PersistenceTable {
    pub fn new(values: Vec<f64>) -> Result<Self, PersistenceError> {
        for &p in &values {
            check_persistence(p)?;
        }
        Ok(PersistenceTable { values })
    }

    pub fn get(&self, device: usize) -> f64 {
        self.values[device]
    }

    pub fn update(&mut self, device: usize, p: f64) -> Result<(), PersistenceError> {
        check_persistence(p)?;
        let slot = self
            .values
            .get_mut(device)
            .ok_or(PersistenceError::UnknownDevice(device))?;
        *slot = p;
        Ok(())
    }

    /// One persistence draw: true iff `u < p(device)`.
    pub fn shall_it_pass(&self, device: usize, rng: &mut RngStream) -> bool {
        rng.next_uniform() < self.values[device]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MacMode {
    Pcsma,
    Aloha,
}

impl MacMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MacMode::Pcsma => "pcsma",
            MacMode::Aloha => "aloha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Transmitting,
    Backoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PendingPacket {
    pub id: u64,
    pub generated_at: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceMacState {
    pub phase: Phase,
    pub pending: Option<PendingPacket>,
    pub next_generation_at: SimTime,
    pub generated: u64,
    pub sent: u64,
    pub suppressed: u64,
    /// Number of times a post-backoff persistence draw failed.
    pub deferrals: u64,
}

impl Default for DeviceMacState {
    fn default() -> Self {
        DeviceMacState {
            phase: Phase::Idle,
            pending: None,
            next_generation_at: SimTime::ZERO,
            generated: 0,
            sent: 0,
            suppressed: 0,
            deferrals: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuppressReason {
    /// A packet was still pending when the next one was generated.
    Busy,
    /// Sending would have exceeded the duty-cycle budget.
    DutyCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerateAction {
    /// Channel booked; the caller starts the transmission now.
    Transmit(PendingPacket),
    /// Channel sensed occupied; the caller schedules a retry one sensing interval later.
    Backoff,
    Suppressed(SuppressReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetryAction {
    Transmit(PendingPacket),
    /// Still occupied; retry one sensing interval later.
    Busy,
    /// Idle but the persistence draw failed; retry one sensing interval later.
    Deferred,
    /// Idle and the draw passed, but the duty-cycle guard dropped the packet.
    Refused,
    /// The device was not backing off; nothing to do.
    Stale,
}

/// Sliding-window airtime budget per device.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycleGuard {
    pub fraction: f64,
    pub window: SimTime,
    history: Vec<VecDeque<(SimTime, SimTime)>>,
}

impl DutyCycleGuard {
    pub fn new(n_devices: usize, fraction: f64, window: SimTime) -> Self {
        DutyCycleGuard {
            fraction,
            window,
            history: vec![VecDeque::new(); n_devices],
        }
    }

    /// EU868 default: 1 % over one hour.
    pub fn eu868(n_devices: usize) -> Self {
        Self::new(n_devices, 0.01, SimTime::from_secs(3600.0))
    }

    /// Records the transmission if it fits within the budget.
    fn admit(&mut self, device: usize, start: SimTime, airtime: SimTime) -> bool {
        let end = start + airtime;
        let window_start = end.saturating_sub(self.window);
        let hist = &mut self.history[device];
        while hist.front().is_some_and(|&(_, e)| e <= window_start) {
            hist.pop_front();
        }
        let used: u64 = hist
            .iter()
            .map(|&(s, e)| e.as_micros() - s.max(window_start).as_micros())
            .sum();
        let budget = self.fraction * self.window.as_micros() as f64;
        if (used + airtime.as_micros()) as f64 > budget {
            return false;
        }
        hist.push_back((start, end));
        true
    }
}

#[derive(Debug, Clone)]
pub struct Mac {
    mode: MacMode,
    channel: ChannelStateArray,
    persistence: PersistenceTable,
    devices: Vec<DeviceMacState>,
    duty_cycle: Option<DutyCycleGuard>,
}

impl Mac {
    pub fn new(mode: MacMode, persistence: PersistenceTable) -> Self {
        let n = persistence.values.len();
        Mac {
            mode,
            channel: ChannelStateArray::new(n),
            persistence,
            devices: vec![DeviceMacState::default(); n],
            duty_cycle: None,
        }
    }

    pub fn with_duty_cycle(mut self, guard: DutyCycleGuard) -> Self {
        self.duty_cycle = Some(guard);
        self
    }

    pub fn mode(&self) -> MacMode {
        self.mode
    }

    pub fn channel(&self) -> &ChannelStateArray {
        &self.channel
    }

    pub fn persistence(&self) -> &PersistenceTable {
        &self.persistence
    }

    /// Takes effect on the next persistence draw.
    pub fn update_persistence(&mut self, device: usize, p: f64) -> Result<(), PersistenceError> {
        self.persistence.update(device, p)
    }

    pub fn device(&self, device: usize) -> &DeviceMacState {
        &self.devices[device]
    }

    pub fn device_mut(&mut self, device: usize) -> &mut DeviceMacState {
        &mut self.devices[device]
    }

    pub fn devices(&self) -> &[DeviceMacState] {
        &self.devices
    }

    fn suppress(&mut self, device: usize, reason: SuppressReason) -> GenerateAction {
        self.devices[device].suppressed += 1;
        GenerateAction::Suppressed(reason)
    }

    fn start_transmission(
        &mut self,
        device: usize,
        packet: PendingPacket,
        now: SimTime,
        airtime: SimTime,
    ) -> bool {
        if let Some(guard) = self.duty_cycle.as_mut() {
            if !guard.admit(device, now, airtime) {
                return false;
            }
        }
        self.channel
            .book(device)
            .expect("MAC phase and channel flag out of sync");
        let st = &mut self.devices[device];
        st.phase = Phase::Transmitting;
        st.pending = Some(packet);
        st.sent += 1;
        true
    }

    /// Periodic (or Poisson) generation of a new packet at `now`.
    ///
    /// In p-CSMA mode an idle channel is claimed unconditionally; an occupied
    /// one sends the device into backoff. ALOHA mode transmits without sensing.
    /// Either way a device that still holds a packet drops the new one.
    pub fn on_generate(
        &mut self,
        device: usize,
        packet: PendingPacket,
        now: SimTime,
        airtime: SimTime,
        vicinity: &VicinityMatrix,
    ) -> GenerateAction {
        self.devices[device].generated += 1;
        if self.devices[device].phase != Phase::Idle {
            return self.suppress(device, SuppressReason::Busy);
        }
        let clear = match self.mode {
            MacMode::Aloha => true,
            MacMode::Pcsma => sense(device, &self.channel, vicinity) == ChannelCondition::Idle,
        };
        if clear {
            if self.start_transmission(device, packet, now, airtime) {
                GenerateAction::Transmit(packet)
            } else {
                self.suppress(device, SuppressReason::DutyCycle)
            }
        } else {
            let st = &mut self.devices[device];
            st.phase = Phase::Backoff;
            st.pending = Some(packet);
            GenerateAction::Backoff
        }
    }

    /// Re-sense after a backoff interval; persistence gates the reclaim.
    pub fn retry_claiming(
        &mut self,
        device: usize,
        now: SimTime,
        airtime: SimTime,
        vicinity: &VicinityMatrix,
        rng: &mut RngStream,
    ) -> RetryAction {
        let st = &self.devices[device];
        let Some(packet) = st.pending.filter(|_| st.phase == Phase::Backoff) else {
            return RetryAction::Stale;
        };
        if sense(device, &self.channel, vicinity) == ChannelCondition::Occupied {
            return RetryAction::Busy;
        }
        if !self.persistence.shall_it_pass(device, rng) {
            self.devices[device].deferrals += 1;
            return RetryAction::Deferred;
        }
        if self.start_transmission(device, packet, now, airtime) {
            RetryAction::Transmit(packet)
        } else {
            let st = &mut self.devices[device];
            st.phase = Phase::Idle;
            st.pending = None;
            st.suppressed += 1;
            RetryAction::Refused
        }
    }

    /// Clears the device's busy flag at the end of its transmission.
    pub fn free_channel(&mut self, device: usize) -> Result<(), ChannelError> {
        self.channel.free(device)?;
        let st = &mut self.devices[device];
        st.phase = Phase::Idle;
        st.pending = None;
        Ok(())
    }

    pub fn pending_count(&self) -> u64 {
        self.devices.iter().filter(|d| d.pending.is_some()).count() as u64
    }
}
