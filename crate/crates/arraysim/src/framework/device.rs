//! Devices, servants and the station that owns them.
//!
//! A `Station` is one computer of the array: one bus, one slave clock, the
//! device entries configured for that bus, the monitors and alarms attached
//! there, and the staging area for monitor samples. Device hardware always
//! exists (it is soldered to the bus); what the lifecycle governs is the
//! servant, the software object holding per-device controller state.
//! Persistent servants come up at build time and never go away; transient
//! servants are created on the first resolve and destroyed when the last
//! handle is released.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use super::codec::{rca_read, rca_write_now, RCA_REGISTER_MASK, RCA_WRITE_LATCHED, RCA_WRITE_NOW};
use super::config::{Access, AlarmCfg, DeviceCfg, DeviceKind, Lifecycle, PropertyCfg, Registry};
use crate::error::{Error, Result};
use crate::executive::QueuedCommand;
use crate::fts::{FtsController, FtsHw, FtsSnapshot};
use crate::monitor_stream::{Batch, Collector, Quality, Sample};
use crate::simbus::{BusModel, BusResponse, CanBus, CanNode, NodeAddress};
use crate::timebase::{ArrayTime, SlaveClock, TimingEvent, EVENT_PERIOD_NS};

/// One register write as the hardware saw it. `latch_event` is set when the
/// write was staged and applied at a timing event, `None` when it applied at
/// the end of its bus transaction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WriteRecord {
    pub reg: u16,
    pub payload: Vec<u8>,
    pub at: ArrayTime,
    pub latch_event: Option<u64>,
}

/// Plain register-file hardware: every property is a register, writes apply
/// immediately or latch at the next pulse depending on the operation bit.
pub struct GenericHw {
    regs: BTreeMap<u16, Vec<u8>>,
    staged: Vec<(u16, Vec<u8>)>,
    journal: Vec<WriteRecord>,
}

impl GenericHw {
    pub fn from_spec(spec: &DeviceCfg) -> Result<Self> {
        let mut regs = BTreeMap::new();
        for prop in &spec.properties {
            let bytes = match prop.default {
                Some(v) => prop.codec.encode(v)?,
                None => vec![0u8; prop.codec.width()],
            };
            regs.insert(prop.rca, bytes);
        }
        Ok(GenericHw {
            regs,
            staged: Vec::new(),
            journal: Vec::new(),
        })
    }

    pub fn journal(&self) -> &[WriteRecord] {
        &self.journal
    }

    pub fn register(&self, reg: u16) -> Option<Vec<u8>> {
        self.regs.get(&reg).cloned()
    }
}

impl CanNode for GenericHw {
    fn poll(&mut self, rca: u32, request: &[u8], at: ArrayTime) -> Option<Vec<u8>> {
        let reg = (rca & RCA_REGISTER_MASK) as u16;
        let current = self.regs.get(&reg)?;
        if request.len() != current.len() {
            return None;
        }
        if rca & RCA_WRITE_NOW != 0 {
            self.regs.insert(reg, request.to_vec());
            self.journal.push(WriteRecord {
                reg,
                payload: request.to_vec(),
                at,
                latch_event: None,
            });
            Some(request.to_vec())
        } else if rca & RCA_WRITE_LATCHED != 0 {
            self.staged.push((reg, request.to_vec()));
            Some(request.to_vec())
        } else {
            Some(current.clone())
        }
    }

    fn on_pulse(&mut self, event: TimingEvent) {
        for (reg, payload) in std::mem::take(&mut self.staged) {
            self.regs.insert(reg, payload.clone());
            self.journal.push(WriteRecord {
                reg,
                payload,
                at: event.tai,
                latch_event: Some(event.seq),
            });
        }
    }
}

pub(crate) enum Hw {
    Generic(Rc<RefCell<GenericHw>>),
    Fts(Rc<RefCell<FtsHw>>),
}

impl Hw {
    fn as_node(&self) -> Rc<RefCell<dyn CanNode>> {
        match self {
            Hw::Generic(h) => h.clone(),
            Hw::Fts(h) => h.clone(),
        }
    }

    fn journal(&self) -> Vec<WriteRecord> {
        match self {
            Hw::Generic(h) => h.borrow().journal().to_vec(),
            Hw::Fts(h) => h.borrow().journal().to_vec(),
        }
    }
}

/// Per-device software state. Exists while the device is instantiated.
pub struct Servant {
    pub(crate) fts: Option<FtsController>,
}

pub(crate) struct DeviceEntry {
    pub spec: DeviceCfg,
    pub hw: Hw,
    pub servant: Option<Servant>,
    pub live_tokens: BTreeSet<u64>,
    pub instantiations: u64,
}

impl DeviceEntry {
    fn instantiate(&mut self) {
        let fts = match self.spec.kind {
            DeviceKind::Fts => Some(FtsController::new()),
            DeviceKind::Generic => None,
        };
        self.servant = Some(Servant { fts });
        self.instantiations += 1;
    }
}

/// An opaque claim on a resolved device. Cloneable so callers can share it;
/// release validates the token, so stale and doubled releases are caught.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DeviceHandle {
    device: String,
    token: u64,
}

impl DeviceHandle {
    pub fn device(&self) -> &str {
        &self.device
    }
}

/// Result of reading a property over the bus.
#[derive(Clone, Debug, PartialEq)]
pub struct PropertyReading {
    pub value: f64,
    pub timestamp: ArrayTime,
    pub quality: Quality,
}

/// A periodic poll of one property, feeding one channel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonitorSpec {
    pub device: String,
    pub property: String,
    pub period_events: u64,
    pub channel: String,
    /// Samples are taken at `start_event + k * period_events` for k >= 1.
    pub start_event: u64,
}

pub(crate) struct ActiveMonitor {
    pub id: u64,
    pub spec: MonitorSpec,
    pub round_trip_ns: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlarmKind {
    Raised,
    Cleared,
}

/// One edge of an alarm state machine, as recorded in the station log.
#[derive(Clone, Debug, PartialEq)]
pub struct AlarmEvent {
    pub device: String,
    pub property: String,
    pub kind: AlarmKind,
    pub value: f64,
    pub event_seq: u64,
    pub offset_ns: u64,
}

pub(crate) struct ActiveAlarm {
    pub device: String,
    pub property: String,
    pub cfg: AlarmCfg,
    pub raised: bool,
}

/// One computer of the array and everything attached to it.
pub struct Station {
    name: String,
    pub(crate) bus: CanBus,
    pub(crate) clock: SlaveClock,
    pub(crate) devices: BTreeMap<String, DeviceEntry>,
    pub(crate) monitors: Vec<ActiveMonitor>,
    pub(crate) alarms: Vec<ActiveAlarm>,
    pub(crate) alarm_log: Vec<AlarmEvent>,
    pub(crate) collectors: BTreeMap<String, Collector>,
    pub(crate) queue: Vec<QueuedCommand>,
    next_token: u64,
    next_monitor_id: u64,
}

impl Station {
    /// Assemble the station for one configured bus: wire model, hardware
    /// endpoints, and servants for the persistent devices.
    pub fn build(registry: &Registry, bus_name: &str) -> Result<Station> {
        let bus_cfg = registry.bus(bus_name)?;
        let model = BusModel {
            bitrate_bps: bus_cfg.bitrate_bps,
            response_timeout_ns: bus_cfg.response_timeout_ns,
            ..BusModel::default()
        };
        let mut bus = CanBus::new(bus_name, model);
        let mut devices = BTreeMap::new();

        for spec in registry.devices().iter().filter(|d| d.bus == bus_name) {
            let hw = match spec.kind {
                DeviceKind::Generic => {
                    Hw::Generic(Rc::new(RefCell::new(GenericHw::from_spec(spec)?)))
                }
                DeviceKind::Fts => {
                    let k = spec
                        .param_u64("walsh_index")?
                        .expect("validated by the registry") as u8;
                    Hw::Fts(Rc::new(RefCell::new(FtsHw::new(k))))
                }
            };
            bus.register_node(spec.node, hw.as_node())?;
            let mut entry = DeviceEntry {
                spec: spec.clone(),
                hw,
                servant: None,
                live_tokens: BTreeSet::new(),
                instantiations: 0,
            };
            if spec.lifecycle == Lifecycle::Persistent {
                entry.instantiate();
            }
            devices.insert(spec.name.clone(), entry);
        }

        Ok(Station {
            name: bus_name.to_string(),
            bus,
            clock: SlaveClock::new(),
            devices,
            monitors: Vec::new(),
            alarms: Vec::new(),
            alarm_log: Vec::new(),
            collectors: BTreeMap::new(),
            queue: Vec::new(),
            next_token: 0,
            next_monitor_id: 0,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn bus(&self) -> &CanBus {
        &self.bus
    }

    pub fn clock(&self) -> &SlaveClock {
        &self.clock
    }

    pub fn device_names(&self) -> impl Iterator<Item = &str> {
        self.devices.keys().map(String::as_str)
    }

    pub fn alarm_log(&self) -> &[AlarmEvent] {
        &self.alarm_log
    }

    pub(crate) fn entry(&self, device: &str) -> Result<&DeviceEntry> {
        self.devices
            .get(device)
            .ok_or_else(|| Error::NameNotFound(format!("device {device:?}")))
    }

    pub(crate) fn entry_mut(&mut self, device: &str) -> Result<&mut DeviceEntry> {
        self.devices
            .get_mut(device)
            .ok_or_else(|| Error::NameNotFound(format!("device {device:?}")))
    }

    fn property_spec<'a>(entry: &'a DeviceEntry, property: &str) -> Result<&'a PropertyCfg> {
        entry.spec.property(property).ok_or_else(|| {
            Error::NameNotFound(format!(
                "property {:?} of device {:?}",
                property, entry.spec.name
            ))
        })
    }

    /// Claim a device. The first claim on a transient device instantiates
    /// its servant.
    pub fn resolve(&mut self, device: &str) -> Result<DeviceHandle> {
        let token = self.next_token;
        let entry = self.entry_mut(device)?;
        if entry.servant.is_none() {
            entry.instantiate();
        }
        entry.live_tokens.insert(token);
        self.next_token = token + 1;
        Ok(DeviceHandle {
            device: device.to_string(),
            token,
        })
    }

    /// Return a claim. Dropping the last claim on a transient device
    /// destroys its servant; a stale or repeated handle is a usage error.
    pub fn release(&mut self, handle: &DeviceHandle) -> Result<()> {
        let entry = self.entry_mut(&handle.device)?;
        if !entry.live_tokens.remove(&handle.token) {
            return Err(Error::Usage(format!(
                "handle for {:?} already released",
                handle.device
            )));
        }
        if entry.live_tokens.is_empty() && entry.spec.lifecycle == Lifecycle::Transient {
            entry.servant = None;
        }
        Ok(())
    }

    pub fn refcount(&self, device: &str) -> Result<usize> {
        Ok(self.entry(device)?.live_tokens.len())
    }

    pub fn is_instantiated(&self, device: &str) -> Result<bool> {
        Ok(self.entry(device)?.servant.is_some())
    }

    /// How many times the device's servant has been created. One per
    /// refcount 0 -> 1 transition by construction.
    pub fn instantiation_count(&self, device: &str) -> Result<u64> {
        Ok(self.entry(device)?.instantiations)
    }

    fn check_handle(&self, handle: &DeviceHandle) -> Result<()> {
        let entry = self.entry(&handle.device)?;
        if !entry.live_tokens.contains(&handle.token) {
            return Err(Error::Usage(format!(
                "handle for {:?} is not live",
                handle.device
            )));
        }
        Ok(())
    }

    /// Poll one property over the bus, starting when the wire is free and
    /// no earlier than `at`. Internal form shared by gets and monitors.
    pub(crate) fn poll_property(
        &mut self,
        device: &str,
        property: &str,
        at: ArrayTime,
    ) -> Result<(PropertyReading, u64)> {
        let entry = self.entry(device)?;
        let prop = Self::property_spec(entry, property)?;
        let addr = NodeAddress::new(entry.spec.node, rca_read(prop.rca))?;
        let request = vec![0u8; prop.codec.width()];
        let codec = prop.codec;
        let range = prop.range;

        let start = at.max(self.bus.free_at());
        let txn = self.bus.poll(addr, &request, start)?;
        let reading = match &txn.response {
            BusResponse::Frame(frame) => {
                let value = codec.decode(frame.payload())?;
                let quality = match range {
                    Some([lo, hi]) if value < lo || value > hi => Quality::Range,
                    _ => Quality::Ok,
                };
                PropertyReading {
                    value,
                    timestamp: txn.end,
                    quality,
                }
            }
            BusResponse::Timeout => PropertyReading {
                value: 0.0,
                timestamp: txn.end,
                quality: Quality::Timeout,
            },
        };
        Ok((reading, txn.duration_ns()))
    }

    /// Read a property through a live handle. A device that does not answer
    /// propagates as a timeout error.
    pub fn get_property(
        &mut self,
        handle: &DeviceHandle,
        property: &str,
        at: ArrayTime,
    ) -> Result<PropertyReading> {
        self.check_handle(handle)?;
        let (reading, _) = self.poll_property(&handle.device, property, at)?;
        if reading.quality == Quality::Timeout {
            return Err(Error::Timeout(format!("{}:{property}", handle.device)));
        }
        Ok(reading)
    }

    /// Write a property immediately (no event tag). Range and access are
    /// checked before any bus traffic. Returns the instant the write
    /// applied.
    pub fn set_property_now(
        &mut self,
        handle: &DeviceHandle,
        property: &str,
        value: f64,
        at: ArrayTime,
    ) -> Result<ArrayTime> {
        self.check_handle(handle)?;
        let entry = self.entry(&handle.device)?;
        let prop = Self::property_spec(entry, property)?;
        if prop.access != Access::ReadWrite {
            return Err(Error::Usage(format!(
                "property {property:?} of {:?} is read-only",
                handle.device
            )));
        }
        if let Some([lo, hi]) = prop.range {
            if value < lo || value > hi {
                return Err(Error::Range(format!(
                    "{value} outside [{lo}, {hi}] for {}:{property}",
                    handle.device
                )));
            }
        }
        let payload = prop.codec.encode(value)?;
        let addr = NodeAddress::new(entry.spec.node, rca_write_now(prop.rca))?;
        let start = at.max(self.bus.free_at());
        let txn = self.bus.poll(addr, &payload, start)?;
        if txn.response == BusResponse::Timeout {
            return Err(Error::Timeout(format!("{}:{property}", handle.device)));
        }
        Ok(txn.end)
    }

    /// Attach a periodic monitor. The attach fails with `Overcommitted` when
    /// the station's monitors would no longer fit one 48 ms period of wire
    /// time.
    pub fn attach_monitor(&mut self, spec: MonitorSpec) -> Result<u64> {
        if spec.period_events == 0 {
            return Err(Error::Usage("monitor period must be at least 1 event".into()));
        }
        let entry = self.entry(&spec.device)?;
        let prop = Self::property_spec(entry, &spec.property)?;
        let round_trip_ns = 2 * self.bus.model().frame_duration_ns(prop.codec.width());

        let committed: u64 = self.monitors.iter().map(|m| m.round_trip_ns).sum();
        if committed + round_trip_ns > EVENT_PERIOD_NS {
            return Err(Error::Overcommitted(format!(
                "monitors on {} would need {} ns of wire time per period",
                self.name,
                committed + round_trip_ns
            )));
        }

        let id = self.next_monitor_id;
        self.next_monitor_id += 1;
        self.monitors.push(ActiveMonitor {
            id,
            spec,
            round_trip_ns,
        });
        Ok(id)
    }

    pub fn detach_monitor(&mut self, id: u64) -> Result<()> {
        let before = self.monitors.len();
        self.monitors.retain(|m| m.id != id);
        if self.monitors.len() == before {
            return Err(Error::NameNotFound(format!("monitor {id}")));
        }
        Ok(())
    }

    /// Attach an alarm on a property. Alarms evaluate on monitor samples, so
    /// one without a monitor is legal but dormant.
    pub fn attach_alarm(&mut self, device: &str, property: &str, cfg: AlarmCfg) -> Result<()> {
        let entry = self.entry(device)?;
        Self::property_spec(entry, property)?;
        if !(cfg.lo <= cfg.hi) {
            return Err(Error::Usage(format!(
                "alarm limits [{}, {}] are inverted",
                cfg.lo, cfg.hi
            )));
        }
        if cfg.hysteresis < 0.0 {
            return Err(Error::Usage("alarm hysteresis is negative".into()));
        }
        self.alarms.push(ActiveAlarm {
            device: device.to_string(),
            property: property.to_string(),
            cfg,
            raised: false,
        });
        Ok(())
    }

    /// Run every matching alarm state machine against a fresh sample.
    /// Raises fire on leaving [lo, hi]; clears require re-entering by the
    /// hysteresis margin. Edges alternate by construction.
    pub(crate) fn eval_alarms(&mut self, sample: &Sample) {
        if sample.quality == Quality::Timeout {
            return;
        }
        for alarm in &mut self.alarms {
            if alarm.device != sample.device || alarm.property != sample.property {
                continue;
            }
            let v = sample.value;
            let kind = if !alarm.raised && (v < alarm.cfg.lo || v > alarm.cfg.hi) {
                alarm.raised = true;
                AlarmKind::Raised
            } else if alarm.raised
                && v >= alarm.cfg.lo + alarm.cfg.hysteresis
                && v <= alarm.cfg.hi - alarm.cfg.hysteresis
            {
                alarm.raised = false;
                AlarmKind::Cleared
            } else {
                continue;
            };
            self.alarm_log.push(AlarmEvent {
                device: sample.device.clone(),
                property: sample.property.clone(),
                kind,
                value: v,
                event_seq: sample.event_seq,
                offset_ns: sample.offset_ns,
            });
        }
    }

    pub(crate) fn collector_for(&mut self, channel: &str) -> &mut Collector {
        let name = &self.name;
        self.collectors
            .entry(channel.to_string())
            .or_insert_with(|| Collector::new(format!("{name}/{channel}")))
    }

    /// Close the period at `event`: flush every collector that has samples.
    pub(crate) fn flush_collectors(&mut self, event: TimingEvent) -> Vec<(String, Batch)> {
        let mut out = Vec::new();
        for (channel, collector) in &mut self.collectors {
            if let Some(batch) = collector.flush(event) {
                out.push((channel.clone(), batch));
            }
        }
        out
    }

    /// Total samples accepted by this station's collectors.
    pub fn samples_collected(&self) -> u64 {
        self.collectors.values().map(Collector::collected).sum()
    }

    /// Copy of a device's hardware write journal.
    pub fn write_journal(&self, device: &str) -> Result<Vec<WriteRecord>> {
        Ok(self.entry(device)?.hw.journal())
    }

    /// Probe of FTS hardware state, for instruments and tests.
    pub fn fts_snapshot(&self, device: &str) -> Result<FtsSnapshot> {
        match &self.entry(device)?.hw {
            Hw::Fts(h) => h.borrow().snapshot().ok_or_else(|| {
                Error::Usage(format!("{device:?} has not seen a timing event yet"))
            }),
            Hw::Generic(_) => Err(Error::Usage(format!("{device:?} is not an fts device"))),
        }
    }

    /// Total phase of an FTS device at instant `t`.
    pub fn fts_sample_phase(&self, device: &str, t: ArrayTime) -> Result<f64> {
        match &self.entry(device)?.hw {
            Hw::Fts(h) => h.borrow().sample_phase(t),
            Hw::Generic(_) => Err(Error::Usage(format!("{device:?} is not an fts device"))),
        }
    }

    /// Tracking phase of an FTS device at instant `t`, without the switching
    /// offset. This is the quantity a phase program commands.
    pub fn fts_tracking_phase(&self, device: &str, t: ArrayTime) -> Result<f64> {
        match &self.entry(device)?.hw {
            Hw::Fts(h) => h.borrow().tracking_phase(t),
            Hw::Generic(_) => Err(Error::Usage(format!("{device:?} is not an fts device"))),
        }
    }

    /// Deliver one timing pulse: clock first, then every device endpoint.
    pub(crate) fn on_pulse(&mut self, event: TimingEvent) {
        if self.clock.is_synchronized() {
            self.clock.on_pulse().expect("synchronized");
        } else {
            self.clock.sync(event.seq, event.tai);
        }
        self.bus.pulse_all(event);
    }
}
