//! Simulated polled CAN bus.
//!
//! The model is a 1 Mbps wire with a single master per bus. Every exchange
//! is a poll: the master sends one frame to a node and the node answers with
//! one frame of the same payload width. A frame costs 67 bits of protocol
//! overhead plus 8 bits per payload byte, so a full-payload round trip is
//! 2 * (67 + 64) = 262 us and one bus supports
//! `bitrate / (2 * (67 + 8 * dlc))` polled operations per second.
//!
//! The bus is a pure transport: it moves payload bytes and keeps the wire
//! accounting honest (serialization, durations, timeouts). What the bytes
//! mean is the business of the device framework layered on top.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::timebase::{ArrayTime, TimingEvent};

/// CAN payloads carry at most 8 bytes.
pub const MAX_DLC: usize = 8;

/// Bits of protocol overhead per frame (arbitration, control, CRC, ack,
/// interframe gap) on top of the payload bits.
pub const FRAME_OVERHEAD_BITS: u64 = 67;

/// Node addresses occupy the top 11 bits of the 29-bit identifier.
pub const NODE_BITS: u32 = 11;
/// Relative CAN addresses occupy the low 18 bits.
pub const RCA_BITS: u32 = 18;

/// One CAN frame: a 29-bit identifier and up to 8 payload bytes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CanFrame {
    id: u32,
    payload: Vec<u8>,
}

impl CanFrame {
    pub fn new(id: u32, payload: &[u8]) -> Result<Self> {
        if id >= 1 << (NODE_BITS + RCA_BITS) {
            return Err(Error::Domain(format!(
                "identifier {id:#x} does not fit in 29 bits"
            )));
        }
        if payload.len() > MAX_DLC {
            return Err(Error::Domain(format!(
                "payload of {} bytes exceeds the 8-byte CAN limit",
                payload.len()
            )));
        }
        Ok(CanFrame {
            id,
            payload: payload.to_vec(),
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn dlc(&self) -> usize {
        self.payload.len()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }
}

/// A device's place on a bus: which node it is and which register inside
/// the node a frame addresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeAddress {
    pub node: u16,
    pub rca: u32,
}

impl NodeAddress {
    pub fn new(node: u16, rca: u32) -> Result<Self> {
        if u32::from(node) >= 1 << NODE_BITS {
            return Err(Error::Domain(format!(
                "node {node} does not fit in {NODE_BITS} bits"
            )));
        }
        if rca >= 1 << RCA_BITS {
            return Err(Error::Domain(format!(
                "rca {rca:#x} does not fit in {RCA_BITS} bits"
            )));
        }
        Ok(NodeAddress { node, rca })
    }

    /// Pack into the 29-bit identifier: node in the top 11 bits, rca below.
    pub fn encode_id(self) -> u32 {
        (u32::from(self.node) << RCA_BITS) | self.rca
    }

    /// Inverse of `encode_id`; total on all 29-bit identifiers.
    pub fn decode_id(id: u32) -> Result<Self> {
        if id >= 1 << (NODE_BITS + RCA_BITS) {
            return Err(Error::Domain(format!(
                "identifier {id:#x} does not fit in 29 bits"
            )));
        }
        Ok(NodeAddress {
            node: (id >> RCA_BITS) as u16,
            rca: id & ((1 << RCA_BITS) - 1),
        })
    }
}

/// Wire parameters of one bus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BusModel {
    pub bitrate_bps: u64,
    pub frame_overhead_bits: u64,
    pub response_timeout_ns: u64,
}

impl Default for BusModel {
    fn default() -> Self {
        BusModel {
            bitrate_bps: 1_000_000,
            frame_overhead_bits: FRAME_OVERHEAD_BITS,
            response_timeout_ns: 1_000_000,
        }
    }
}

impl BusModel {
    /// Time one frame occupies the wire.
    pub fn frame_duration_ns(&self, dlc: usize) -> u64 {
        let bits = self.frame_overhead_bits + 8 * dlc as u64;
        bits * 1_000_000_000 / self.bitrate_bps
    }

    /// Polled operations (request frame + response frame) per second at a
    /// given payload width.
    pub fn max_polled_ops_per_second(&self, dlc: usize) -> Result<f64> {
        if dlc > MAX_DLC {
            return Err(Error::Domain(format!(
                "dlc {dlc} exceeds the 8-byte CAN limit"
            )));
        }
        if self.bitrate_bps == 0 {
            return Err(Error::Domain("bitrate is zero".into()));
        }
        let bits_per_op = 2 * (self.frame_overhead_bits + 8 * dlc as u64);
        Ok(self.bitrate_bps as f64 / bits_per_op as f64)
    }
}

/// Anything that answers polls on a bus. The timing pulse is delivered
/// out-of-band, straight to the endpoint, never as bus traffic.
pub trait CanNode {
    /// Answer a poll addressed to `rca`. `at` is the instant the transaction
    /// completes on the wire; state read or written belongs to that instant.
    /// `None` means the node does not respond (the master times out).
    fn poll(&mut self, rca: u32, request: &[u8], at: ArrayTime) -> Option<Vec<u8>>;

    /// Receive one timing pulse.
    fn on_pulse(&mut self, event: TimingEvent);
}

/// Outcome of one poll as seen on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BusResponse {
    Frame(CanFrame),
    Timeout,
}

/// One completed exchange, as recorded in the bus log.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BusTransaction {
    pub request: CanFrame,
    pub response: BusResponse,
    pub start: ArrayTime,
    pub end: ArrayTime,
}

impl BusTransaction {
    pub fn duration_ns(&self) -> u64 {
        self.end.ns_since(self.start)
    }
}

/// One bus: a set of nodes, a wire model, and a totally ordered transaction
/// log. The single master (the caller) drives all traffic through `poll`.
pub struct CanBus {
    name: String,
    model: BusModel,
    nodes: BTreeMap<u16, Rc<RefCell<dyn CanNode>>>,
    free_at: ArrayTime,
    log: Vec<BusTransaction>,
}

impl CanBus {
    pub fn new(name: impl Into<String>, model: BusModel) -> Self {
        CanBus {
            name: name.into(),
            model,
            nodes: BTreeMap::new(),
            free_at: ArrayTime::ZERO,
            log: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn model(&self) -> &BusModel {
        &self.model
    }

    pub fn register_node(&mut self, node: u16, endpoint: Rc<RefCell<dyn CanNode>>) -> Result<()> {
        if u32::from(node) >= 1 << NODE_BITS {
            return Err(Error::Domain(format!(
                "node {node} does not fit in {NODE_BITS} bits"
            )));
        }
        if self.nodes.insert(node, endpoint).is_some() {
            return Err(Error::Domain(format!(
                "node {node} registered twice on bus {}",
                self.name
            )));
        }
        Ok(())
    }

    /// Instant the wire becomes idle after the last transaction.
    pub fn free_at(&self) -> ArrayTime {
        self.free_at
    }

    /// Deliver one pulse to every node on this bus.
    pub fn pulse_all(&mut self, event: TimingEvent) {
        for endpoint in self.nodes.values() {
            endpoint.borrow_mut().on_pulse(event);
        }
    }

    /// Run one polled exchange starting exactly at `at`.
    ///
    /// The request goes out, then either the response frame (same payload
    /// width as the request, the protocol is symmetric) or a timeout wait of
    /// `response_timeout_ns`. Starting before the wire is free is a
    /// scheduling bug and fails with `BusBusy`.
    pub fn poll(&mut self, addr: NodeAddress, request: &[u8], at: ArrayTime) -> Result<BusTransaction> {
        if at < self.free_at {
            return Err(Error::BusBusy {
                at_ns: at.as_ns(),
                free_at_ns: self.free_at.as_ns(),
            });
        }
        let frame = CanFrame::new(addr.encode_id(), request)?;
        let frame_ns = self.model.frame_duration_ns(frame.dlc());

        let response = match self.nodes.get(&addr.node) {
            Some(endpoint) => {
                let end = at.plus_ns(2 * frame_ns);
                endpoint.borrow_mut().poll(addr.rca, request, end)
            }
            None => None,
        };

        let txn = match response {
            Some(bytes) => {
                if bytes.len() != request.len() {
                    return Err(Error::Domain(format!(
                        "node {} answered {} bytes to a {}-byte poll; the protocol is symmetric",
                        addr.node,
                        bytes.len(),
                        request.len()
                    )));
                }
                let end = at.plus_ns(2 * frame_ns);
                BusTransaction {
                    request: frame,
                    response: BusResponse::Frame(CanFrame::new(addr.encode_id(), &bytes)?),
                    start: at,
                    end,
                }
            }
            None => BusTransaction {
                request: frame,
                response: BusResponse::Timeout,
                start: at,
                end: at.plus_ns(frame_ns + self.model.response_timeout_ns),
            },
        };

        self.free_at = txn.end;
        self.log.push(txn.clone());
        Ok(txn)
    }

    /// Full transaction log, in wire order.
    pub fn transactions(&self) -> &[BusTransaction] {
        &self.log
    }

    /// Total wire time of transactions that began inside `[start, end)`.
    pub fn occupancy_between(&self, start: ArrayTime, end: ArrayTime) -> u64 {
        // The log is sorted by start time; scan back only as far as needed.
        self.log
            .iter()
            .rev()
            .take_while(|t| t.start >= start)
            .filter(|t| t.start < end)
            .map(|t| t.duration_ns())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimal node: a single register it echoes and stores.
    struct EchoNode {
        reg: Vec<u8>,
        answer: bool,
    }

    impl CanNode for EchoNode {
        fn poll(&mut self, _rca: u32, request: &[u8], _at: ArrayTime) -> Option<Vec<u8>> {
            if !self.answer {
                return None;
            }
            self.reg = request.to_vec();
            Some(self.reg.clone())
        }

        fn on_pulse(&mut self, _event: TimingEvent) {}
    }

    fn bus_with_node(node: u16, answer: bool) -> CanBus {
        let mut bus = CanBus::new("B", BusModel::default());
        bus.register_node(node, Rc::new(RefCell::new(EchoNode { reg: vec![], answer })))
            .unwrap();
        bus
    }

    #[test]
    fn identifier_packing_examples() {
        assert_eq!(NodeAddress::new(0, 0).unwrap().encode_id(), 0);
        assert_eq!(NodeAddress::new(1, 0).unwrap().encode_id(), 262_144);
        assert_eq!(NodeAddress::new(3, 17).unwrap().encode_id(), 786_449);
        let back = NodeAddress::decode_id(786_449).unwrap();
        assert_eq!(back, NodeAddress { node: 3, rca: 17 });
    }

    #[test]
    fn address_limits_are_enforced() {
        assert!(NodeAddress::new(2048, 0).is_err());
        assert!(NodeAddress::new(0, 1 << 18).is_err());
        assert!(NodeAddress::decode_id(1 << 29).is_err());
    }

    #[test]
    fn frame_durations_at_the_wire_rate() {
        let m = BusModel::default();
        assert_eq!(m.frame_duration_ns(0), 67_000);
        assert_eq!(m.frame_duration_ns(8), 131_000);
    }

    #[test]
    fn polled_throughput_formula() {
        let m = BusModel::default();
        let full = m.max_polled_ops_per_second(8).unwrap();
        assert!((full - 3816.793893129771).abs() < 1e-9);
        assert!(full >= 2000.0);
        let empty = m.max_polled_ops_per_second(0).unwrap();
        assert!((empty - 7462.686567164179).abs() < 1e-9);
        assert!(m.max_polled_ops_per_second(9).is_err());
    }

    #[test]
    fn successful_poll_occupies_two_frames() {
        let mut bus = bus_with_node(5, true);
        let addr = NodeAddress::new(5, 0x10).unwrap();
        let t0 = ArrayTime::from_ns(1_000_000);
        let txn = bus.poll(addr, &[1, 2, 3, 4, 5, 6, 7, 8], t0).unwrap();
        assert_eq!(txn.end.ns_since(txn.start), 262_000);
        assert!(matches!(txn.response, BusResponse::Frame(_)));
    }

    #[test]
    fn absent_node_times_out() {
        let mut bus = bus_with_node(5, true);
        let addr = NodeAddress::new(6, 0).unwrap();
        let t0 = ArrayTime::from_ns(500_000);
        let txn = bus.poll(addr, &[0; 8], t0).unwrap();
        assert_eq!(txn.response, BusResponse::Timeout);
        // One request frame on the wire, then the 1 ms response timeout.
        assert_eq!(txn.end.ns_since(txn.start), 131_000 + 1_000_000);
    }

    #[test]
    fn silent_node_times_out() {
        let mut bus = bus_with_node(9, false);
        let addr = NodeAddress::new(9, 0).unwrap();
        let txn = bus.poll(addr, &[0; 4], ArrayTime::ZERO).unwrap();
        assert_eq!(txn.response, BusResponse::Timeout);
        assert_eq!(txn.end.as_ns(), 99_000 + 1_000_000);
    }

    #[test]
    fn overlapping_poll_is_refused() {
        let mut bus = bus_with_node(5, true);
        let addr = NodeAddress::new(5, 0).unwrap();
        bus.poll(addr, &[0; 8], ArrayTime::ZERO).unwrap();
        let err = bus.poll(addr, &[0; 8], ArrayTime::from_ns(100_000)).unwrap_err();
        assert!(matches!(err, Error::BusBusy { .. }));
        // Starting exactly at the free instant is fine.
        let t = bus.free_at();
        bus.poll(addr, &[0; 8], t).unwrap();
    }

    #[test]
    fn log_is_totally_ordered_and_non_overlapping() {
        let mut bus = bus_with_node(5, true);
        let addr = NodeAddress::new(5, 0).unwrap();
        let mut t = ArrayTime::ZERO;
        for k in 0..50 {
            t = if k % 3 == 0 { bus.free_at().plus_ns(7_000) } else { bus.free_at() };
            bus.poll(addr, &[k as u8; 8], t).unwrap();
        }
        let _ = t;
        let log = bus.transactions();
        for pair in log.windows(2) {
            assert!(pair[0].end <= pair[1].start);
        }
    }

    #[test]
    fn duplicate_node_registration_is_rejected() {
        let mut bus = bus_with_node(5, true);
        let dup = Rc::new(RefCell::new(EchoNode { reg: vec![], answer: true }));
        assert!(bus.register_node(5, dup).is_err());
    }

    proptest! {
        #[test]
        fn identifier_round_trip(node in 0u16..2048, rca in 0u32..(1 << 18)) {
            let addr = NodeAddress::new(node, rca).unwrap();
            let id = addr.encode_id();
            prop_assert!(id < (1 << 29));
            prop_assert_eq!(NodeAddress::decode_id(id).unwrap(), addr);
        }

        #[test]
        fn identifier_packing_is_injective(
            a in (0u16..2048, 0u32..(1 << 18)),
            b in (0u16..2048, 0u32..(1 << 18)),
        ) {
            let ia = NodeAddress::new(a.0, a.1).unwrap().encode_id();
            let ib = NodeAddress::new(b.0, b.1).unwrap().encode_id();
            prop_assert_eq!(ia == ib, a == b);
        }

        #[test]
        fn frame_duration_matches_bit_count(dlc in 0usize..=8) {
            let m = BusModel::default();
            prop_assert_eq!(m.frame_duration_ns(dlc), (67 + 8 * dlc as u64) * 1000);
        }
    }
}
