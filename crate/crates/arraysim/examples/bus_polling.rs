//! The field bus: a polled master/slave wire with explicit frame timing.
//!
//! Every interaction is one poll: the master sends a frame, the addressed
//! node answers (or stays silent and the master times out after 1 ms).
//! Frame duration follows from the bit count, so bus occupancy and
//! sustained operation rates fall out of arithmetic, not tuning.

use std::cell::RefCell;
use std::rc::Rc;

use arraysim::simbus::{BusModel, BusResponse, CanBus, CanNode, NodeAddress};
use arraysim::{ArrayTime, TimingEvent};

/// A minimal node: one readable register at address 0x01.
struct Thermometer {
    raw: u16,
}

impl CanNode for Thermometer {
    fn poll(&mut self, rca: u32, _request: &[u8], _at: ArrayTime) -> Option<Vec<u8>> {
        match rca {
            0x01 => Some(self.raw.to_be_bytes().to_vec()),
            _ => None, // unknown register: no response, master times out
        }
    }

    fn on_pulse(&mut self, _event: TimingEvent) {}
}

fn main() -> arraysim::Result<()> {
    let model = BusModel::default();

    println!("frame model at {} bps, {} overhead bits:", model.bitrate_bps, model.frame_overhead_bits);
    for dlc in [0usize, 2, 8] {
        println!(
            "  dlc {dlc}: {:>3} us/frame, {:>9.3} polled ops/s sustained",
            model.frame_duration_ns(dlc) / 1000,
            model.max_polled_ops_per_second(dlc)?
        );
    }

    let mut bus = CanBus::new("ANT1", model);
    bus.register_node(5, Rc::new(RefCell::new(Thermometer { raw: 7219 })))?;

    // A successful read: request frame out, response frame back.
    let addr = NodeAddress::new(5, 0x01)?;
    let txn = bus.poll(addr, &[0, 0], ArrayTime::from_ns(1_000_000))?;
    match &txn.response {
        BusResponse::Frame(f) => println!(
            "read node 5 reg 0x01 -> {:?} ({} us on the wire, done at {})",
            f.payload(),
            txn.duration_ns() / 1000,
            txn.end
        ),
        BusResponse::Timeout => unreachable!(),
    }

    // A poll to a register the node does not serve: 1 ms timeout after the
    // request frame.
    let silent = bus.poll(NodeAddress::new(5, 0x3F)?, &[0, 0], txn.end)?;
    assert_eq!(silent.response, BusResponse::Timeout);
    println!(
        "read node 5 reg 0x3f -> timeout ({} us including the request frame)",
        silent.duration_ns() / 1000
    );

    // The wire is serial: a poll before the bus is free is an error the
    // caller must schedule around, never silent queueing.
    let early = bus.poll(addr, &[0, 0], ArrayTime::from_ns(1_000_000));
    println!("overlapping poll rejected: {}", early.unwrap_err());

    println!(
        "wire occupancy in the first 48 ms: {} us over {} transactions",
        bus.occupancy_between(ArrayTime::ZERO, ArrayTime::from_ns(48_000_000)) / 1000,
        bus.transactions().len()
    );
    Ok(())
}
