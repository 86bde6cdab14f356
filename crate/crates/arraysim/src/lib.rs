//! Deterministic desk-scale simulator of a distributed control system for a
//! radio interferometer test array.
//!
//! The crate models the control side of a small aperture-synthesis array:
//! a master clock broadcasting 48 ms timing events, slave clocks that count
//! pulses instead of trusting them individually, field buses polled by one
//! master per station, a configuration database that declares every device
//! and property, an executive that dispatches time-tagged commands into
//! per-device bus windows one period early, a lossless monitor pipeline
//! from periodic polls to an archive, and the fringe tracking synthesizer
//! with its Walsh phase switching pattern.
//!
//! Everything is simulated on one thread with integer-nanosecond time, so
//! runs are exactly reproducible: the same configuration, scenario and seed
//! give byte-identical archives.
//!
//! Start with [`harness::Simulation`] for whole-array runs, or the module
//! docs of [`timebase`], [`simbus`], [`executive`] and [`fts`] for the
//! individual mechanisms. The `examples/` directory exercises each major
//! capability end to end.

pub mod error;
pub mod executive;
pub mod framework;
pub mod fts;
pub mod harness;
pub mod monitor_stream;
pub mod simbus;
pub mod timebase;

pub use error::{Error, Result};
pub use executive::{CommandAction, DispatchStats, LeadPolicy, TimedCommand, WindowPolicy};
pub use framework::{load_config, Registry, Station};
pub use fts::PhaseFunction;
pub use harness::{
    default_topology, demo_scenario, run_scenario, CommandBody, CommandRequest, RunOutcome,
    RunReport, Scenario, Simulation,
};
pub use timebase::{ArrayTime, MasterClock, TimingEvent, EVENT_PERIOD_NS};
