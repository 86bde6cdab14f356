//! Device and property management: the configuration database, codecs, the
//! register protocol convention, device lifecycle, and the station objects
//! that tie hardware to buses.

pub mod codec;
pub mod config;
pub mod device;

pub use codec::Codec;
pub use config::{
    load_config, Access, AlarmCfg, BusCfg, ConfigDoc, DeviceCfg, DeviceKind, Lifecycle,
    PropertyCfg, Registry, ValueKind,
};
pub use device::{
    AlarmEvent, AlarmKind, DeviceHandle, GenericHw, MonitorSpec, PropertyReading, Station,
    WriteRecord,
};
