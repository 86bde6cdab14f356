//! Configuration database: the static description of buses, devices and
//! properties, loaded from JSON and validated into a `Registry`.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

use super::codec::Codec;
use crate::error::{Error, Result};
use crate::simbus::{NODE_BITS, RCA_BITS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub buses: Vec<BusCfg>,
    pub devices: Vec<DeviceCfg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusCfg {
    pub name: String,
    #[serde(default = "default_bitrate")]
    pub bitrate_bps: u64,
    #[serde(default = "default_response_timeout")]
    pub response_timeout_ns: u64,
}

fn default_bitrate() -> u64 {
    1_000_000
}

fn default_response_timeout() -> u64 {
    1_000_000
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    /// Fringe tracking synthesizer: phase-critical hardware with its own
    /// register semantics and an on-board pattern generator.
    Fts,
    /// Ordinary register-file device.
    Generic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lifecycle {
    /// Instantiated at startup, never destroyed.
    Persistent,
    /// Instantiated on first resolve, destroyed when the last handle is
    /// released.
    Transient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceCfg {
    pub name: String,
    pub kind: DeviceKind,
    pub lifecycle: Lifecycle,
    pub bus: String,
    pub node: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, serde_json::Value>,
    pub properties: Vec<PropertyCfg>,
}

impl DeviceCfg {
    pub fn property(&self, name: &str) -> Option<&PropertyCfg> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// Integer parameter lookup with a domain-checked error path.
    pub fn param_u64(&self, key: &str) -> Result<Option<u64>> {
        match self.params.get(key) {
            None => Ok(None),
            Some(v) => v.as_u64().map(Some).ok_or_else(|| {
                Error::Config {
                    path: format!("device {} params.{key}", self.name),
                    message: "expected an unsigned integer".into(),
                }
            }),
        }
    }

    /// Window slot this device's timed traffic is laid into. Defaults to 0.
    pub fn window_slot(&self) -> u8 {
        self.params
            .get("window_slot")
            .and_then(|v| v.as_u64())
            .unwrap_or(0) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Access {
    ReadOnly,
    ReadWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueKind {
    Integer,
    FixedPoint,
    Enum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertyCfg {
    pub name: String,
    pub access: Access,
    pub kind: ValueKind,
    #[serde(default)]
    pub units: String,
    /// Inclusive [lo, hi] engineering-value range; values outside flag the
    /// sample quality and refuse writes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    pub rca: u16,
    pub codec: Codec,
    /// When set, the device's station polls this property every N events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_period_events: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alarm: Option<AlarmCfg>,
    /// Initial register contents, in engineering units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmCfg {
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub hysteresis: f64,
}

/// A validated configuration database. Construction is the only way to get
/// one, so holding a `Registry` means every cross-reference checked out.
#[derive(Clone, Debug, PartialEq)]
pub struct Registry {
    doc: ConfigDoc,
    device_index: BTreeMap<String, usize>,
    bus_index: BTreeMap<String, usize>,
}

/// Parse and validate a configuration database from JSON text.
pub fn load_config(text: &str) -> Result<Registry> {
    let doc: ConfigDoc = serde_json::from_str(text).map_err(|e| Error::Config {
        path: "<root>".into(),
        message: e.to_string(),
    })?;
    Registry::from_doc(doc)
}

impl Registry {
    pub fn from_doc(doc: ConfigDoc) -> Result<Self> {
        let fail = |path: String, message: String| Error::Config { path, message };

        let mut bus_index = BTreeMap::new();
        for (i, bus) in doc.buses.iter().enumerate() {
            let path = format!("buses[{i}]");
            if bus.name.is_empty() {
                return Err(fail(path, "bus name is empty".into()));
            }
            if bus.bitrate_bps == 0 {
                return Err(fail(path, "bitrate_bps is zero".into()));
            }
            if bus_index.insert(bus.name.clone(), i).is_some() {
                return Err(fail(path, format!("duplicate bus name {:?}", bus.name)));
            }
        }

        let mut device_index = BTreeMap::new();
        let mut nodes_per_bus: BTreeMap<&str, BTreeSet<u16>> = BTreeMap::new();
        for (i, dev) in doc.devices.iter().enumerate() {
            let path = format!("devices[{i}]");
            if dev.name.is_empty() {
                return Err(fail(path, "device name is empty".into()));
            }
            if device_index.insert(dev.name.clone(), i).is_some() {
                return Err(fail(path, format!("duplicate device name {:?}", dev.name)));
            }
            if !bus_index.contains_key(&dev.bus) {
                return Err(fail(path, format!("unknown bus {:?}", dev.bus)));
            }
            if u32::from(dev.node) >= 1 << NODE_BITS {
                return Err(fail(path, format!("node {} does not fit 11 bits", dev.node)));
            }
            if !nodes_per_bus.entry(&dev.bus).or_default().insert(dev.node) {
                return Err(fail(
                    path,
                    format!("node {} used twice on bus {:?}", dev.node, dev.bus),
                ));
            }

            if dev.kind == DeviceKind::Fts {
                match dev.param_u64("walsh_index")? {
                    Some(k) if (1..=63).contains(&k) => {}
                    Some(k) => {
                        return Err(fail(path, format!("walsh_index {k} must be 1..=63")));
                    }
                    None => {
                        return Err(fail(path, "fts device needs params.walsh_index".into()));
                    }
                }
            }
            if let Some(slot) = dev.param_u64("window_slot")? {
                if slot >= 16 {
                    return Err(fail(path, format!("window_slot {slot} must be 0..=15")));
                }
            }

            let mut rcas = BTreeSet::new();
            let mut names = BTreeSet::new();
            for (j, prop) in dev.properties.iter().enumerate() {
                let ppath = format!("devices[{i}].properties[{j}]");
                if prop.name.is_empty() {
                    return Err(fail(ppath, "property name is empty".into()));
                }
                if !names.insert(prop.name.clone()) {
                    return Err(fail(ppath, format!("duplicate property {:?}", prop.name)));
                }
                // Register numbers live in the low 16 bits of the RCA; the
                // two bits above select the operation.
                if u32::from(prop.rca) >= 1 << (RCA_BITS - 2) {
                    return Err(fail(ppath, format!("rca {:#x} must fit 16 bits", prop.rca)));
                }
                if !rcas.insert(prop.rca) {
                    return Err(fail(ppath, format!("duplicate rca {:#x}", prop.rca)));
                }
                if let Some([lo, hi]) = prop.range {
                    if !(lo <= hi) {
                        return Err(fail(ppath, format!("range [{lo}, {hi}] is inverted")));
                    }
                }
                if let Some(p) = prop.monitor_period_events {
                    if p == 0 {
                        return Err(fail(ppath, "monitor_period_events is zero".into()));
                    }
                }
                if let Some(a) = &prop.alarm {
                    if !(a.lo <= a.hi) {
                        return Err(fail(ppath, format!("alarm [{}, {}] is inverted", a.lo, a.hi)));
                    }
                    if a.hysteresis < 0.0 {
                        return Err(fail(ppath, "alarm hysteresis is negative".into()));
                    }
                }
                if let Some(d) = prop.default {
                    prop.codec.encode(d).map_err(|e| Error::Config {
                        path: ppath.clone(),
                        message: format!("default value: {e}"),
                    })?;
                }
            }
        }

        for (i, dev) in doc.devices.iter().enumerate() {
            if let Some(parent) = &dev.parent {
                if !device_index.contains_key(parent) {
                    return Err(fail(
                        format!("devices[{i}]"),
                        format!("unknown parent {parent:?}"),
                    ));
                }
                if parent == &dev.name {
                    return Err(fail(format!("devices[{i}]"), "device is its own parent".into()));
                }
            }
        }

        Ok(Registry {
            doc,
            device_index,
            bus_index,
        })
    }

    pub fn doc(&self) -> &ConfigDoc {
        &self.doc
    }

    pub fn buses(&self) -> &[BusCfg] {
        &self.doc.buses
    }

    pub fn devices(&self) -> &[DeviceCfg] {
        &self.doc.devices
    }

    pub fn device(&self, name: &str) -> Result<&DeviceCfg> {
        self.device_index
            .get(name)
            .map(|&i| &self.doc.devices[i])
            .ok_or_else(|| Error::NameNotFound(format!("device {name:?}")))
    }

    pub fn bus(&self, name: &str) -> Result<&BusCfg> {
        self.bus_index
            .get(name)
            .map(|&i| &self.doc.buses[i])
            .ok_or_else(|| Error::NameNotFound(format!("bus {name:?}")))
    }

    /// Canonical JSON form. `load_config(emit(r))` reproduces `r` exactly.
    pub fn emit(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.doc).expect("config serializes");
        s.push('\n');
        s
    }
}
