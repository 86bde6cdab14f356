//! Scenario files: a topology plus an optional script.
//!
//! A scenario is JSON with a `topology` (the device configuration), jitter
//! bounds, extra monitors and alarms beyond those the configuration
//! declares, and a script of wall-clock-stamped actions. A bare device
//! configuration is also accepted as a scenario with an empty script, so
//! `run --config` works on either file shape. Run duration and seed are
//! run parameters, not scenario content.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::framework::config::ConfigDoc;
use crate::timebase::EVENT_PERIOD_NS;

/// Bounds of the two modeled timing imperfections, both drawn uniformly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterCfg {
    /// Largest pulse delivery offset, per station per event.
    pub pulse_ns: u64,
    /// Largest submit-to-station message latency, per command.
    pub message_ns: u64,
}

impl Default for JitterCfg {
    fn default() -> Self {
        JitterCfg {
            pulse_ns: 500,
            message_ns: 2_000_000,
        }
    }
}

impl JitterCfg {
    /// Pulse jitter must stay well under the period for pulse counting to
    /// be unambiguous; message latency under one period is what makes the
    /// two-event minimum lead sufficient.
    pub fn validate(&self) -> Result<()> {
        if self.pulse_ns >= EVENT_PERIOD_NS / 2 {
            return Err(Error::Config {
                path: "jitter.pulse_ns".into(),
                message: format!("must be below half a period ({} ns)", EVENT_PERIOD_NS / 2),
            });
        }
        if self.message_ns >= EVENT_PERIOD_NS {
            return Err(Error::Config {
                path: "jitter.message_ns".into(),
                message: format!("must be below one period ({EVENT_PERIOD_NS} ns)"),
            });
        }
        Ok(())
    }
}

/// An extra monitor to attach at build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorEntry {
    pub device: String,
    pub property: String,
    pub period_events: u64,
    #[serde(default = "default_channel")]
    pub channel: String,
    #[serde(default)]
    pub start_event: u64,
}

fn default_channel() -> String {
    "telemetry".into()
}

/// An extra alarm to attach at build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmEntry {
    pub device: String,
    pub property: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub hysteresis: f64,
}

/// One scripted action, applied at wall time `at_s` seconds into the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScriptEntry {
    /// Submit a time-tagged property write.
    TimedWrite {
        at_s: f64,
        device: String,
        property: String,
        value: f64,
        execute_event: u64,
    },
    /// Submit a phase program adoption (synthesizers only). The program's
    /// epoch is its activation event.
    PhaseProgram {
        at_s: f64,
        device: String,
        execute_event: u64,
        #[serde(default)]
        phi0_turns: f64,
        #[serde(default)]
        rate_turns_per_s: f64,
        #[serde(default)]
        accel_turns_per_s2: f64,
        #[serde(default = "default_true")]
        chirp: bool,
    },
    /// Write a property immediately, outside the event machinery.
    SetNow {
        at_s: f64,
        device: String,
        property: String,
        value: f64,
    },
}

fn default_true() -> bool {
    true
}

impl ScriptEntry {
    pub fn at_s(&self) -> f64 {
        match self {
            ScriptEntry::TimedWrite { at_s, .. }
            | ScriptEntry::PhaseProgram { at_s, .. }
            | ScriptEntry::SetNow { at_s, .. } => *at_s,
        }
    }

    pub fn at_ns(&self) -> u64 {
        (self.at_s() * 1e9).round() as u64
    }
}

/// A runnable description of an array plus what to do to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub topology: ConfigDoc,
    #[serde(default)]
    pub jitter: JitterCfg,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub monitors: Vec<MonitorEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alarms: Vec<AlarmEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub script: Vec<ScriptEntry>,
}

impl Scenario {
    /// A scenario with no script around an existing topology.
    pub fn bare(topology: ConfigDoc) -> Self {
        Scenario {
            topology,
            jitter: JitterCfg::default(),
            monitors: Vec::new(),
            alarms: Vec::new(),
            script: Vec::new(),
        }
    }

    /// Parse scenario JSON. A document without a `topology` key is read as
    /// a bare device configuration.
    pub fn parse(text: &str) -> Result<Scenario> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("topology").is_some() {
            Ok(serde_json::from_value(value)?)
        } else {
            Ok(Scenario::bare(serde_json::from_value(value)?))
        }
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Scenario::parse(&text)
    }

    /// Check the script against a concrete run length. Actions must fall
    /// inside processed periods and execute events must be latchable by the
    /// final pulse.
    pub fn validate(&self, n_events: u64) -> Result<()> {
        self.jitter.validate()?;
        let horizon_ns = n_events * EVENT_PERIOD_NS;
        for (i, entry) in self.script.iter().enumerate() {
            let at = entry.at_s();
            if !at.is_finite() || at < 0.0 {
                return Err(Error::Config {
                    path: format!("script[{i}].at_s"),
                    message: format!("{at} is not a non-negative time"),
                });
            }
            if entry.at_ns() >= horizon_ns {
                return Err(Error::Config {
                    path: format!("script[{i}].at_s"),
                    message: format!(
                        "{at} s falls beyond the run's {n_events} events ({} s)",
                        horizon_ns as f64 * 1e-9
                    ),
                });
            }
            let execute = match entry {
                ScriptEntry::TimedWrite { execute_event, .. }
                | ScriptEntry::PhaseProgram { execute_event, .. } => Some(*execute_event),
                ScriptEntry::SetNow { .. } => None,
            };
            if let Some(e) = execute {
                if e > n_events {
                    return Err(Error::Config {
                        path: format!("script[{i}].execute_event"),
                        message: format!("event {e} is after the final pulse ({n_events})"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPOLOGY: &str = r#"{
        "buses": [{"name": "ANT1"}],
        "devices": [{
            "name": "ANT1/CRYO", "kind": "generic", "lifecycle": "persistent",
            "bus": "ANT1", "node": 2,
            "properties": [{
                "name": "SETPOINT_K", "access": "read-write", "kind": "fixed-point",
                "units": "K", "range": [4.0, 300.0], "rca": 2,
                "codec": "ufixed:2:0.01", "default": 77.0
            }]
        }]
    }"#;

    #[test]
    fn bare_config_parses_as_scenario() {
        let s = Scenario::parse(TOPOLOGY).unwrap();
        assert!(s.script.is_empty());
        assert_eq!(s.topology.devices.len(), 1);
        assert_eq!(s.jitter, JitterCfg::default());
    }

    #[test]
    fn full_scenario_round_trips() {
        let s = Scenario {
            topology: serde_json::from_str(TOPOLOGY).unwrap(),
            jitter: JitterCfg {
                pulse_ns: 100,
                message_ns: 1_000_000,
            },
            monitors: vec![MonitorEntry {
                device: "ANT1/CRYO".into(),
                property: "SETPOINT_K".into(),
                period_events: 5,
                channel: "telemetry".into(),
                start_event: 0,
            }],
            alarms: vec![],
            script: vec![ScriptEntry::TimedWrite {
                at_s: 0.5,
                device: "ANT1/CRYO".into(),
                property: "SETPOINT_K".into(),
                value: 80.0,
                execute_event: 20,
            }],
        };
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(Scenario::parse(&text).unwrap(), s);
    }

    #[test]
    fn validate_rejects_actions_beyond_the_run() {
        let mut s = Scenario::parse(TOPOLOGY).unwrap();
        s.script.push(ScriptEntry::SetNow {
            at_s: 10.0,
            device: "ANT1/CRYO".into(),
            property: "SETPOINT_K".into(),
            value: 80.0,
        });
        // 10 s is beyond a 100-event (4.8 s) run.
        let err = s.validate(100).unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
        assert!(s.validate(250).is_ok());
    }

    #[test]
    fn validate_rejects_unlatchable_execute_events() {
        let mut s = Scenario::parse(TOPOLOGY).unwrap();
        s.script.push(ScriptEntry::TimedWrite {
            at_s: 0.0,
            device: "ANT1/CRYO".into(),
            property: "SETPOINT_K".into(),
            value: 80.0,
            execute_event: 101,
        });
        assert!(s.validate(100).is_err());
    }

    #[test]
    fn jitter_bounds_are_checked() {
        let bad = JitterCfg {
            pulse_ns: 0,
            message_ns: EVENT_PERIOD_NS,
        };
        assert!(bad.validate().is_err());
        assert!(JitterCfg::default().validate().is_ok());
    }
}
