//! Scenario description, loaded from JSON. Field names in the JSON document
//! match the struct fields below; omitted sections take their defaults.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::SetupPolicy;
use crate::frame::PhyRate;
use crate::radio::{PathLossModel, Position};
use crate::steering::{MacMode, SteeringParams};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ScenarioError {
    pub path: String,
    pub message: String,
}

impl ScenarioError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Legacy WLAN: every STA can only use its home AP.
    Baseline,
    #[default]
    Nxwlan,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Nxwlan => "nxwlan",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "nxwlan" => Ok(Mode::Nxwlan),
            other => Err(format!("unknown mode '{other}', expected baseline or nxwlan")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDescriptor {
    pub latency_ms: f64,
    pub capacity_mbps: f64,
}

impl LinkDescriptor {
    pub fn new(latency_ms: f64, capacity_mbps: f64) -> Self {
        LinkDescriptor { latency_ms, capacity_mbps }
    }

    pub fn latency_us(&self) -> u64 {
        (self.latency_ms * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Backhaul {
    pub dl: LinkDescriptor,
    pub ul: LinkDescriptor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EapConfig {
    pub id: NodeId,
    pub name: String,
    /// Defaults to the name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssid: Option<String>,
    pub position: Position,
    pub channel: u8,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    pub backhaul: Backhaul,
    #[serde(default)]
    pub policy: SetupPolicy,
    /// Neighbors this EAP discovers.
    #[serde(default)]
    pub neighbors: Vec<NodeId>,
}

fn default_tx_power() -> f64 {
    20.0
}

impl EapConfig {
    pub fn ssid(&self) -> &str {
        self.ssid.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Traffic {
    #[default]
    Downlink,
    Uplink,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub location_m: f64,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaConfig {
    pub id: NodeId,
    pub name: String,
    pub home: NodeId,
    pub channels: Vec<u8>,
    #[serde(default)]
    pub traffic: Traffic,
    /// The measured STA walks the waypoints; others stay at their first one.
    #[serde(default)]
    pub measure: bool,
    /// Pins the PHY rate instead of deriving it from RSSI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_phy_mbps: Option<f64>,
    pub waypoints: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlTiming {
    /// One-way delay of the control bus.
    pub latency_ms: f64,
    pub discovery_interval_ms: u64,
    pub report_interval_ms: u64,
    pub beacon_interval_us: u64,
    /// Dwell time per channel while scanning.
    pub probe_wait_ms: u64,
}

impl Default for ControlTiming {
    fn default() -> Self {
        ControlTiming {
            latency_ms: 10.0,
            discovery_interval_ms: 1000,
            report_interval_ms: 1000,
            beacon_interval_us: 102_400,
            probe_wait_ms: 50,
        }
    }
}

impl ControlTiming {
    pub fn latency_us(&self) -> u64 {
        (self.latency_ms * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    /// Time for discovery, handshakes and background association.
    pub settle_ms: u64,
    pub epoch_s: f64,
    pub repetitions: u32,
    /// Pause between epochs, after the measured STA disassociates.
    pub gap_ms: u64,
    /// Data frames pushed through the serving path in each epoch.
    pub burst_frames: u32,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { settle_ms: 2000, epoch_s: 10.0, repetitions: 10, gap_ms: 200, burst_frames: 4 }
    }
}

impl Schedule {
    pub fn epoch_us(&self) -> u64 {
        (self.epoch_s * 1e6).round() as u64
    }

    /// Start of the epoch for waypoint `loc` and repetition `rep`.
    pub fn epoch_start_us(&self, loc: usize, rep: u32) -> u64 {
        let k = loc as u64 * self.repetitions as u64 + rep as u64;
        self.settle_ms * 1000 + k * (self.epoch_us() + self.gap_ms * 1000)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub mac_mode: MacMode,
    #[serde(default)]
    pub path_loss: PathLossModel,
    #[serde(default)]
    pub steering: SteeringParams,
    #[serde(default)]
    pub control: ControlTiming,
    pub eaps: Vec<EapConfig>,
    #[serde(default)]
    pub stas: Vec<StaConfig>,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_channels")]
    pub channels: Vec<u8>,
}

fn default_channels() -> Vec<u8> {
    vec![36, 40, 44, 48]
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario, ScenarioError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let sc: Scenario = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ScenarioError::new(format!("$.{}", e.path()), e.inner().to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn eap(&self, id: NodeId) -> Option<&EapConfig> {
        self.eaps.iter().find(|e| e.id == id)
    }

    pub fn measured(&self) -> Option<&StaConfig> {
        self.stas.iter().find(|s| s.measure)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn err(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
            ScenarioError::new(path, message)
        }
        self.path_loss.validate().map_err(|e| err("$.path_loss", e.to_string()))?;
        self.steering.validate().map_err(|e| err("$.steering", e.to_string()))?;
        if !(self.control.latency_ms >= 0.0) {
            return Err(err("$.control.latency_ms", "must be non-negative"));
        }
        for (field, v) in [
            ("discovery_interval_ms", self.control.discovery_interval_ms),
            ("report_interval_ms", self.control.report_interval_ms),
            ("beacon_interval_us", self.control.beacon_interval_us),
            ("probe_wait_ms", self.control.probe_wait_ms),
        ] {
            if v == 0 {
                return Err(err(format!("$.control.{field}"), "must be positive"));
            }
        }
        if self.schedule.repetitions == 0 {
            return Err(err("$.schedule.repetitions", "must be at least 1"));
        }
        if !(self.schedule.epoch_s > 0.0) {
            return Err(err("$.schedule.epoch_s", "must be positive"));
        }
        if self.channels.is_empty() {
            return Err(err("$.channels", "must not be empty"));
        }

        let mut ids = BTreeSet::new();
        for (i, e) in self.eaps.iter().enumerate() {
            let p = format!("$.eaps[{i}]");
            if !ids.insert(e.id) {
                return Err(err(format!("{p}.id"), format!("duplicate node id {}", e.id)));
            }
            if !self.channels.contains(&e.channel) {
                return Err(err(format!("{p}.channel"), format!("channel {} not in the channel set", e.channel)));
            }
            if e.ssid().is_empty() || e.ssid().len() > 32 {
                return Err(err(format!("{p}.ssid"), "must be 1 to 32 bytes"));
            }
            for (dir, l) in [("dl", e.backhaul.dl), ("ul", e.backhaul.ul)] {
                if !(l.latency_ms >= 0.0) {
                    return Err(err(format!("{p}.backhaul.{dir}.latency_ms"), "must be non-negative"));
                }
                if !(l.capacity_mbps > 0.0) {
                    return Err(err(format!("{p}.backhaul.{dir}.capacity_mbps"), "must be positive"));
                }
            }
        }
        for (i, e) in self.eaps.iter().enumerate() {
            for (j, n) in e.neighbors.iter().enumerate() {
                if self.eap(*n).is_none() {
                    return Err(err(format!("$.eaps[{i}].neighbors[{j}]"), format!("unknown EAP {n}")));
                }
            }
        }

        let mut measured = 0;
        for (i, s) in self.stas.iter().enumerate() {
            let p = format!("$.stas[{i}]");
            if !ids.insert(s.id) {
                return Err(err(format!("{p}.id"), format!("duplicate node id {}", s.id)));
            }
            if s.id.0 > 0xff_ffff {
                return Err(err(format!("{p}.id"), "station ids must fit in 24 bits"));
            }
            if self.eap(s.home).is_none() {
                return Err(err(format!("{p}.home"), format!("unknown EAP {}", s.home)));
            }
            if s.channels.is_empty() {
                return Err(err(format!("{p}.channels"), "must not be empty"));
            }
            for (j, c) in s.channels.iter().enumerate() {
                if !self.channels.contains(c) {
                    return Err(err(format!("{p}.channels[{j}]"), format!("channel {c} not in the channel set")));
                }
            }
            if let Some(r) = s.fixed_phy_mbps {
                if PhyRate::from_mbps(r).is_none() {
                    return Err(err(format!("{p}.fixed_phy_mbps"), format!("{r} is not an 802.11a rate")));
                }
            }
            if s.waypoints.is_empty() {
                return Err(err(format!("{p}.waypoints"), "must not be empty"));
            }
            for (j, w) in s.waypoints.windows(2).enumerate() {
                if !(w[1].location_m >= w[0].location_m) {
                    return Err(err(format!("{p}.waypoints[{}].location_m", j + 1), "waypoints must be in walking order"));
                }
            }
            if s.measure {
                measured += 1;
                if measured > 1 {
                    return Err(err(format!("{p}.measure"), "at most one station can be measured"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"{
            "eaps": [
                {"id": 1, "name": "bob", "position": {"x": 0, "y": 0}, "channel": 40,
                 "backhaul": {"dl": {"latency_ms": 5, "capacity_mbps": 50}, "ul": {"latency_ms": 5, "capacity_mbps": 50}},
                 "neighbors": [2]},
                {"id": 2, "name": "alice", "position": {"x": 10, "y": 0}, "channel": 44,
                 "backhaul": {"dl": {"latency_ms": 5, "capacity_mbps": 50}, "ul": {"latency_ms": 5, "capacity_mbps": 50}},
                 "policy": "reject"}
            ],
            "stas": [
                {"id": 10, "name": "walker", "home": 1, "channels": [40, 44], "measure": true,
                 "waypoints": [{"location_m": 0, "position": {"x": 0, "y": 1}}, {"location_m": 2, "position": {"x": 2, "y": 1}}]}
            ]
        }"#
    }

    #[test]
    fn parses_with_defaults() {
        let sc = Scenario::from_json(minimal()).unwrap();
        assert_eq!(sc.mode, Mode::Nxwlan);
        assert_eq!(sc.schedule.repetitions, 10);
        assert_eq!(sc.eaps[1].policy, SetupPolicy::Reject);
        assert_eq!(sc.eaps[0].ssid(), "bob");
        assert_eq!(sc.eaps[0].tx_power_dbm, 20.0);
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }

    #[test]
    fn errors_carry_the_field_path() {
        let bad = minimal().replace("\"home\": 1", "\"home\": 7");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.stas[0].home");
        let bad = minimal().replace("\"channel\": 44", "\"channel\": 165");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.eaps[1].channel");
        let bad = minimal().replace("\"location_m\": 2", "\"location_m\": -2");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.stas[0].waypoints[1].location_m");
        let bad = minimal().replace("\"neighbors\": [2]", "\"neighbors\": [3]");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.eaps[0].neighbors[0]");
        let bad = minimal().replace("\"capacity_mbps\": 50}, \"ul\"", "\"capacity_mbps\": 0}, \"ul\"");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.eaps[0].backhaul.dl.capacity_mbps");
        let bad = minimal().replace("\"id\": 10", "\"id\": 2");
        assert_eq!(Scenario::from_json(&bad).unwrap_err().path, "$.stas[0].id");
    }

    #[test]
    fn type_errors_point_into_the_document() {
        let bad = minimal().replace("\"channel\": 40", "\"channel\": \"forty\"");
        let e = Scenario::from_json(&bad).unwrap_err();
        assert_eq!(e.path, "$.eaps[0].channel");
        assert!(Scenario::from_json("{").is_err());
    }

    #[test]
    fn epoch_starts_are_evenly_spaced() {
        let s = Schedule { settle_ms: 1000, epoch_s: 1.0, repetitions: 3, gap_ms: 100, burst_frames: 1 };
        assert_eq!(s.epoch_start_us(0, 0), 1_000_000);
        assert_eq!(s.epoch_start_us(0, 2), 1_000_000 + 2 * 1_100_000);
        assert_eq!(s.epoch_start_us(1, 0), 1_000_000 + 3 * 1_100_000);
    }
}
