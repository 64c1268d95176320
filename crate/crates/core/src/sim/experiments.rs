//! The two reference scenarios: extended coverage and load balancing between
//! two neighboring apartments, Bob (home) and Alice (neighbor).

use serde::{Deserialize, Serialize};

use crate::control::SetupPolicy;
use crate::radio::{PathLossModel, Position};
use crate::steering::{MacMode, SteeringParams};
use crate::NodeId;

use super::scenario::{
    Backhaul, ControlTiming, EapConfig, LinkDescriptor, Mode, Scenario, Schedule, StaConfig, Traffic, Waypoint,
};

pub const BOB: NodeId = NodeId(1);
pub const ALICE: NodeId = NodeId(2);
pub const MEASURED_STA: NodeId = NodeId(100);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentParams {
    pub mode: Mode,
    pub mac_mode: MacMode,
    pub repetitions: u32,
    pub epoch_s: f64,
    pub backhaul_latency_ms: f64,
    pub backhaul_mbps: f64,
    /// Last location still inside Bob's coverage.
    pub crossover_m: f64,
    pub locations_m: Vec<f64>,
    pub bob: Position,
    pub alice: Position,
    pub bob_channel: u8,
    pub alice_channel: u8,
    pub path_loss: PathLossModel,
    pub steering: SteeringParams,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            mode: Mode::Nxwlan,
            mac_mode: MacMode::Dcf,
            repetitions: 10,
            epoch_s: 10.0,
            backhaul_latency_ms: 5.0,
            backhaul_mbps: 50.0,
            crossover_m: 12.0,
            locations_m: (0..10).map(|i| 2.0 * i as f64).collect(),
            bob: Position::new(3.0, -3.0),
            alice: Position::new(9.0, -1.0),
            bob_channel: 40,
            alice_channel: 44,
            path_loss: PathLossModel { pl0_db: 66.5, ..PathLossModel::default() },
            steering: SteeringParams::default(),
        }
    }
}

impl ExperimentParams {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    fn eap(&self, id: NodeId, name: &str, position: Position, channel: u8, neighbor: NodeId) -> EapConfig {
        let link = LinkDescriptor::new(self.backhaul_latency_ms, self.backhaul_mbps);
        EapConfig {
            id,
            name: name.into(),
            ssid: None,
            position,
            channel,
            tx_power_dbm: 20.0,
            backhaul: Backhaul { dl: link, ul: link },
            policy: SetupPolicy::Accept,
            neighbors: vec![neighbor],
        }
    }

    fn base(&self) -> Scenario {
        let measured = StaConfig {
            id: MEASURED_STA,
            name: "sta".into(),
            home: BOB,
            channels: vec![self.bob_channel, self.alice_channel],
            traffic: Traffic::Downlink,
            measure: true,
            fixed_phy_mbps: None,
            waypoints: self
                .locations_m
                .iter()
                .map(|&l| Waypoint { location_m: l, position: Position::new(l, 0.0) })
                .collect(),
        };
        Scenario {
            mode: self.mode,
            mac_mode: self.mac_mode,
            path_loss: self.path_loss.clone(),
            steering: self.steering.clone(),
            control: ControlTiming { latency_ms: self.backhaul_latency_ms, ..ControlTiming::default() },
            eaps: vec![
                self.eap(BOB, "bob", self.bob, self.bob_channel, ALICE),
                self.eap(ALICE, "alice", self.alice, self.alice_channel, BOB),
            ],
            stas: vec![measured],
            schedule: Schedule { repetitions: self.repetitions, epoch_s: self.epoch_s, ..Schedule::default() },
            channels: vec![36, 40, 44, 48],
        }
    }
}

/// Extended coverage: the STA walks away from Bob towards and past Alice.
pub fn experiment1(params: &ExperimentParams) -> Scenario {
    params.base()
}

/// Load balancing: as above, with two backlogged 6 Mbit/s uplink clients on Bob.
pub fn experiment2(params: &ExperimentParams) -> Scenario {
    let mut sc = params.base();
    for (i, pos) in [Position::new(params.bob.x, params.bob.y + 1.0), Position::new(params.bob.x + 1.0, params.bob.y)]
        .into_iter()
        .enumerate()
    {
        sc.stas.push(StaConfig {
            id: NodeId(200 + i as u32),
            name: format!("bg{}", i + 1),
            home: BOB,
            channels: vec![params.bob_channel],
            traffic: Traffic::Uplink,
            measure: false,
            fixed_phy_mbps: Some(6.0),
            waypoints: vec![Waypoint { location_m: 0.0, position: pos }],
        });
    }
    sc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_measurement_plan() {
        let sc = experiment1(&ExperimentParams::default());
        let m = sc.measured().unwrap();
        assert_eq!(m.waypoints.len(), 10);
        assert_eq!(sc.schedule.repetitions, 10);
        assert_eq!(sc.schedule.epoch_s, 10.0);
        assert!(sc.stas.iter().all(|s| s.measure));
        sc.validate().unwrap();
    }

    #[test]
    fn experiment2_adds_background_load_on_bob() {
        let sc = experiment2(&ExperimentParams::default());
        let bg: Vec<_> = sc.stas.iter().filter(|s| !s.measure).collect();
        assert_eq!(bg.len(), 2);
        assert!(bg.iter().all(|s| s.home == BOB && s.fixed_phy_mbps == Some(6.0) && s.traffic == Traffic::Uplink));
        sc.validate().unwrap();
    }

    #[test]
    fn scenario_json_round_trip() {
        let sc = experiment2(&ExperimentParams::default());
        assert_eq!(Scenario::from_json(&sc.to_json()).unwrap(), sc);
    }
}
