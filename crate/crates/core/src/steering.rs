//! Client steering: airtime shares, MAC-rate prediction, AP willingness and
//! the probe-response TX power encoding that turns willingness into received
//! signal strength at the scanning client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SteeringError {
    #[error("domain error: {0}")]
    Domain(String),
}

fn domain(msg: impl Into<String>) -> SteeringError {
    SteeringError::Domain(msg.into())
}

/// RSSI threshold (dBm) to PHY rate (Mbit/s), inclusive lower bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateTable(pub Vec<(f64, f64)>);

impl RateTable {
    pub fn dot11a() -> Self {
        RateTable(vec![
            (-82.0, 6.0),
            (-81.0, 9.0),
            (-79.0, 12.0),
            (-77.0, 18.0),
            (-74.0, 24.0),
            (-70.0, 36.0),
            (-66.0, 48.0),
            (-65.0, 54.0),
        ])
    }

    pub fn validate(&self) -> Result<(), SteeringError> {
        if self.0.is_empty() {
            return Err(domain("rate table is empty"));
        }
        for w in self.0.windows(2) {
            if !(w[0].0 < w[1].0 && w[0].1 < w[1].1) {
                return Err(domain("rate table must be strictly increasing"));
            }
        }
        if self.0[0].1 <= 0.0 {
            return Err(domain("rate table rates must be positive"));
        }
        Ok(())
    }

    pub fn lookup(&self, rssi_dbm: f64) -> f64 {
        self.0.iter().rev().find(|(thr, _)| *thr <= rssi_dbm).map_or(0.0, |(_, r)| *r)
    }

    pub fn lowest_threshold(&self) -> f64 {
        self.0.first().map_or(f64::INFINITY, |e| e.0)
    }
}

impl Default for RateTable {
    fn default() -> Self {
        Self::dot11a()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteeringParams {
    pub r_all_max_mbps: f64,
    pub prx_low_dbm: f64,
    pub prx_high_dbm: f64,
    pub ptx_client_dbm: f64,
    pub rate_table: RateTable,
}

impl Default for SteeringParams {
    fn default() -> Self {
        SteeringParams {
            r_all_max_mbps: 25.0,
            prx_low_dbm: -90.0,
            prx_high_dbm: -50.0,
            ptx_client_dbm: 20.0,
            rate_table: RateTable::dot11a(),
        }
    }
}

impl SteeringParams {
    pub fn validate(&self) -> Result<(), SteeringError> {
        if !(self.prx_low_dbm < self.prx_high_dbm) {
            return Err(domain("prx_low_dbm must be below prx_high_dbm"));
        }
        if !(self.r_all_max_mbps > 0.0) {
            return Err(domain("r_all_max_mbps must be positive"));
        }
        self.rate_table.validate()
    }

    pub fn dynamic_range_db(&self) -> f64 {
        self.prx_high_dbm - self.prx_low_dbm
    }
}

/// PHY rates of the active clients in a BSS.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClientLoad {
    pub phy_rates_mbps: Vec<f64>,
}

impl ClientLoad {
    pub fn new(rates: impl IntoIterator<Item = f64>) -> Self {
        ClientLoad { phy_rates_mbps: rates.into_iter().collect() }
    }

    pub fn len(&self) -> usize {
        self.phy_rates_mbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phy_rates_mbps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BackhaulCaps {
    pub dl_mbps: f64,
    pub ul_mbps: f64,
}

impl BackhaulCaps {
    pub fn new(dl_mbps: f64, ul_mbps: f64) -> Self {
        BackhaulCaps { dl_mbps, ul_mbps }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MacMode {
    /// Packet fairness.
    #[default]
    Dcf,
    /// Equal airtime.
    Txop,
}

fn check_rate(r: f64) -> Result<(), SteeringError> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("PHY rate must be positive, got {r}")))
    }
}

/// Relative airtime of a client at `k_rate` joining `load`.
pub fn airtime_share(load: &ClientLoad, k_rate: f64) -> Result<f64, SteeringError> {
    check_rate(k_rate)?;
    let mut denom = 0.0;
    for &r in &load.phy_rates_mbps {
        check_rate(r)?;
        denom += 1.0 / r;
    }
    denom += 1.0 / k_rate;
    Ok((1.0 / k_rate) / denom)
}

/// Airtime share of every member of an existing client set.
pub fn airtime_shares(rates: &[f64]) -> Result<Vec<f64>, SteeringError> {
    let mut denom = 0.0;
    for &r in rates {
        check_rate(r)?;
        denom += 1.0 / r;
    }
    Ok(rates.iter().map(|r| (1.0 / r) / denom).collect())
}

/// Expected MAC throughput of a client at `k_rate` after joining `load`.
pub fn mac_rate(load: &ClientLoad, k_rate: f64, mode: MacMode) -> Result<f64, SteeringError> {
    match mode {
        MacMode::Dcf => Ok(airtime_share(load, k_rate)? * k_rate),
        MacMode::Txop => {
            check_rate(k_rate)?;
            for &r in &load.phy_rates_mbps {
                check_rate(r)?;
            }
            Ok(k_rate / (load.len() + 1) as f64)
        }
    }
}

/// MAC throughput of every member of an existing client set.
pub fn mac_rates(rates: &[f64], mode: MacMode) -> Result<Vec<f64>, SteeringError> {
    match mode {
        MacMode::Dcf => Ok(airtime_shares(rates)?.iter().zip(rates).map(|(g, r)| g * r).collect()),
        MacMode::Txop => {
            for &r in rates {
                check_rate(r)?;
            }
            Ok(rates.iter().map(|r| r / rates.len() as f64).collect())
        }
    }
}

pub fn predict_phy_rate(params: &SteeringParams, rssi_dbm: f64) -> f64 {
    params.rate_table.lookup(rssi_dbm)
}

pub fn willingness(
    params: &SteeringParams,
    mac_rate_mbps: f64,
    dl_backhaul_mbps: f64,
    ul_tunnel_mbps: Option<f64>,
) -> Result<f64, SteeringError> {
    if !(params.r_all_max_mbps > 0.0) {
        return Err(domain("r_all_max_mbps must be positive"));
    }
    let mut r_all = mac_rate_mbps.min(dl_backhaul_mbps);
    if let Some(ul) = ul_tunnel_mbps {
        r_all = r_all.min(ul);
    }
    Ok((r_all / params.r_all_max_mbps).min(1.0))
}

/// Probe-response TX power (dBm) that encodes willingness `w`.
pub fn encode_willingness(params: &SteeringParams, prx_preq_dbm: f64, w: f64) -> Result<f64, SteeringError> {
    if !(0.0..=1.0).contains(&w) {
        return Err(domain(format!("willingness must be in [0,1], got {w}")));
    }
    let pl = params.ptx_client_dbm - prx_preq_dbm;
    // The floor of 1 is applied in dBm.
    let ptx_min = f64::max(1.0, params.prx_low_dbm + pl);
    Ok(f64::min(params.ptx_client_dbm, ptx_min + w * params.dynamic_range_db()))
}

/// Input to one steering decision, as seen by a single EAP receiving a probe.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSnapshot {
    pub prx_preq_dbm: f64,
    /// Active clients on this AP's own radio.
    pub load: ClientLoad,
    pub backhaul: BackhaulCaps,
    /// Last reported backhaul of each neighbor whose WTP this AP hosts.
    pub neighbors: BTreeMap<NodeId, BackhaulCaps>,
    pub mode: MacMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApDecision {
    pub willingness: f64,
    pub tx_dbm: f64,
    /// False when the client is predicted out of range; no probe response is sent.
    pub respond: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringDecision {
    pub predicted_phy_mbps: f64,
    pub predicted_mac_mbps: f64,
    pub rap: ApDecision,
    /// Fetched but not applied to the RAP decision.
    pub rap_ul_backhaul_mbps: f64,
    pub vaps: BTreeMap<NodeId, ApDecision>,
}

pub fn calc_probe_response_tx_powers(
    params: &SteeringParams,
    snap: &ProbeSnapshot,
) -> Result<SteeringDecision, SteeringError> {
    let prx = snap.prx_preq_dbm;
    let phy = predict_phy_rate(params, prx);
    let respond = phy > 0.0;
    let r_mac = if respond { mac_rate(&snap.load, phy, snap.mode)? } else { 0.0 };

    let p_rap = willingness(params, r_mac, snap.backhaul.dl_mbps, None)?;
    let rap = ApDecision { willingness: p_rap, tx_dbm: encode_willingness(params, prx, p_rap)?, respond };

    let mut vaps = BTreeMap::new();
    for (&vap, caps) in &snap.neighbors {
        let p_vap = willingness(params, r_mac, caps.dl_mbps, Some(caps.ul_mbps))?;
        vaps.insert(vap, ApDecision { willingness: p_vap, tx_dbm: encode_willingness(params, prx, p_vap)?, respond });
    }

    Ok(SteeringDecision {
        predicted_phy_mbps: phy,
        predicted_mac_mbps: r_mac,
        rap,
        rap_ul_backhaul_mbps: snap.backhaul.ul_mbps,
        vaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn p15() -> SteeringParams {
        SteeringParams { ptx_client_dbm: 15.0, ..SteeringParams::default() }
    }

    #[test]
    fn airtime_examples() {
        assert_eq!(airtime_share(&ClientLoad::default(), 54.0).unwrap(), 1.0);
        assert!(close(airtime_share(&ClientLoad::new([54.0]), 6.0).unwrap(), 0.9, 1e-12));
        assert!(close(airtime_share(&ClientLoad::new([54.0, 54.0]), 54.0).unwrap(), 1.0 / 3.0, 1e-12));
        assert!(airtime_share(&ClientLoad::new([0.0]), 6.0).is_err());
        assert!(airtime_share(&ClientLoad::default(), -1.0).is_err());
    }

    #[test]
    fn mac_rate_examples() {
        assert!(close(mac_rate(&ClientLoad::new([54.0]), 6.0, MacMode::Dcf).unwrap(), 5.4, 1e-12));
        assert!(close(mac_rate(&ClientLoad::new([54.0]), 54.0, MacMode::Dcf).unwrap(), 27.0, 1e-12));
        assert!(close(mac_rate(&ClientLoad::new([6.0, 6.0]), 54.0, MacMode::Txop).unwrap(), 18.0, 1e-12));
    }

    #[test]
    fn phy_rate_lookup_is_inclusive() {
        let p = SteeringParams::default();
        assert_eq!(predict_phy_rate(&p, p.prx_high_dbm), 54.0);
        assert_eq!(predict_phy_rate(&p, -82.5), 0.0);
        assert_eq!(predict_phy_rate(&p, -82.0), 6.0);
        assert_eq!(predict_phy_rate(&p, -74.0), 24.0);
        assert_eq!(predict_phy_rate(&p, -74.01), 18.0);
    }

    #[test]
    fn willingness_examples() {
        let p = SteeringParams::default();
        let mac = mac_rate(&ClientLoad::new([6.0, 6.0]), 54.0, MacMode::Dcf).unwrap();
        // (1/54) / (2/6 + 1/54) * 54 = 54/19
        assert!(close(mac, 54.0 / 19.0, 1e-12));
        assert!(close(willingness(&p, mac, 50.0, None).unwrap(), 0.1137, 5e-5));
        assert_eq!(willingness(&p, 54.0, 50.0, Some(50.0)).unwrap(), 1.0);
        assert!(close(willingness(&p, 10.0, 5.0, Some(2.0)).unwrap(), 0.08, 1e-12));
        let bad = SteeringParams { r_all_max_mbps: 0.0, ..p };
        assert!(willingness(&bad, 1.0, 1.0, None).is_err());
    }

    #[test]
    fn encode_examples() {
        let p = p15();
        assert_eq!(encode_willingness(&p, -60.0, 0.0).unwrap(), 1.0);
        assert_eq!(encode_willingness(&p, -60.0, 1.0).unwrap(), 15.0);
        assert_eq!(encode_willingness(&p, -85.0, 0.5).unwrap(), 15.0);
        assert!(encode_willingness(&p, -60.0, 1.5).is_err());
        assert!(encode_willingness(&p, -60.0, -0.1).is_err());
    }

    #[test]
    fn idle_home_no_neighbors_at_prx_high() {
        let p = p15();
        let snap = ProbeSnapshot {
            prx_preq_dbm: p.prx_high_dbm,
            backhaul: BackhaulCaps::new(50.0, 50.0),
            ..Default::default()
        };
        let d = calc_probe_response_tx_powers(&p, &snap).unwrap();
        // PL = 65, ptx_min = max(1, -25) = 1, w = min(1, 50/25) = 1.
        assert_eq!(d.rap.willingness, 1.0);
        assert_eq!(d.rap.tx_dbm, 15.0f64.min(1.0 + 40.0));
        assert!(d.vaps.is_empty());
    }

    #[test]
    fn zero_uplink_neighbor_has_zero_willingness() {
        let p = p15();
        let snap = ProbeSnapshot {
            prx_preq_dbm: -60.0,
            backhaul: BackhaulCaps::new(50.0, 50.0),
            neighbors: BTreeMap::from([(NodeId(2), BackhaulCaps::new(50.0, 0.0))]),
            ..Default::default()
        };
        let d = calc_probe_response_tx_powers(&p, &snap).unwrap();
        assert_eq!(d.vaps[&NodeId(2)].willingness, 0.0);
    }

    #[test]
    fn out_of_range_probe_gets_no_response() {
        let p = p15();
        let snap = ProbeSnapshot {
            prx_preq_dbm: -85.0,
            backhaul: BackhaulCaps::new(50.0, 50.0),
            neighbors: BTreeMap::from([(NodeId(2), BackhaulCaps::new(50.0, 50.0))]),
            ..Default::default()
        };
        let d = calc_probe_response_tx_powers(&p, &snap).unwrap();
        assert_eq!(d.predicted_phy_mbps, 0.0);
        assert!(!d.rap.respond && !d.vaps[&NodeId(2)].respond);
        assert_eq!(d.rap.willingness, 0.0);
    }

    #[test]
    fn rap_ignores_uplink_backhaul() {
        let p = p15();
        let mut snap = ProbeSnapshot { prx_preq_dbm: -60.0, backhaul: BackhaulCaps::new(50.0, 50.0), ..Default::default() };
        let a = calc_probe_response_tx_powers(&p, &snap).unwrap();
        snap.backhaul.ul_mbps = 0.0;
        let b = calc_probe_response_tx_powers(&p, &snap).unwrap();
        assert_eq!(a.rap, b.rap);
        assert_eq!(b.rap_ul_backhaul_mbps, 0.0);
    }

    #[test]
    fn params_validation() {
        assert!(SteeringParams::default().validate().is_ok());
        let p = SteeringParams { prx_low_dbm: -40.0, ..SteeringParams::default() };
        assert!(p.validate().is_err());
        let p = SteeringParams { rate_table: RateTable(vec![(-80.0, 6.0), (-80.0, 9.0)]), ..SteeringParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn snapshot_json_round_trip() {
        let snap = ProbeSnapshot {
            prx_preq_dbm: -61.5,
            load: ClientLoad::new([6.0, 6.0]),
            backhaul: BackhaulCaps::new(50.0, 50.0),
            neighbors: BTreeMap::from([(NodeId(2), BackhaulCaps::new(50.0, 40.0))]),
            mode: MacMode::Txop,
        };
        let json = serde_json::to_string(&snap).unwrap();
        assert_eq!(serde_json::from_str::<ProbeSnapshot>(&json).unwrap(), snap);
    }
}
