//! Radio environment: geometry, log-distance path loss, active scanning and
//! association choice, local ACK generation and the per-BSS throughput model.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{Dot11Frame, FrameKind, MacAddr, PhyRate};
use crate::steering::{self, BackhaulCaps, ClientLoad, MacMode, ProbeSnapshot, SteeringParams};
use crate::NodeId;

pub const SIFS_US: u64 = 10;
/// Preamble and PLCP header of an OFDM transmission.
pub const PREAMBLE_US: u64 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RadioError {
    #[error("domain error: {0}")]
    Domain(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossModel {
    pub pl0_db: f64,
    pub d0_m: f64,
    pub exponent: f64,
    pub sensitivity_dbm: f64,
    /// Log-normal shadowing standard deviation. Zero gives a deterministic channel.
    pub shadowing_sigma_db: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        PathLossModel { pl0_db: 40.0, d0_m: 1.0, exponent: 3.5, sensitivity_dbm: -82.0, shadowing_sigma_db: 0.0 }
    }
}

impl PathLossModel {
    pub fn validate(&self) -> Result<(), RadioError> {
        if !(self.exponent > 0.0) {
            return Err(RadioError::Domain("path loss exponent must be positive".into()));
        }
        if !(self.d0_m > 0.0) {
            return Err(RadioError::Domain("reference distance must be positive".into()));
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return Err(RadioError::Domain("shadowing sigma must be non-negative".into()));
        }
        Ok(())
    }

    pub fn path_loss(&self, d_m: f64) -> Result<f64, RadioError> {
        if !(d_m > 0.0) {
            return Err(RadioError::Domain(format!("distance must be positive, got {d_m}")));
        }
        Ok(self.pl0_db + 10.0 * self.exponent * (d_m / self.d0_m).log10())
    }

    pub fn rssi(&self, tx_dbm: f64, d_m: f64) -> Result<f64, RadioError> {
        Ok(tx_dbm - self.path_loss(d_m)?)
    }

    /// Path loss between two positions. Co-located radios are treated as
    /// being a reference distance apart.
    pub fn link_loss(&self, a: &Position, b: &Position) -> f64 {
        let d = a.distance(b).max(self.d0_m.min(0.5));
        self.path_loss(d).expect("distance is positive")
    }

    pub fn decodable(&self, rssi_dbm: f64) -> bool {
        rssi_dbm >= self.sensitivity_dbm
    }
}

/// Symmetric per-link shadowing offset in dB, fixed for a given
/// (seed, epoch, link). Independent of query order.
pub fn shadowing_db(sigma_db: f64, seed: u64, epoch: u64, a: u64, b: u64) -> f64 {
    if sigma_db == 0.0 {
        return 0.0;
    }
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mix = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(epoch.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(lo.wrapping_mul(0x94d0_49bb_1331_11eb))
        .wrapping_add(hi.rotate_left(32));
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    Normal::new(0.0, sigma_db).expect("sigma is finite and non-negative").sample(&mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RadioRole {
    ApRadio,
    WtpRadio,
    Sta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadioNode {
    pub position: Position,
    pub channel: u8,
    pub tx_power_dbm: f64,
    pub role: RadioRole,
}

/// The radio currently serving a station.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Serving {
    Rap(NodeId),
    Wtp { host: NodeId, vap_home: NodeId },
}

impl Serving {
    pub fn radio_owner(&self) -> NodeId {
        match self {
            Serving::Rap(n) => *n,
            Serving::Wtp { host, .. } => *host,
        }
    }
}

impl fmt::Display for Serving {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Serving::Rap(n) => write!(f, "rap:{n}"),
            Serving::Wtp { host, vap_home } => write!(f, "wtp:{host}:vap{vap_home}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeHeard {
    pub bssid: MacAddr,
    pub channel: u8,
    pub rssi_dbm: f64,
}

/// Strongest decodable response; near-ties (1e-6 dB) go to the lowest BSSID.
pub fn select_best(heard: &[ProbeHeard], sensitivity_dbm: f64) -> Option<ProbeHeard> {
    let mut best: Option<ProbeHeard> = None;
    for h in heard.iter().filter(|h| h.rssi_dbm >= sensitivity_dbm) {
        best = match best {
            None => Some(*h),
            Some(b) if h.rssi_dbm > b.rssi_dbm + 1e-6 => Some(*h),
            Some(b) if (h.rssi_dbm - b.rssi_dbm).abs() <= 1e-6 && h.bssid < b.bssid => Some(*h),
            keep => keep,
        };
    }
    best
}

/// What one EAP radio knows when a probe request arrives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanAp {
    pub eap: NodeId,
    pub radio: RadioNode,
    pub load: ClientLoad,
    pub backhaul: BackhaulCaps,
    /// VAP homes whose WTP runs on this radio, with their reported backhaul.
    pub hosted: BTreeMap<NodeId, BackhaulCaps>,
    /// Legacy behavior: answer at full power, no steering, no VAPs.
    pub steering: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanChoice {
    pub serving: Serving,
    pub heard: ProbeHeard,
}

/// One active scan by a STA whose home network is `home`. Each AP that
/// decodes the probe runs the steering decision and answers for its RAP (if
/// it is the home) and for the home's VAP (if it hosts a WTP for it).
pub fn scan(
    sta_pos: Position,
    channels: &[u8],
    home: NodeId,
    aps: &[ScanAp],
    model: &PathLossModel,
    params: &SteeringParams,
    mode: MacMode,
) -> Result<Option<ScanChoice>, steering::SteeringError> {
    let mut heard = Vec::new();
    let mut origin = BTreeMap::new();
    for &ch in channels {
        for ap in aps.iter().filter(|a| a.radio.channel == ch) {
            let pl = model.link_loss(&sta_pos, &ap.radio.position);
            let prx = params.ptx_client_dbm - pl;
            if !model.decodable(prx) {
                continue;
            }
            let mut answers = Vec::new();
            if ap.steering {
                let snap = ProbeSnapshot {
                    prx_preq_dbm: prx,
                    load: ap.load.clone(),
                    backhaul: ap.backhaul,
                    neighbors: ap.hosted.clone(),
                    mode,
                };
                let d = steering::calc_probe_response_tx_powers(params, &snap)?;
                if ap.eap == home && d.rap.respond {
                    answers.push((home.rap_bssid(), Serving::Rap(home), d.rap.tx_dbm));
                }
                if let Some(v) = d.vaps.get(&home).filter(|v| v.respond) {
                    answers.push((home.vap_bssid(), Serving::Wtp { host: ap.eap, vap_home: home }, v.tx_dbm));
                }
            } else if ap.eap == home {
                answers.push((home.rap_bssid(), Serving::Rap(home), ap.radio.tx_power_dbm));
            }
            for (bssid, serving, tx) in answers {
                heard.push(ProbeHeard { bssid, channel: ch, rssi_dbm: tx - pl });
                origin.insert((bssid, ch), serving);
            }
        }
    }
    Ok(select_best(&heard, model.sensitivity_dbm).map(|h| ScanChoice { serving: origin[&(h.bssid, h.channel)], heard: h }))
}

/// PHY rate chosen by ideal rate control at the given downlink RSSI.
pub fn negotiated_phy(params: &SteeringParams, rssi_dbm: f64) -> Option<PhyRate> {
    PhyRate::from_mbps(steering::predict_phy_rate(params, rssi_dbm))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssMember {
    pub phy_mbps: f64,
    pub dl_backhaul_mbps: f64,
    /// Uplink of the tunnel when served through a WTP.
    pub tunnel_ul_mbps: Option<f64>,
}

/// End-to-end downlink rate of each BSS member: its MAC rate over the actual
/// member set, capped by its backhaul share and tunnel.
pub fn bss_throughput(members: &[BssMember], mode: MacMode) -> Result<Vec<f64>, steering::SteeringError> {
    let phys: Vec<f64> = members.iter().map(|m| m.phy_mbps).collect();
    let wireless = steering::mac_rates(&phys, mode)?;
    Ok(members
        .iter()
        .zip(wireless)
        .map(|(m, w)| {
            let r = w.min(m.dl_backhaul_mbps);
            m.tunnel_ul_mbps.map_or(r, |ul| r.min(ul))
        })
        .collect())
}

/// Air occupancy of a frame of `len` encoded bytes.
pub fn airtime_us(len: usize, phy: PhyRate) -> u64 {
    PREAMBLE_US + ((8 * len) as f64 / phy.mbps()).ceil() as u64
}

/// ACK the receiving radio sends itself, SIFS after reception. Only unicast
/// data and management frames addressed to `receiver` are acknowledged.
pub fn ack_locally(receiver: MacAddr, frame: &Dot11Frame) -> Option<(u64, Dot11Frame)> {
    if frame.kind == FrameKind::Ack || frame.addr1.is_broadcast() || frame.addr1 != receiver {
        return None;
    }
    Some((SIFS_US, Dot11Frame::ack(frame.addr2)))
}

/// The VAP's virtual radio: acknowledges every injected frame at once, since
/// the real ACK deadline can only be met by the WTP.
#[derive(Debug, Clone, Default)]
pub struct VirtualRadio {
    pub acked: u64,
}

impl VirtualRadio {
    /// Returns the delay after which the injection is reported complete.
    pub fn inject(&mut self, _frame: &Dot11Frame) -> u64 {
        self.acked += 1;
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn path_loss_examples() {
        let m = PathLossModel::default();
        assert!(close(m.path_loss(1.0).unwrap(), 40.0));
        assert!(close(m.path_loss(10.0).unwrap(), 75.0));
        assert!(m.path_loss(0.0).is_err());
        assert!(m.path_loss(-1.0).is_err());
        for d in [0.5, 3.0, 17.0] {
            assert!(close(m.rssi(20.0, d).unwrap() - 20.0, m.rssi(5.0, d).unwrap() - 5.0));
        }
    }

    #[test]
    fn rssi_strictly_decreases_with_distance() {
        let m = PathLossModel::default();
        let mut last = f64::INFINITY;
        for i in 1..200 {
            let r = m.rssi(20.0, i as f64 * 0.37).unwrap();
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn select_best_examples() {
        let a = ProbeHeard { bssid: MacAddr([2, 0, 0, 0, 1, 0]), channel: 40, rssi_dbm: -55.0 };
        let b = ProbeHeard { bssid: MacAddr([2, 0, 0, 0, 2, 0]), channel: 44, rssi_dbm: -60.0 };
        assert_eq!(select_best(&[b, a], -82.0), Some(a));
        let weak = [ProbeHeard { rssi_dbm: -90.0, ..a }, ProbeHeard { rssi_dbm: -83.0, ..b }];
        assert_eq!(select_best(&weak, -82.0), None);
        let tie = [ProbeHeard { rssi_dbm: -60.0 + 5e-7, ..b }, ProbeHeard { rssi_dbm: -60.0, ..a }];
        assert_eq!(select_best(&tie, -82.0).unwrap().bssid, a.bssid);
    }

    #[test]
    fn equal_willingness_equal_distance_ties_by_bssid() {
        let model = PathLossModel::default();
        let params = SteeringParams::default();
        let home = NodeId(1);
        let mk = |eap: u32, x: f64, hosted: BTreeMap<NodeId, BackhaulCaps>| ScanAp {
            eap: NodeId(eap),
            radio: RadioNode { position: Position::new(x, 0.0), channel: 40, tx_power_dbm: 20.0, role: RadioRole::ApRadio },
            load: ClientLoad::default(),
            backhaul: BackhaulCaps::new(10.0, 10.0),
            hosted,
            steering: true,
        };
        // Home RAP and a neighbor hosting the home VAP, mirrored around the
        // STA at 93 dB path loss, both limited to 10 Mbit/s.
        let d = 10f64.powf((93.0 - 40.0) / 35.0);
        let aps = [mk(2, -d, BTreeMap::from([(home, BackhaulCaps::new(10.0, 10.0))])), mk(1, d, BTreeMap::new())];
        let choice = scan(Position::new(0.0, 0.0), &[40], home, &aps, &model, &params, MacMode::Dcf).unwrap().unwrap();
        // w = 10 / 25; neither clip applies, so both land at prx_low + w * range.
        assert!((choice.heard.rssi_dbm - (-90.0 + 0.4 * 40.0)).abs() < 1e-6);
        assert_eq!(choice.serving, Serving::Rap(home));
        assert!(home.rap_bssid() < home.vap_bssid());
    }

    #[test]
    fn baseline_answers_at_full_power_home_only() {
        let model = PathLossModel::default();
        let params = SteeringParams::default();
        let ap = |eap: u32| ScanAp {
            eap: NodeId(eap),
            radio: RadioNode { position: Position::new(5.0, 0.0), channel: 40, tx_power_dbm: 20.0, role: RadioRole::ApRadio },
            load: ClientLoad::default(),
            backhaul: BackhaulCaps::new(50.0, 50.0),
            hosted: BTreeMap::new(),
            steering: false,
        };
        let c = scan(Position::new(0.0, 0.0), &[40], NodeId(1), &[ap(2), ap(1)], &model, &params, MacMode::Dcf)
            .unwrap()
            .unwrap();
        assert_eq!(c.serving, Serving::Rap(NodeId(1)));
        assert!(close(c.heard.rssi_dbm, 20.0 - model.path_loss(5.0).unwrap()));
        assert!(scan(Position::new(0.0, 0.0), &[44], NodeId(1), &[ap(1)], &model, &params, MacMode::Dcf)
            .unwrap()
            .is_none());
    }

    #[test]
    fn bss_throughput_examples() {
        let solo = [BssMember { phy_mbps: 54.0, dl_backhaul_mbps: 50.0, tunnel_ul_mbps: None }];
        assert_eq!(bss_throughput(&solo, MacMode::Dcf).unwrap(), vec![50.0]);
        let m = |phy| BssMember { phy_mbps: phy, dl_backhaul_mbps: 50.0, tunnel_ul_mbps: None };
        let set = [m(54.0), m(6.0), m(6.0)];
        let dcf = bss_throughput(&set, MacMode::Dcf).unwrap();
        for r in &dcf {
            assert!((r - 54.0 / 19.0).abs() < 1e-12);
        }
        assert!((dcf[0] - 2.84).abs() < 0.01);
        assert_eq!(bss_throughput(&set, MacMode::Txop).unwrap()[0], 18.0);
        let tunneled = [BssMember { phy_mbps: 54.0, dl_backhaul_mbps: 50.0, tunnel_ul_mbps: Some(7.5) }];
        assert_eq!(bss_throughput(&tunneled, MacMode::Dcf).unwrap(), vec![7.5]);
    }

    #[test]
    fn local_ack_rules() {
        let sta = MacAddr([2, 0xaa, 0, 0, 0, 1]);
        let ap = MacAddr([2, 0, 0, 0, 1, 0]);
        let data = Dot11Frame::new(FrameKind::Data, sta, ap, ap, 3);
        let (delay, ack) = ack_locally(sta, &data).unwrap();
        assert_eq!(delay, 10);
        assert_eq!(ack, Dot11Frame::ack(ap));
        assert_eq!(ack_locally(sta, &ack), None);
        assert_eq!(ack_locally(ap, &data), None);
        let beacon = Dot11Frame::new(FrameKind::Beacon, MacAddr::BROADCAST, ap, ap, 0);
        assert_eq!(ack_locally(sta, &beacon), None);
        let mut v = VirtualRadio::default();
        assert_eq!(v.inject(&data), 0);
        assert_eq!(v.acked, 1);
    }

    #[test]
    fn airtime_of_a_full_frame() {
        assert_eq!(airtime_us(1427, PhyRate::Mbps54), 20 + 212);
        assert_eq!(airtime_us(27, PhyRate::Mbps6), 20 + 36);
    }

    #[test]
    fn shadowing_is_symmetric_and_reproducible() {
        assert_eq!(shadowing_db(0.0, 1, 2, 3, 4), 0.0);
        let a = shadowing_db(4.0, 7, 1, 10, 20);
        assert_eq!(a, shadowing_db(4.0, 7, 1, 20, 10));
        assert_ne!(a, shadowing_db(4.0, 8, 1, 10, 20));
    }
}
