//! The simulated deployment: EAP radios, switches and controllers, stations,
//! tunnels and the control bus, driven by the event queue.

use std::collections::{BTreeMap, BTreeSet};

use crate::control::{self, Action, Attachment, Controller, ControllerConfig, NeighborPhase};
use crate::frame::{self, Dot11Frame, FrameKind, MacAddr, PhyRate, RadioMeta, TaggedFrame};
use crate::radio::{self, ProbeHeard, Serving, VirtualRadio};
use crate::steering::{self, BackhaulCaps, ClientLoad, ProbeSnapshot};
use crate::switch::{DropReason, PortId, PortRole, TunnelId, Verdict};
use crate::NodeId;

use super::flows::{max_min_fair, Flow};
use super::kernel::EventQueue;
use super::metrics::{Bounds, Metrics, Row};
use super::scenario::{EapConfig, Mode, Scenario, ScenarioError, StaConfig, Traffic};

const PAYLOAD_LEN: usize = 1400;
const BURST_SPACING_US: u64 = 1000;
const BURST_DELAY_US: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeRecord {
    pub requester: NodeId,
    pub responder: NodeId,
    pub requested_at_us: u64,
    pub established_at_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimStats {
    pub events: u64,
    pub frames_on_air: u64,
    pub frames_tunneled: u64,
    pub acks_sent: u64,
    pub acks_tunneled: u64,
    pub drops: BTreeMap<DropReason, u64>,
    pub probe_responses_suppressed: u64,
    pub vap_auto_acks: u64,
    pub downlink_delivered: u64,
    pub uplink_delivered: u64,
    pub control_errors: u64,
    pub decode_errors: u64,
    pub handshakes: Vec<HandshakeRecord>,
    /// Minimum observed (delivery time - send time - configured latency) over
    /// tunnel and control messages. Never negative.
    pub min_latency_slack_us: Option<u64>,
}

/// Switch and controller state of one EAP at the end of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EapSnapshot {
    pub ports: Vec<PortRole>,
    pub phases: BTreeMap<NodeId, NeighborPhase>,
    pub rule_dump: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub metrics: Metrics,
    pub stats: SimStats,
    pub eaps: BTreeMap<NodeId, EapSnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Bss {
    Rap,
    Vap(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Eap(NodeId),
    Sta(NodeId),
}

#[derive(Debug)]
enum Ev {
    Air { rx: Node, channel: u8, rssi_dbm: f64, frame: TaggedFrame },
    Transmit { from: Node, frame: Dot11Frame, phy: PhyRate },
    Tunnel { to: NodeId, tunnel: TunnelId, sent_at_us: u64, latency_us: u64, bytes: Vec<u8> },
    Control { to: NodeId, from: NodeId, sent_at_us: u64, bytes: Vec<u8> },
    Beacon(NodeId),
    Report(NodeId),
    Discovery(NodeId),
    SetupTimeout { eap: NodeId, neighbor: NodeId },
    ScanStep { sta: NodeId, idx: usize },
    Burst { sta: NodeId, left: u32 },
    Epoch { loc: usize, rep: u32 },
    Measure { loc: usize, rep: u32 },
}

struct Eap {
    cfg: EapConfig,
    ctrl: Controller,
    /// Probe-response TX power per (BSS, STA), set when this radio hears the probe.
    tx_table: BTreeMap<(Bss, MacAddr), f64>,
    /// Last RSSI heard from each STA, used by rate control.
    sta_rssi: BTreeMap<MacAddr, f64>,
    answered: BTreeSet<(MacAddr, u16, MacAddr)>,
    vradio: VirtualRadio,
    seq: u16,
}

impl Eap {
    fn next_seq(&mut self) -> u16 {
        self.seq = (self.seq + 1) % frame::SEQ_MODULUS;
        self.seq
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StaState {
    Idle,
    Scanning,
    Authenticating { bssid: MacAddr },
    Associating { bssid: MacAddr },
    Associated { bssid: MacAddr },
}

struct Sta {
    cfg: StaConfig,
    mac: MacAddr,
    pos: radio::Position,
    listen: Option<u8>,
    state: StaState,
    heard: Vec<ProbeHeard>,
    seq: u16,
    phy: Option<PhyRate>,
    serving: Option<Serving>,
    delivered: u64,
}

impl Sta {
    fn next_seq(&mut self) -> u16 {
        self.seq = (self.seq + 1) % frame::SEQ_MODULUS;
        self.seq
    }
}

pub fn sta_mac(id: NodeId) -> MacAddr {
    let [_, a, b, c] = id.0.to_be_bytes();
    MacAddr([0x02, 0xaa, 0x00, a, b, c])
}

struct World<'a> {
    sc: &'a Scenario,
    seed: u64,
    q: EventQueue<Ev>,
    eaps: BTreeMap<NodeId, Eap>,
    stas: BTreeMap<NodeId, Sta>,
    sta_by_mac: BTreeMap<MacAddr, NodeId>,
    stats: SimStats,
    rows: Vec<Row>,
    shadow_epoch: u64,
    requested_at: BTreeMap<(NodeId, NodeId), u64>,
}

pub fn run(scenario: &Scenario, seed: u64) -> Result<Metrics, ScenarioError> {
    Ok(run_report(scenario, seed)?.metrics)
}

pub fn run_report(scenario: &Scenario, seed: u64) -> Result<Report, ScenarioError> {
    scenario.validate()?;
    let mut w = World::new(scenario, seed);
    w.start();
    w.run_to_end();
    Ok(w.finish())
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, seed: u64) -> Self {
        let rtt = 2 * sc.control.latency_us();
        let eaps = sc
            .eaps
            .iter()
            .map(|c| {
                let cfg = ControllerConfig {
                    policy: c.policy.clone(),
                    ssid: c.ssid().to_owned(),
                    channel: c.channel,
                    control_rtt_us: rtt.max(1),
                };
                let eap = Eap {
                    cfg: c.clone(),
                    ctrl: Controller::new(c.id, cfg),
                    tx_table: BTreeMap::new(),
                    sta_rssi: BTreeMap::new(),
                    answered: BTreeSet::new(),
                    vradio: VirtualRadio::default(),
                    seq: 0,
                };
                (c.id, eap)
            })
            .collect();
        let stas: BTreeMap<NodeId, Sta> = sc
            .stas
            .iter()
            .map(|c| {
                let sta = Sta {
                    cfg: c.clone(),
                    mac: sta_mac(c.id),
                    pos: c.waypoints[0].position,
                    listen: None,
                    state: StaState::Idle,
                    heard: vec![],
                    seq: 0,
                    phy: None,
                    serving: None,
                    delivered: 0,
                };
                (c.id, sta)
            })
            .collect();
        let sta_by_mac = stas.iter().map(|(id, s)| (s.mac, *id)).collect();
        World {
            sc,
            seed,
            q: EventQueue::new(),
            eaps,
            stas,
            sta_by_mac,
            stats: SimStats::default(),
            rows: vec![],
            shadow_epoch: 0,
            requested_at: BTreeMap::new(),
        }
    }

    fn nxwlan(&self) -> bool {
        self.sc.mode == Mode::Nxwlan
    }

    fn start(&mut self) {
        let ids: Vec<NodeId> = self.eaps.keys().copied().collect();
        for (i, id) in ids.iter().enumerate() {
            self.q.schedule_at(1000 * i as u64 + 100, Ev::Beacon(*id));
            self.q.schedule_at(self.sc.control.report_interval_ms * 1000, Ev::Report(*id));
            if self.nxwlan() {
                self.q.schedule_at(0, Ev::Discovery(*id));
            }
        }
        // Background stations join halfway through the settle period.
        let bg_start = self.sc.schedule.settle_ms * 1000 / 2;
        for (i, s) in self.sc.stas.iter().filter(|s| !s.measure).enumerate() {
            self.q.schedule_at(bg_start + 5000 * i as u64, Ev::ScanStep { sta: s.id, idx: 0 });
        }
        if let Some(m) = self.sc.measured() {
            for loc in 0..m.waypoints.len() {
                for rep in 0..self.sc.schedule.repetitions {
                    let t = self.sc.schedule.epoch_start_us(loc, rep);
                    self.q.schedule_at(t, Ev::Epoch { loc, rep });
                    self.q.schedule_at(t + self.sc.schedule.epoch_us(), Ev::Measure { loc, rep });
                }
            }
        }
    }

    fn end_time_us(&self) -> u64 {
        match self.sc.measured() {
            Some(m) => {
                let last = self.sc.schedule.epoch_start_us(m.waypoints.len() - 1, self.sc.schedule.repetitions - 1);
                last + self.sc.schedule.epoch_us()
            }
            None => self.sc.schedule.settle_ms * 1000,
        }
    }

    fn run_to_end(&mut self) {
        let end = self.end_time_us();
        while let Some(t) = self.q.peek_time() {
            if t > end {
                break;
            }
            let (_, ev) = self.q.pop().expect("peeked");
            self.dispatch(ev);
        }
        self.stats.events = self.q.executed();
    }

    fn finish(self) -> Report {
        let eaps = self
            .eaps
            .iter()
            .map(|(id, e)| {
                let phases = self.sc.eaps.iter().filter_map(|n| e.ctrl.phase(n.id).map(|p| (n.id, p))).collect();
                let snap = EapSnapshot {
                    ports: e.ctrl.switch().ports().map(|p| p.role).collect(),
                    phases,
                    rule_dump: e.ctrl.switch().dump_csv(),
                };
                (*id, snap)
            })
            .collect();
        Report { metrics: Metrics { rows: self.rows }, stats: self.stats, eaps }
    }

    fn now(&self) -> u64 {
        self.q.now_us()
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Air { rx: Node::Eap(e), channel, rssi_dbm, frame } => self.eap_receive(e, channel, rssi_dbm, frame),
            Ev::Air { rx: Node::Sta(s), channel, rssi_dbm, frame } => self.sta_receive(s, channel, rssi_dbm, frame),
            Ev::Transmit { from, frame, phy } => self.transmit(from, frame, phy, None),
            Ev::Tunnel { to, tunnel, sent_at_us, latency_us, bytes } => {
                self.note_latency(sent_at_us, latency_us);
                self.tunnel_receive(to, tunnel, &bytes)
            }
            Ev::Control { to, from, sent_at_us, bytes } => {
                self.note_latency(sent_at_us, self.sc.control.latency_us());
                self.control_receive(to, from, &bytes)
            }
            Ev::Beacon(e) => self.beacon(e),
            Ev::Report(e) => {
                self.send_report(e);
                self.q.schedule_in(self.sc.control.report_interval_ms * 1000, Ev::Report(e));
            }
            Ev::Discovery(e) => self.discovery(e),
            Ev::SetupTimeout { eap, neighbor } => {
                let now = self.now();
                self.eaps.get_mut(&eap).expect("eap").ctrl.on_setup_timeout(neighbor, now);
            }
            Ev::ScanStep { sta, idx } => self.scan_step(sta, idx),
            Ev::Burst { sta, left } => self.burst(sta, left),
            Ev::Epoch { loc, rep } => self.epoch(loc, rep),
            Ev::Measure { loc, rep } => self.measure(loc, rep),
        }
    }

    fn note_latency(&mut self, sent_at_us: u64, latency_us: u64) {
        let slack = self.now() - sent_at_us - latency_us;
        self.stats.min_latency_slack_us = Some(self.stats.min_latency_slack_us.map_or(slack, |m| m.min(slack)));
    }

    // ---- air ----

    fn node_pos_channel(&self, n: Node) -> (radio::Position, Option<u8>, f64) {
        match n {
            Node::Eap(e) => {
                let c = &self.eaps[&e].cfg;
                (c.position, Some(c.channel), c.tx_power_dbm)
            }
            Node::Sta(s) => {
                let st = &self.stas[&s];
                (st.pos, st.listen, self.sc.steering.ptx_client_dbm)
            }
        }
    }

    fn node_key(n: Node) -> u64 {
        match n {
            Node::Eap(e) => e.0 as u64,
            Node::Sta(s) => s.0 as u64,
        }
    }

    fn loss(&self, a: Node, b: Node) -> f64 {
        let (pa, _, _) = self.node_pos_channel(a);
        let (pb, _, _) = self.node_pos_channel(b);
        let pl = self.sc.path_loss.link_loss(&pa, &pb);
        pl + radio::shadowing_db(
            self.sc.path_loss.shadowing_sigma_db,
            self.seed,
            self.shadow_epoch,
            Self::node_key(a),
            Self::node_key(b),
        )
    }

    /// Puts a frame on the air. `power` overrides the node's default TX power.
    fn transmit(&mut self, from: Node, frame: Dot11Frame, phy: PhyRate, power: Option<f64>) {
        let (_, channel, default_power) = self.node_pos_channel(from);
        let Some(channel) = channel else { return };
        let power = power.unwrap_or(default_power);
        let injected = matches!(from, Node::Eap(_));
        if frame.kind == FrameKind::Ack {
            self.stats.acks_sent += 1;
        }
        self.stats.frames_on_air += 1;
        let mut receivers = vec![];
        for (id, e) in &self.eaps {
            if Node::Eap(*id) != from && e.cfg.channel == channel {
                receivers.push(Node::Eap(*id));
            }
        }
        for (id, s) in &self.stas {
            if Node::Sta(*id) != from && s.listen == Some(channel) {
                receivers.push(Node::Sta(*id));
            }
        }
        let meta = RadioMeta { rssi_dbm: 0, phy_rate: phy, tx_power_dbm: clamp_i8(power), injected, tx_status: false };
        let tf = TaggedFrame::new(frame, meta);
        let airtime = radio::airtime_us(tf.encoded_len(), phy);
        for rx in receivers {
            let rssi = power - self.loss(from, rx);
            if !self.sc.path_loss.decodable(rssi) {
                continue;
            }
            let mut copy = tf.clone();
            copy.meta.rssi_dbm = clamp_i8(rssi);
            copy.meta.injected = false;
            copy.meta.tx_power_dbm = 0;
            self.q.schedule_in(airtime, Ev::Air { rx, channel, rssi_dbm: rssi, frame: copy });
        }
    }

    // ---- EAP side ----

    fn port(&self, e: NodeId, role: PortRole) -> Option<PortId> {
        self.eaps[&e].ctrl.switch().port(role)
    }

    fn eap_receive(&mut self, e: NodeId, channel: u8, rssi: f64, tf: TaggedFrame) {
        let f = &tf.frame;
        let hosted: Vec<NodeId> = self.eaps[&e].ctrl.hosted().keys().copied().collect();
        if f.kind != FrameKind::Ack && !f.addr2.is_zero() {
            self.eaps.get_mut(&e).unwrap().sta_rssi.insert(f.addr2, rssi);
        }
        // The radio acknowledges for its own BSS and for every VAP it hosts a WTP for.
        let local_bssids: Vec<MacAddr> =
            std::iter::once(e.rap_bssid()).chain(hosted.iter().map(|v| v.vap_bssid())).collect();
        if local_bssids.contains(&f.addr1) {
            if let Some((delay, ack)) = radio::ack_locally(f.addr1, f) {
                self.q.schedule_in(delay, Ev::Transmit { from: Node::Eap(e), frame: ack, phy: PhyRate::Mbps6 });
            }
        }
        if f.kind == FrameKind::ProbeRequest {
            self.steer(e, rssi, f.addr2);
        }
        if self.nxwlan() {
            for v in &hosted {
                if f.addr1 == v.vap_bssid() && self.sta_by_mac.contains_key(&f.addr2) {
                    let _ = self.eaps.get_mut(&e).unwrap().ctrl.learn_wtp_client(*v, f.addr2);
                }
            }
        }
        let _ = channel;
        let mut ingress = vec![PortRole::RapRadio];
        ingress.extend(hosted.iter().map(|v| PortRole::WtpRadio(*v)));
        for role in ingress {
            let port = self.port(e, role).expect("radio port");
            self.switch_in(e, port, &tf);
        }
    }

    /// Runs the steering decision for a probe heard at this radio and fills
    /// the probe-response TX table.
    fn steer(&mut self, e: NodeId, prx: f64, sta: MacAddr) {
        let eap = &self.eaps[&e];
        let mut entries = vec![];
        if self.nxwlan() {
            let snap = ProbeSnapshot {
                prx_preq_dbm: prx,
                load: self.radio_load(e),
                backhaul: self.available_backhaul(e),
                neighbors: eap.ctrl.neighbor_reports(),
                mode: self.sc.mac_mode,
            };
            let d = steering::calc_probe_response_tx_powers(&self.sc.steering, &snap).expect("validated parameters");
            if d.rap.respond {
                entries.push((Bss::Rap, d.rap.tx_dbm));
            }
            for (v, ap) in &d.vaps {
                if ap.respond {
                    entries.push((Bss::Vap(*v), ap.tx_dbm));
                }
            }
        } else {
            entries.push((Bss::Rap, eap.cfg.tx_power_dbm));
        }
        let eap = self.eaps.get_mut(&e).unwrap();
        for (bss, tx) in entries {
            eap.tx_table.insert((bss, sta), tx);
        }
    }

    fn switch_in(&mut self, e: NodeId, ingress: PortId, tf: &TaggedFrame) {
        let verdict = self.eaps[&e].ctrl.switch().process(ingress, tf);
        match verdict {
            Verdict::Drop(r) => *self.stats.drops.entry(r).or_default() += 1,
            Verdict::Emit(out) => {
                for (port, f) in out {
                    self.egress(e, ingress, port, f);
                }
            }
        }
    }

    fn egress(&mut self, e: NodeId, ingress: PortId, port: PortId, tf: TaggedFrame) {
        match port.role {
            PortRole::VapAttach => self.mac_entity(e, ingress, tf),
            PortRole::RapRadio => self.radio_out(e, Bss::Rap, tf),
            PortRole::WtpRadio(v) => self.radio_out(e, Bss::Vap(v), tf),
            PortRole::Tunnel(t) => self.tunnel_send(e, ingress, t, tf),
            PortRole::Lan => {}
        }
    }

    fn radio_out(&mut self, e: NodeId, bss: Bss, tf: TaggedFrame) {
        let f = tf.frame;
        let (power, phy) = if f.kind == FrameKind::ProbeResponse {
            match self.eaps.get_mut(&e).unwrap().tx_table.remove(&(bss, f.addr1)) {
                Some(p) => (p, PhyRate::Mbps6),
                None => {
                    self.stats.probe_responses_suppressed += 1;
                    return;
                }
            }
        } else {
            let eap = &self.eaps[&e];
            let phy = if f.kind == FrameKind::Data && !f.addr1.is_broadcast() {
                let up = eap.sta_rssi.get(&f.addr1).copied();
                let fixed = self.sta_by_mac.get(&f.addr1).and_then(|s| self.stas[s].cfg.fixed_phy_mbps);
                fixed
                    .and_then(PhyRate::from_mbps)
                    .or_else(|| {
                        up.and_then(|r| {
                            radio::negotiated_phy(
                                &self.sc.steering,
                                r + eap.cfg.tx_power_dbm - self.sc.steering.ptx_client_dbm,
                            )
                        })
                    })
                    .unwrap_or(PhyRate::Mbps6)
            } else {
                PhyRate::Mbps6
            };
            (eap.cfg.tx_power_dbm, phy)
        };
        self.transmit(Node::Eap(e), f.clone(), phy, Some(power));
        if let Bss::Vap(v) = bss {
            // The WTP's driver reports the injected transmission back to the switch.
            let report = TaggedFrame::new(
                f,
                RadioMeta { rssi_dbm: 0, phy_rate: phy, tx_power_dbm: clamp_i8(power), injected: true, tx_status: true },
            );
            let port = self.port(e, PortRole::WtpRadio(v)).expect("wtp port");
            self.switch_in(e, port, &report);
        }
    }

    fn tunnel_link(&self, from: NodeId, t: TunnelId) -> (u64, f64) {
        let home = &self.eaps[&t.vap_home].cfg.backhaul;
        let host = &self.eaps[&t.wtp_host].cfg.backhaul;
        if from == t.vap_home {
            (home.ul.latency_us() + host.dl.latency_us(), home.ul.capacity_mbps.min(host.dl.capacity_mbps))
        } else {
            (host.ul.latency_us() + home.dl.latency_us(), host.ul.capacity_mbps.min(home.dl.capacity_mbps))
        }
    }

    fn tunnel_send(&mut self, e: NodeId, ingress: PortId, t: TunnelId, tf: TaggedFrame) {
        if tf.frame.kind == FrameKind::Ack {
            self.stats.acks_tunneled += 1;
        }
        if ingress.role == PortRole::VapAttach {
            let eap = self.eaps.get_mut(&e).unwrap();
            if eap.vradio.inject(&tf.frame) == 0 {
                self.stats.vap_auto_acks += 1;
            }
        }
        let bytes = match frame::encode(&tf) {
            Ok(b) => b,
            Err(_) => {
                self.stats.decode_errors += 1;
                return;
            }
        };
        let (latency, cap) = self.tunnel_link(e, t);
        let serialization = ((bytes.len() * 8) as f64 / cap).ceil() as u64;
        self.stats.frames_tunneled += 1;
        let now = self.now();
        self.q.schedule_in(
            latency + serialization,
            Ev::Tunnel { to: t.peer_of(e), tunnel: t, sent_at_us: now, latency_us: latency, bytes },
        );
    }

    fn tunnel_receive(&mut self, e: NodeId, t: TunnelId, bytes: &[u8]) {
        let tf = match frame::decode(bytes) {
            Ok(tf) => tf,
            Err(_) => {
                self.stats.decode_errors += 1;
                return;
            }
        };
        // The tunnel may have been torn down while the frame was in flight.
        if let Some(port) = self.port(e, PortRole::Tunnel(t)) {
            self.switch_in(e, port, &tf);
        }
    }

    /// Home MAC entity behind the VapAttach port. It answers for the RAP when
    /// a frame came from the local radio and for the VAP when it came from a
    /// tunnel.
    fn mac_entity(&mut self, e: NodeId, ingress: PortId, tf: TaggedFrame) {
        let f = tf.frame;
        let (bssid, via) = match ingress.role {
            PortRole::Tunnel(t) => (e.vap_bssid(), Attachment::Wtp(t.wtp_host)),
            PortRole::RapRadio => (e.rap_bssid(), Attachment::Rap),
            _ => return,
        };
        let ssid = self.eaps[&e].cfg.ssid().as_bytes().to_vec();
        let sta = f.addr2;
        let reply = match f.kind {
            FrameKind::ProbeRequest => {
                if !(f.payload.is_empty() || f.payload == ssid) {
                    return;
                }
                if !self.eaps.get_mut(&e).unwrap().answered.insert((sta, f.seq, bssid)) {
                    return;
                }
                Some((FrameKind::ProbeResponse, ssid))
            }
            FrameKind::AuthRequest if f.addr1 == bssid => {
                if self.eaps.get_mut(&e).unwrap().ctrl.attach_sta(sta, via).is_err() {
                    self.stats.control_errors += 1;
                    return;
                }
                Some((FrameKind::AuthResponse, vec![]))
            }
            FrameKind::AssocRequest if f.addr1 == bssid => Some((FrameKind::AssocResponse, vec![])),
            FrameKind::Data if f.addr1 == bssid => {
                self.stats.uplink_delivered += 1;
                None
            }
            _ => None,
        };
        if let Some((kind, payload)) = reply {
            let seq = self.eaps.get_mut(&e).unwrap().next_seq();
            let out = Dot11Frame::new(kind, sta, bssid, bssid, seq).with_payload(payload);
            self.inject_home(e, out);
        }
    }

    fn inject_home(&mut self, e: NodeId, f: Dot11Frame) {
        let vap = self.port(e, PortRole::VapAttach).expect("vap port");
        self.switch_in(e, vap, &TaggedFrame::new(f, RadioMeta::default()));
    }

    fn beacon(&mut self, e: NodeId) {
        let ssid = self.eaps[&e].cfg.ssid().as_bytes().to_vec();
        let mut bssids = vec![e.rap_bssid()];
        if self.eaps[&e].ctrl.established().next().is_some() {
            bssids.push(e.vap_bssid());
        }
        for b in bssids {
            let seq = self.eaps.get_mut(&e).unwrap().next_seq();
            let f = Dot11Frame::new(FrameKind::Beacon, MacAddr::BROADCAST, b, b, seq).with_payload(ssid.clone());
            self.inject_home(e, f);
        }
        self.q.schedule_in(self.sc.control.beacon_interval_us, Ev::Beacon(e));
    }

    // ---- control plane ----

    fn discovery(&mut self, e: NodeId) {
        let now = self.now();
        let neighbors = self.eaps[&e].cfg.neighbors.clone();
        for n in neighbors {
            let actions = self.eaps.get_mut(&e).unwrap().ctrl.on_discovery(n, now);
            if actions.iter().any(|a| matches!(a, Action::Send { .. })) {
                self.requested_at.insert((e, n), now);
            }
            self.run_actions(e, actions);
        }
        self.q.schedule_in(self.sc.control.discovery_interval_ms * 1000, Ev::Discovery(e));
    }

    fn run_actions(&mut self, e: NodeId, actions: Vec<Action>) {
        for a in actions {
            match a {
                Action::Send { to, msg } => {
                    let bytes = control::encode_msg(&msg).expect("controller messages encode");
                    let now = self.now();
                    self.q.schedule_in(self.sc.control.latency_us(), Ev::Control { to, from: e, sent_at_us: now, bytes });
                }
                Action::ArmTimer { neighbor, at_us } => {
                    self.q.schedule_at(at_us.max(self.now()), Ev::SetupTimeout { eap: e, neighbor })
                }
                Action::TunnelUp(t) if t.vap_home == e => {
                    let requested = self.requested_at.get(&(e, t.wtp_host)).copied().unwrap_or(0);
                    self.stats.handshakes.push(HandshakeRecord {
                        requester: e,
                        responder: t.wtp_host,
                        requested_at_us: requested,
                        established_at_us: self.now(),
                    });
                    self.send_report(e);
                }
                Action::TunnelUp(_) => {}
            }
        }
    }

    fn control_receive(&mut self, e: NodeId, from: NodeId, bytes: &[u8]) {
        let msg = match control::decode_msg(bytes) {
            Ok(m) => m,
            Err(_) => {
                self.stats.decode_errors += 1;
                return;
            }
        };
        match self.eaps.get_mut(&e).unwrap().ctrl.on_message(from, &msg) {
            Ok(actions) => self.run_actions(e, actions),
            Err(_) => self.stats.control_errors += 1,
        }
    }

    fn send_report(&mut self, e: NodeId) {
        if !self.nxwlan() {
            return;
        }
        let caps = self.available_backhaul(e);
        let actions = self.eaps[&e].ctrl.backhaul_reports(caps);
        self.run_actions(e, actions);
    }

    // ---- stations ----

    fn sta_transmit(&mut self, s: NodeId, f: Dot11Frame) {
        self.transmit(Node::Sta(s), f, PhyRate::Mbps6, None);
    }

    fn scan_step(&mut self, s: NodeId, idx: usize) {
        let sta = self.stas.get_mut(&s).unwrap();
        if idx == 0 {
            sta.heard.clear();
            sta.state = StaState::Scanning;
        }
        if sta.state != StaState::Scanning {
            return;
        }
        if let Some(&ch) = sta.cfg.channels.get(idx) {
            sta.listen = Some(ch);
            let seq = sta.next_seq();
            let ssid = self.eaps[&sta.cfg.home].cfg.ssid().as_bytes().to_vec();
            let probe =
                Dot11Frame::new(FrameKind::ProbeRequest, MacAddr::BROADCAST, sta.mac, MacAddr::BROADCAST, seq).with_payload(ssid);
            self.sta_transmit(s, probe);
            self.q.schedule_in(self.sc.control.probe_wait_ms * 1000, Ev::ScanStep { sta: s, idx: idx + 1 });
            return;
        }
        match radio::select_best(&sta.heard, self.sc.path_loss.sensitivity_dbm) {
            Some(best) => {
                sta.listen = Some(best.channel);
                sta.state = StaState::Authenticating { bssid: best.bssid };
                let seq = sta.next_seq();
                let auth = Dot11Frame::new(FrameKind::AuthRequest, best.bssid, sta.mac, best.bssid, seq);
                self.sta_transmit(s, auth);
            }
            None => {
                sta.listen = None;
                sta.state = StaState::Idle;
            }
        }
    }

    fn sta_receive(&mut self, s: NodeId, channel: u8, rssi: f64, tf: TaggedFrame) {
        let sta = self.stas.get_mut(&s).unwrap();
        let f = tf.frame;
        if sta.listen != Some(channel) || !(f.addr1 == sta.mac || f.addr1.is_broadcast()) {
            return;
        }
        if let Some((delay, ack)) = radio::ack_locally(sta.mac, &f) {
            self.q.schedule_in(delay, Ev::Transmit { from: Node::Sta(s), frame: ack, phy: PhyRate::Mbps6 });
        }
        let home = sta.cfg.home;
        match (f.kind, sta.state) {
            (FrameKind::ProbeResponse, StaState::Scanning) => {
                let ssid = self.eaps[&home].cfg.ssid().as_bytes();
                if f.payload == ssid {
                    sta.heard.push(ProbeHeard { bssid: f.addr2, channel, rssi_dbm: rssi });
                }
            }
            (FrameKind::AuthResponse, StaState::Authenticating { bssid }) if f.addr2 == bssid => {
                sta.state = StaState::Associating { bssid };
                let seq = sta.next_seq();
                let assoc = Dot11Frame::new(FrameKind::AssocRequest, bssid, sta.mac, bssid, seq);
                self.sta_transmit(s, assoc);
            }
            (FrameKind::AssocResponse, StaState::Associating { bssid }) if f.addr2 == bssid => {
                sta.state = StaState::Associated { bssid };
                sta.phy = sta
                    .cfg
                    .fixed_phy_mbps
                    .and_then(PhyRate::from_mbps)
                    .or_else(|| radio::negotiated_phy(&self.sc.steering, rssi));
                let mac = sta.mac;
                sta.serving = match self.eaps[&home].ctrl.attachment(mac) {
                    Some(Attachment::Rap) => Some(Serving::Rap(home)),
                    Some(Attachment::Wtp(host)) => Some(Serving::Wtp { host, vap_home: home }),
                    None => None,
                };
                let burst = self.sc.schedule.burst_frames;
                if burst > 0 {
                    self.q.schedule_in(BURST_DELAY_US, Ev::Burst { sta: s, left: burst });
                }
                self.send_report(home);
            }
            (FrameKind::Data, StaState::Associated { .. }) => {
                sta.delivered += 1;
                self.stats.downlink_delivered += 1;
            }
            _ => {}
        }
    }

    /// One frame of a short burst along the STA's traffic direction, proving
    /// the serving path end to end.
    fn burst(&mut self, s: NodeId, left: u32) {
        let sta = &self.stas[&s];
        let StaState::Associated { bssid } = sta.state else { return };
        let payload: Vec<u8> = (0..PAYLOAD_LEN).map(|i| (i as u8) ^ 0x5a).collect();
        match sta.cfg.traffic {
            Traffic::Downlink => {
                let home = sta.cfg.home;
                let mac = sta.mac;
                let seq = self.eaps.get_mut(&home).unwrap().next_seq();
                let f = Dot11Frame::new(FrameKind::Data, mac, bssid, bssid, seq).with_payload(payload).protected();
                self.inject_home(home, f);
            }
            Traffic::Uplink => {
                let sta = self.stas.get_mut(&s).unwrap();
                let seq = sta.next_seq();
                let f = Dot11Frame::new(FrameKind::Data, bssid, sta.mac, bssid, seq).with_payload(payload).protected();
                self.sta_transmit(s, f);
            }
            Traffic::None => return,
        }
        if left > 1 {
            self.q.schedule_in(BURST_SPACING_US, Ev::Burst { sta: s, left: left - 1 });
        }
    }

    // ---- epochs and throughput ----

    fn measured_id(&self) -> NodeId {
        self.sc.measured().expect("epochs only exist with a measured STA").id
    }

    fn epoch(&mut self, loc: usize, rep: u32) {
        let id = self.measured_id();
        self.shadow_epoch = 1 + loc as u64 * self.sc.schedule.repetitions as u64 + rep as u64;
        let sta = self.stas.get_mut(&id).unwrap();
        sta.pos = sta.cfg.waypoints[loc].position;
        sta.delivered = 0;
        self.scan_step(id, 0);
    }

    fn measure(&mut self, loc: usize, rep: u32) {
        let id = self.measured_id();
        let rates = self.allocate();
        let sta = &self.stas[&id];
        let location_m = sta.cfg.waypoints[loc].location_m;
        let home = sta.cfg.home;
        let (serving, mbps, bounds) = match (sta.serving, rates.get(&id)) {
            (Some(serving), Some(&(rate, wireless))) => {
                let hb = &self.eaps[&home].cfg.backhaul;
                let tunnel_ul = match serving {
                    Serving::Rap(_) => None,
                    Serving::Wtp { host, .. } => Some(hb.ul.capacity_mbps.min(self.eaps[&host].cfg.backhaul.dl.capacity_mbps)),
                };
                let label = match serving {
                    Serving::Rap(n) => format!("rap:{}", self.eaps[&n].cfg.name),
                    Serving::Wtp { host, .. } => format!("wtp:{}", self.eaps[&host].cfg.name),
                };
                // Without a delivered frame the serving path is broken.
                let mbps = if sta.delivered > 0 || self.sc.schedule.burst_frames == 0 { rate } else { 0.0 };
                let bounds = Bounds { wireless_mbps: wireless, serving_dl_mbps: hb.dl.capacity_mbps, tunnel_ul_mbps: tunnel_ul };
                (label, mbps, Some(bounds))
            }
            _ => ("none".to_owned(), 0.0, None),
        };
        self.rows.push(Row { mode: self.sc.mode, location_m, rep, serving, mbps, bounds });
        self.disassociate(id);
    }

    fn disassociate(&mut self, id: NodeId) {
        let sta = self.stas.get_mut(&id).unwrap();
        let (mac, home, serving) = (sta.mac, sta.cfg.home, sta.serving.take());
        sta.state = StaState::Idle;
        sta.listen = None;
        sta.phy = None;
        let _ = self.eaps.get_mut(&home).unwrap().ctrl.detach_sta(mac);
        if let Some(Serving::Wtp { host, vap_home }) = serving {
            self.eaps.get_mut(&host).unwrap().ctrl.forget_wtp_client(vap_home, mac);
        }
        self.send_report(home);
    }

    /// Active clients on an EAP's physical radio, RAP and WTPs alike.
    fn radio_load(&self, e: NodeId) -> ClientLoad {
        ClientLoad::new(
            self.stas
                .values()
                .filter(|s| s.cfg.traffic != Traffic::None && s.serving.is_some_and(|v| v.radio_owner() == e))
                .filter_map(|s| s.phy.map(|p| p.mbps())),
        )
    }

    /// Max-min fair rates of every active STA: (end-to-end, wireless) per STA.
    fn allocate(&self) -> BTreeMap<NodeId, (f64, f64)> {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
        enum Link {
            Dl(NodeId),
            Ul(NodeId),
        }
        let active: Vec<(&NodeId, &Sta, Serving, PhyRate)> = self
            .stas
            .iter()
            .filter(|(_, s)| s.cfg.traffic != Traffic::None)
            .filter_map(|(id, s)| Some((id, s, s.serving?, s.phy?)))
            .collect();
        let mut by_radio: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for (i, (_, _, serving, _)) in active.iter().enumerate() {
            by_radio.entry(serving.radio_owner()).or_default().push(i);
        }
        let mut wireless = vec![0.0; active.len()];
        for members in by_radio.values() {
            let phys: Vec<f64> = members.iter().map(|&i| active[i].3.mbps()).collect();
            let rates = steering::mac_rates(&phys, self.sc.mac_mode).expect("PHY rates are positive");
            for (&i, r) in members.iter().zip(rates) {
                wireless[i] = r;
            }
        }
        let flows: Vec<Flow<Link>> = active
            .iter()
            .enumerate()
            .map(|(i, (_, s, serving, _))| {
                let home = s.cfg.home;
                let links = match (serving, s.cfg.traffic) {
                    (Serving::Rap(_), Traffic::Uplink) => vec![Link::Ul(home)],
                    (Serving::Rap(_), _) => vec![Link::Dl(home)],
                    (Serving::Wtp { host, .. }, Traffic::Uplink) => vec![Link::Ul(*host), Link::Dl(home), Link::Ul(home)],
                    (Serving::Wtp { host, .. }, _) => vec![Link::Dl(home), Link::Ul(home), Link::Dl(*host)],
                };
                Flow { cap_mbps: wireless[i], links }
            })
            .collect();
        let caps: BTreeMap<Link, f64> = self
            .eaps
            .values()
            .flat_map(|e| {
                [(Link::Dl(e.cfg.id), e.cfg.backhaul.dl.capacity_mbps), (Link::Ul(e.cfg.id), e.cfg.backhaul.ul.capacity_mbps)]
            })
            .collect();
        let rates = max_min_fair(&flows, &caps);
        let mut out = BTreeMap::new();
        for (i, (id, _, _, _)) in active.iter().enumerate() {
            out.insert(**id, (rates[i], wireless[i]));
        }
        let _ = caps;
        out
    }

    /// Backhaul left over after current traffic, as reported to neighbors.
    fn available_backhaul(&self, e: NodeId) -> BackhaulCaps {
        let bh = &self.eaps[&e].cfg.backhaul;
        let mut dl_used = 0.0;
        let mut ul_used = 0.0;
        let rates = self.allocate();
        for (id, (rate, _)) in rates {
            let s = &self.stas[&id];
            let Some(serving) = s.serving else { continue };
            let home = s.cfg.home;
            let uplink = s.cfg.traffic == Traffic::Uplink;
            let mut uses = |link_dl: bool, owner: NodeId| {
                if owner == e {
                    if link_dl {
                        dl_used += rate;
                    } else {
                        ul_used += rate;
                    }
                }
            };
            match (serving, uplink) {
                (Serving::Rap(_), true) => uses(false, home),
                (Serving::Rap(_), false) => uses(true, home),
                (Serving::Wtp { host, .. }, true) => {
                    uses(false, host);
                    uses(true, home);
                    uses(false, home);
                }
                (Serving::Wtp { host, .. }, false) => {
                    uses(true, home);
                    uses(false, home);
                    uses(true, host);
                }
            }
        }
        BackhaulCaps::new((bh.dl.capacity_mbps - dl_used).max(0.0), (bh.ul.capacity_mbps - ul_used).max(0.0))
    }
}

fn clamp_i8(v: f64) -> i8 {
    v.round().clamp(i8::MIN as f64, i8::MAX as f64) as i8
}
