//! Per-EAP controller: neighbor discovery, the WTP setup handshake, backhaul
//! reports and STA attachment. The controller owns its EAP's switch and is the
//! only writer of its tables.
//!
//! Each ordered neighbor pair runs its own handshake. The requester is the
//! VAP home; the responder hosts a WTP for that VAP. So two neighbors that
//! accept each other end up with two tunnels, one per VAP-WTP pair.

pub mod msg;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::MacAddr;
use crate::steering::BackhaulCaps;
use crate::switch::{
    BroadcastRule, MulticastGroup, PortId, PortRole, RuleKey, SrcMatch, Switch, SwitchError, TableOp, TunnelId,
    UnicastRule,
};
use crate::NodeId;
pub use msg::{decode_msg, encode_msg, BssConfig, ControlMsg, MsgError, TunnelEndpoint};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupPolicy {
    #[default]
    Accept,
    Reject,
    /// Accept requests only from the listed neighbors.
    AcceptOnly(BTreeSet<NodeId>),
}

impl SetupPolicy {
    pub fn admits(&self, requester: NodeId) -> bool {
        match self {
            SetupPolicy::Accept => true,
            SetupPolicy::Reject => false,
            SetupPolicy::AcceptOnly(set) => set.contains(&requester),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NeighborPhase {
    Discovered,
    SetupRequested { sent_at_us: u64 },
    Established(TunnelId),
    Silent,
}

/// Where the home AP delivers a STA's downlink frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Attachment {
    Rap,
    /// Through the WTP hosted by the given neighbor.
    Wtp(NodeId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Send { to: NodeId, msg: ControlMsg },
    ArmTimer { neighbor: NodeId, at_us: u64 },
    TunnelUp(TunnelId),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("unexpected {msg} from {from}")]
    UnexpectedMsg { from: NodeId, msg: &'static str },
    #[error("unknown station {0}")]
    UnknownSta(MacAddr),
    #[error("no established tunnel towards {0}")]
    NoTunnel(NodeId),
    #[error(transparent)]
    Switch(#[from] SwitchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub policy: SetupPolicy,
    pub ssid: String,
    pub channel: u8,
    /// Round-trip time of the control bus, microseconds.
    pub control_rtt_us: u64,
}

impl ControllerConfig {
    pub fn setup_timeout_us(&self) -> u64 {
        3 * self.control_rtt_us
    }
}

#[derive(Debug, Clone)]
struct Neighbor {
    phase: NeighborPhase,
    session: u32,
}

#[derive(Debug, Clone)]
pub struct HostedWtp {
    pub tunnel: TunnelId,
    pub wtp_port: PortId,
    pub tunnel_port: PortId,
    pub bss: BssConfig,
    pub report: Option<BackhaulCaps>,
    last_complete: ControlMsg,
}

#[derive(Debug, Clone)]
pub struct Controller {
    me: NodeId,
    config: ControllerConfig,
    switch: Switch,
    neighbors: BTreeMap<NodeId, Neighbor>,
    hosted: BTreeMap<NodeId, HostedWtp>,
    stas: BTreeMap<MacAddr, Attachment>,
    next_session: u32,
}

impl Controller {
    pub fn new(me: NodeId, config: ControllerConfig) -> Self {
        let mut switch = Switch::new();
        let rap = switch.add_port(PortRole::RapRadio).expect("fresh switch");
        let vap = switch.add_port(PortRole::VapAttach).expect("fresh switch");
        switch
            .apply(vec![
                TableOp::InstallUnicast(UnicastRule { ingress: rap, dst_mac: me.rap_bssid(), egress: vap }),
                TableOp::InstallBroadcast(BroadcastRule {
                    ingress: rap,
                    src_mac: SrcMatch::Any,
                    group: MulticastGroup::new(0, [vap]),
                }),
                TableOp::InstallBroadcast(BroadcastRule {
                    ingress: vap,
                    src_mac: SrcMatch::Exact(me.rap_bssid()),
                    group: MulticastGroup::new(1, [rap]),
                }),
            ])
            .expect("base rules are well formed");
        Controller {
            me,
            config,
            switch,
            neighbors: BTreeMap::new(),
            hosted: BTreeMap::new(),
            stas: BTreeMap::new(),
            next_session: 1,
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn switch(&self) -> &Switch {
        &self.switch
    }

    pub fn phase(&self, neighbor: NodeId) -> Option<NeighborPhase> {
        self.neighbors.get(&neighbor).map(|n| n.phase)
    }

    pub fn established(&self) -> impl Iterator<Item = (NodeId, TunnelId)> + '_ {
        self.neighbors.iter().filter_map(|(id, n)| match n.phase {
            NeighborPhase::Established(t) => Some((*id, t)),
            _ => None,
        })
    }

    pub fn hosted(&self) -> &BTreeMap<NodeId, HostedWtp> {
        &self.hosted
    }

    /// Backhaul last reported by each VAP home whose WTP runs here.
    pub fn neighbor_reports(&self) -> BTreeMap<NodeId, BackhaulCaps> {
        self.hosted.iter().filter_map(|(id, h)| h.report.map(|r| (*id, r))).collect()
    }

    pub fn attachment(&self, sta: MacAddr) -> Option<Attachment> {
        self.stas.get(&sta).copied()
    }

    fn home_bss(&self) -> BssConfig {
        BssConfig { ssid: self.config.ssid.clone(), bssid: self.me.vap_bssid(), channel: self.config.channel }
    }

    fn port(&self, role: PortRole) -> PortId {
        self.switch.port(role).expect("port attached by the controller")
    }

    /// Discovery also serves as the retry tick for neighbors that went silent.
    pub fn on_discovery(&mut self, neighbor: NodeId, now_us: u64) -> Vec<Action> {
        if neighbor == self.me {
            return vec![];
        }
        let session = match self.neighbors.get(&neighbor).map(|n| n.phase) {
            None | Some(NeighborPhase::Discovered) => {
                let session = self.next_session;
                self.next_session += 1;
                session
            }
            Some(NeighborPhase::Silent) => self.neighbors[&neighbor].session,
            Some(NeighborPhase::SetupRequested { .. }) | Some(NeighborPhase::Established(_)) => return vec![],
        };
        self.neighbors.insert(neighbor, Neighbor { phase: NeighborPhase::SetupRequested { sent_at_us: now_us }, session });
        vec![
            Action::Send {
                to: neighbor,
                msg: ControlMsg::WtpSetupRequest {
                    requester: self.me,
                    endpoint: TunnelEndpoint { node: self.me, session },
                    bss: self.home_bss(),
                },
            },
            Action::ArmTimer { neighbor, at_us: now_us + self.config.setup_timeout_us() },
        ]
    }

    /// Responder side. Rejection is silent.
    pub fn on_setup_request(&mut self, msg: &ControlMsg) -> Result<Vec<Action>, ControlError> {
        let ControlMsg::WtpSetupRequest { requester, endpoint, bss } = msg else {
            return Err(ControlError::UnexpectedMsg { from: NodeId(u32::MAX), msg: msg.name() });
        };
        let requester = *requester;
        if requester == self.me {
            return Err(ControlError::UnexpectedMsg { from: requester, msg: msg.name() });
        }
        if let Some(h) = self.hosted.get(&requester) {
            return Ok(vec![Action::Send { to: requester, msg: h.last_complete.clone() }]);
        }
        if !self.config.policy.admits(requester) {
            return Ok(vec![]);
        }
        let tunnel = TunnelId::new(requester, self.me);
        let wtp = self.switch.add_port(PortRole::WtpRadio(requester))?;
        let tun = match self.switch.add_port(PortRole::Tunnel(tunnel)) {
            Ok(p) => p,
            Err(e) => {
                self.switch.remove_port(wtp.role);
                return Err(e.into());
            }
        };
        let group_base = 2 + 2 * requester.0;
        let ops = vec![
            TableOp::InstallBroadcast(BroadcastRule {
                ingress: wtp,
                src_mac: SrcMatch::Any,
                group: MulticastGroup::new(group_base, [tun]),
            }),
            TableOp::InstallBroadcast(BroadcastRule {
                ingress: tun,
                src_mac: SrcMatch::Any,
                group: MulticastGroup::new(group_base + 1, [wtp]),
            }),
            TableOp::InstallUnicast(UnicastRule { ingress: wtp, dst_mac: bss.bssid, egress: tun }),
        ];
        if let Err(e) = self.switch.apply(ops) {
            self.switch.remove_port(wtp.role);
            self.switch.remove_port(tun.role);
            return Err(e.into());
        }
        let complete = ControlMsg::WtpSetupComplete {
            responder: self.me,
            endpoint: TunnelEndpoint { node: self.me, session: endpoint.session },
            wtp_port: wtp.id,
        };
        self.hosted.insert(
            requester,
            HostedWtp {
                tunnel,
                wtp_port: wtp,
                tunnel_port: tun,
                bss: bss.clone(),
                report: None,
                last_complete: complete.clone(),
            },
        );
        Ok(vec![Action::TunnelUp(tunnel), Action::Send { to: requester, msg: complete }])
    }

    /// Requester side.
    pub fn on_setup_complete(&mut self, from: NodeId, msg: &ControlMsg) -> Result<Vec<Action>, ControlError> {
        let unexpected = ControlError::UnexpectedMsg { from, msg: msg.name() };
        let ControlMsg::WtpSetupComplete { responder, endpoint, .. } = msg else {
            return Err(unexpected);
        };
        let Some(n) = self.neighbors.get(&from) else {
            return Err(unexpected);
        };
        if *responder != from || endpoint.session != n.session || !matches!(n.phase, NeighborPhase::SetupRequested { .. }) {
            return Err(unexpected);
        }
        let tunnel = TunnelId::new(self.me, from);
        let tun = self.switch.add_port(PortRole::Tunnel(tunnel))?;
        let vap = self.port(PortRole::VapAttach);
        let mut tunnels: Vec<PortId> = self.established().map(|(_, t)| self.port(PortRole::Tunnel(t))).collect();
        tunnels.push(tun);
        let ops = vec![
            TableOp::InstallUnicast(UnicastRule { ingress: tun, dst_mac: self.me.vap_bssid(), egress: vap }),
            TableOp::InstallBroadcast(BroadcastRule {
                ingress: tun,
                src_mac: SrcMatch::Any,
                group: MulticastGroup::new(2 + 2 * from.0, [vap]),
            }),
            // VAP beacons and probe responses go out through every WTP.
            TableOp::InstallBroadcast(BroadcastRule {
                ingress: vap,
                src_mac: SrcMatch::Exact(self.me.vap_bssid()),
                group: MulticastGroup::new(u32::MAX, tunnels),
            }),
        ];
        if let Err(e) = self.switch.apply(ops) {
            self.switch.remove_port(tun.role);
            return Err(e.into());
        }
        self.neighbors.get_mut(&from).unwrap().phase = NeighborPhase::Established(tunnel);
        Ok(vec![Action::TunnelUp(tunnel)])
    }

    /// Fires when the response timer expires. A neighbor still waiting for a
    /// response goes silent; anything else ignores the timer.
    pub fn on_setup_timeout(&mut self, neighbor: NodeId, now_us: u64) {
        if let Some(n) = self.neighbors.get_mut(&neighbor) {
            if let NeighborPhase::SetupRequested { sent_at_us } = n.phase {
                if now_us >= sent_at_us + self.config.setup_timeout_us() {
                    n.phase = NeighborPhase::Silent;
                }
            }
        }
    }

    /// Accepted only from a VAP home whose WTP this EAP hosts.
    pub fn on_backhaul_report(&mut self, from: NodeId, msg: &ControlMsg) -> Result<(), ControlError> {
        let unexpected = ControlError::UnexpectedMsg { from, msg: msg.name() };
        let ControlMsg::BackhaulReport { dl_mbps, ul_mbps } = msg else {
            return Err(unexpected);
        };
        match self.hosted.get_mut(&from) {
            Some(h) => {
                h.report = Some(BackhaulCaps::new(*dl_mbps, *ul_mbps));
                Ok(())
            }
            None => Err(unexpected),
        }
    }

    /// Reports this EAP's available backhaul to every neighbor hosting its WTP.
    pub fn backhaul_reports(&self, caps: BackhaulCaps) -> Vec<Action> {
        self.established()
            .map(|(to, _)| Action::Send { to, msg: ControlMsg::BackhaulReport { dl_mbps: caps.dl_mbps, ul_mbps: caps.ul_mbps } })
            .collect()
    }

    /// Routes a received control message to its handler.
    pub fn on_message(&mut self, from: NodeId, msg: &ControlMsg) -> Result<Vec<Action>, ControlError> {
        match msg {
            ControlMsg::WtpSetupRequest { .. } => self.on_setup_request(msg),
            ControlMsg::WtpSetupComplete { .. } => self.on_setup_complete(from, msg),
            ControlMsg::BackhaulReport { .. } => self.on_backhaul_report(from, msg).map(|_| vec![]),
        }
    }

    fn egress_for(&self, target: Attachment) -> Result<PortId, ControlError> {
        match target {
            Attachment::Rap => Ok(self.port(PortRole::RapRadio)),
            Attachment::Wtp(n) => match self.phase(n) {
                Some(NeighborPhase::Established(t)) => Ok(self.port(PortRole::Tunnel(t))),
                _ => Err(ControlError::NoTunnel(n)),
            },
        }
    }

    /// Installs the downlink rule for a STA joining the RAP or the VAP.
    pub fn attach_sta(&mut self, sta: MacAddr, target: Attachment) -> Result<(), ControlError> {
        let egress = self.egress_for(target)?;
        let vap = self.port(PortRole::VapAttach);
        self.switch.install_unicast(UnicastRule { ingress: vap, dst_mac: sta, egress })?;
        self.stas.insert(sta, target);
        Ok(())
    }

    pub fn detach_sta(&mut self, sta: MacAddr) -> Result<(), ControlError> {
        self.stas.remove(&sta).ok_or(ControlError::UnknownSta(sta))?;
        let vap = self.port(PortRole::VapAttach);
        self.switch.remove(RuleKey::Unicast { ingress: vap.id, dst_mac: sta });
        Ok(())
    }

    /// Moves a STA's downlink to another radio with a single table update, so
    /// every frame goes either the old way or the new way.
    pub fn roam(&mut self, sta: MacAddr, target: Attachment) -> Result<(), ControlError> {
        let current = self.attachment(sta).ok_or(ControlError::UnknownSta(sta))?;
        if current == target {
            return Ok(());
        }
        self.attach_sta(sta, target)
    }

    /// Host side: after seeing `sta` talk to `vap_home`'s VAP through the local
    /// WTP, frames coming back through the tunnel for `sta` go out on that WTP.
    pub fn learn_wtp_client(&mut self, vap_home: NodeId, sta: MacAddr) -> Result<(), ControlError> {
        let h = self.hosted.get(&vap_home).ok_or(ControlError::NoTunnel(vap_home))?;
        let rule = UnicastRule { ingress: h.tunnel_port, dst_mac: sta, egress: h.wtp_port };
        if self.switch.unicast_egress(rule.ingress, sta) == Some(rule.egress) {
            return Ok(());
        }
        self.switch.install_unicast(rule)?;
        Ok(())
    }

    pub fn forget_wtp_client(&mut self, vap_home: NodeId, sta: MacAddr) {
        if let Some(h) = self.hosted.get(&vap_home) {
            let key = RuleKey::Unicast { ingress: h.tunnel_port.id, dst_mac: sta };
            self.switch.remove(key);
        }
    }
}
