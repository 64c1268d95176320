//! Per-EAP software switch operating on native 802.11 frames.
//!
//! The ingress pipeline has two stages. Stage 1 holds fixed drop filters.
//! Stage 2 picks one of two match-action tables: the unicast ("frame
//! switching") table keyed on (ingress port, destination MAC), or the
//! broadcast table keyed on (ingress port, source MAC) which selects a
//! multicast group. The buffering stage replicates immediately and the egress
//! pipeline is empty, so emitted frames are byte-identical to the input.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FrameKind, MacAddr, TaggedFrame};
use crate::NodeId;

/// Identifies one VAP-WTP tunnel: the EAP whose VAP owns it and the EAP
/// hosting the WTP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelId {
    pub vap_home: NodeId,
    pub wtp_host: NodeId,
}

impl TunnelId {
    pub fn new(vap_home: NodeId, wtp_host: NodeId) -> Self {
        TunnelId { vap_home, wtp_host }
    }

    /// The far end of the tunnel as seen from `local`.
    pub fn peer_of(&self, local: NodeId) -> NodeId {
        if local == self.vap_home {
            self.wtp_host
        } else {
            self.vap_home
        }
    }
}

impl fmt::Display for TunnelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vap{}-wtp{}", self.vap_home, self.wtp_host)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PortRole {
    /// The physical radio used by the real AP.
    RapRadio,
    /// The home MAC entity (VAP and RAP management/data generation).
    VapAttach,
    /// Monitor interface of a WTP hosted for the given neighbor's VAP.
    WtpRadio(NodeId),
    Tunnel(TunnelId),
    Lan,
}

impl fmt::Display for PortRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PortRole::RapRadio => f.write_str("rap"),
            PortRole::VapAttach => f.write_str("vap"),
            PortRole::WtpRadio(n) => write!(f, "wtp{n}"),
            PortRole::Tunnel(t) => write!(f, "tun:{t}"),
            PortRole::Lan => f.write_str("lan"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortId {
    pub id: u16,
    pub role: PortRole,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnicastRule {
    pub ingress: PortId,
    pub dst_mac: MacAddr,
    pub egress: PortId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SrcMatch {
    Exact(MacAddr),
    Any,
}

impl fmt::Display for SrcMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SrcMatch::Exact(m) => write!(f, "{m}"),
            SrcMatch::Any => f.write_str("*"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MulticastGroup {
    pub group_id: u32,
    pub ports: BTreeSet<PortId>,
}

impl MulticastGroup {
    pub fn new(group_id: u32, ports: impl IntoIterator<Item = PortId>) -> Self {
        MulticastGroup { group_id, ports: ports.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BroadcastRule {
    pub ingress: PortId,
    pub src_mac: SrcMatch,
    pub group: MulticastGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleKey {
    Unicast { ingress: u16, dst_mac: MacAddr },
    Broadcast { ingress: u16, src_mac: SrcMatch },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableOp {
    InstallUnicast(UnicastRule),
    InstallBroadcast(BroadcastRule),
    Remove(RuleKey),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DropReason {
    ControlFrame,
    TxStatusReport,
    SniffedBeacon,
    NoRule,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::ControlFrame => "control_frame",
            DropReason::TxStatusReport => "tx_status_report",
            DropReason::SniffedBeacon => "sniffed_beacon",
            DropReason::NoRule => "no_rule",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Emit(Vec<(PortId, TaggedFrame)>),
    Drop(DropReason),
}

impl Verdict {
    pub fn emitted(&self) -> &[(PortId, TaggedFrame)] {
        match self {
            Verdict::Emit(out) => out,
            Verdict::Drop(_) => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SwitchError {
    #[error("bad rule: {0}")]
    BadRule(String),
    #[error("port {0} already attached")]
    DuplicatePort(PortRole),
}

/// Stage-1 filter. Returns the reason a frame never reaches the tables.
pub fn stage1_drop(ingress: PortRole, tf: &TaggedFrame) -> Option<DropReason> {
    if tf.frame.kind.is_control() {
        Some(DropReason::ControlFrame)
    } else if tf.meta.tx_status {
        Some(DropReason::TxStatusReport)
    } else if tf.frame.kind == FrameKind::Beacon && matches!(ingress, PortRole::WtpRadio(_)) {
        Some(DropReason::SniffedBeacon)
    } else {
        None
    }
}

/// Probe exchanges always fan out: MAC-randomizing clients cannot be matched
/// by address, and a VAP answers through every WTP that may have heard it.
pub fn uses_broadcast_table(tf: &TaggedFrame) -> bool {
    tf.frame.addr1.is_broadcast()
        || matches!(tf.frame.kind, FrameKind::ProbeRequest | FrameKind::ProbeResponse)
}

#[derive(Debug, Clone, Default)]
pub struct Switch {
    ports: BTreeMap<u16, PortId>,
    next_port: u16,
    unicast: BTreeMap<(u16, MacAddr), PortId>,
    broadcast: BTreeMap<(u16, SrcMatch), MulticastGroup>,
}

impl Switch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_port(&mut self, role: PortRole) -> Result<PortId, SwitchError> {
        if self.port(role).is_some() {
            return Err(SwitchError::DuplicatePort(role));
        }
        let port = PortId { id: self.next_port, role };
        self.next_port += 1;
        self.ports.insert(port.id, port);
        Ok(port)
    }

    /// Detaches a port and every rule that references it. Groups that become
    /// empty are removed with their rule.
    pub fn remove_port(&mut self, role: PortRole) -> Option<PortId> {
        let port = self.port(role)?;
        self.ports.remove(&port.id);
        self.unicast.retain(|(ingress, _), egress| *ingress != port.id && egress.id != port.id);
        self.broadcast.retain(|(ingress, _), group| {
            group.ports.remove(&port);
            *ingress != port.id && !group.ports.is_empty()
        });
        Some(port)
    }

    pub fn port(&self, role: PortRole) -> Option<PortId> {
        self.ports.values().find(|p| p.role == role).copied()
    }

    pub fn ports(&self) -> impl Iterator<Item = PortId> + '_ {
        self.ports.values().copied()
    }

    fn check_port(&self, port: PortId) -> Result<(), SwitchError> {
        match self.ports.get(&port.id) {
            Some(p) if *p == port => Ok(()),
            _ => Err(SwitchError::BadRule(format!("port {} ({}) is not attached", port.id, port.role))),
        }
    }

    fn check_op(&self, op: &TableOp) -> Result<(), SwitchError> {
        match op {
            TableOp::InstallUnicast(rule) => {
                self.check_port(rule.ingress)?;
                self.check_port(rule.egress)?;
                if rule.egress == rule.ingress {
                    return Err(SwitchError::BadRule("egress equals ingress".into()));
                }
            }
            TableOp::InstallBroadcast(rule) => {
                self.check_port(rule.ingress)?;
                if rule.group.ports.is_empty() {
                    return Err(SwitchError::BadRule("empty multicast group".into()));
                }
                if rule.group.ports.contains(&rule.ingress) {
                    return Err(SwitchError::BadRule("multicast group contains the ingress port".into()));
                }
                for p in &rule.group.ports {
                    self.check_port(*p)?;
                }
            }
            TableOp::Remove(_) => {}
        }
        Ok(())
    }

    /// Applies a batch of table operations all-or-nothing. A batch either
    /// validates completely and is applied in full, or leaves the tables
    /// untouched.
    pub fn apply(&mut self, ops: Vec<TableOp>) -> Result<(), SwitchError> {
        for op in &ops {
            self.check_op(op)?;
        }
        for op in ops {
            match op {
                TableOp::InstallUnicast(rule) => {
                    self.unicast.insert((rule.ingress.id, rule.dst_mac), rule.egress);
                }
                TableOp::InstallBroadcast(rule) => {
                    self.broadcast.insert((rule.ingress.id, rule.src_mac), rule.group);
                }
                TableOp::Remove(RuleKey::Unicast { ingress, dst_mac }) => {
                    self.unicast.remove(&(ingress, dst_mac));
                }
                TableOp::Remove(RuleKey::Broadcast { ingress, src_mac }) => {
                    self.broadcast.remove(&(ingress, src_mac));
                }
            }
        }
        Ok(())
    }

    pub fn install_unicast(&mut self, rule: UnicastRule) -> Result<(), SwitchError> {
        self.apply(vec![TableOp::InstallUnicast(rule)])
    }

    pub fn install_broadcast(&mut self, rule: BroadcastRule) -> Result<(), SwitchError> {
        self.apply(vec![TableOp::InstallBroadcast(rule)])
    }

    /// Removing an absent key is a no-op.
    pub fn remove(&mut self, key: RuleKey) {
        let _ = self.apply(vec![TableOp::Remove(key)]);
    }

    pub fn unicast_egress(&self, ingress: PortId, dst: MacAddr) -> Option<PortId> {
        self.unicast.get(&(ingress.id, dst)).copied()
    }

    pub fn broadcast_group(&self, ingress: PortId, src: MacAddr) -> Option<&MulticastGroup> {
        self.broadcast
            .get(&(ingress.id, SrcMatch::Exact(src)))
            .or_else(|| self.broadcast.get(&(ingress.id, SrcMatch::Any)))
    }

    pub fn rule_count(&self) -> usize {
        self.unicast.len() + self.broadcast.len()
    }

    pub fn process(&self, ingress: PortId, tf: &TaggedFrame) -> Verdict {
        if let Some(reason) = stage1_drop(ingress.role, tf) {
            return Verdict::Drop(reason);
        }
        if uses_broadcast_table(tf) {
            match self.broadcast_group(ingress, tf.frame.addr2) {
                Some(group) => Verdict::Emit(
                    group
                        .ports
                        .iter()
                        .filter(|p| p.id != ingress.id)
                        .map(|p| (*p, tf.clone()))
                        .collect(),
                ),
                None => Verdict::Drop(DropReason::NoRule),
            }
        } else {
            match self.unicast_egress(ingress, tf.frame.addr1) {
                Some(egress) => Verdict::Emit(vec![(egress, tf.clone())]),
                None => Verdict::Drop(DropReason::NoRule),
            }
        }
    }

    /// One CSV line per rule: `table,ingress,mac,egress_or_group`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("table,ingress,mac,egress_or_group\n");
        for ((ingress, mac), egress) in &self.unicast {
            let _ = writeln!(out, "unicast,{ingress},{mac},{}", egress.id);
        }
        for ((ingress, src), group) in &self.broadcast {
            let _ = writeln!(out, "broadcast,{ingress},{src},{}", group.group_id);
        }
        out
    }
}
