//! Split-MAC wireless LAN model: native 802.11 frame switching between
//! neighboring access points, a willingness-based client steering policy,
//! the inter-AP control plane and a discrete-event simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::frame::MacAddr;

pub mod control;
pub mod frame;
pub mod radio;
pub mod sim;
pub mod steering;
pub mod switch;

/// Identifier of an EAP or a station in a deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl NodeId {
    fn mac(self, suffix: u8) -> MacAddr {
        let [a, b, c, d] = self.0.to_be_bytes();
        MacAddr([0x02, a, b, c, d, suffix])
    }

    /// BSSID of the node's real AP.
    pub fn rap_bssid(self) -> MacAddr {
        self.mac(0)
    }

    /// BSSID of the node's virtual AP, advertised through neighbors' WTPs.
    pub fn vap_bssid(self) -> MacAddr {
        self.mac(1)
    }
}
