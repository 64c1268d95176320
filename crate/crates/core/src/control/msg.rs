//! Control-bus messages and their binary envelope.
//!
//! Every message starts with a kind byte. Integers are big-endian.
//!
//! | kind | message          | body                                                               |
//! |------|------------------|--------------------------------------------------------------------|
//! | 1    | WtpSetupRequest  | requester u32, node u32, session u32, bssid [6], channel u8, ssid_len u8, ssid |
//! | 2    | WtpSetupComplete | responder u32, node u32, session u32, wtp_port u16                     |
//! | 3    | BackhaulReport   | dl_mbps f64, ul_mbps f64                                           |
//!
//! Trailing bytes are rejected. None of the messages has room for key
//! material: the home BSS travels as SSID, BSSID and channel only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::MacAddr;
use crate::NodeId;

pub const KIND_SETUP_REQUEST: u8 = 1;
pub const KIND_SETUP_COMPLETE: u8 = 2;
pub const KIND_BACKHAUL_REPORT: u8 = 3;

/// One end of a VAP-WTP tunnel, in the manner of an L2TP session id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TunnelEndpoint {
    pub node: NodeId,
    pub session: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BssConfig {
    pub ssid: String,
    pub bssid: MacAddr,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlMsg {
    WtpSetupRequest { requester: NodeId, endpoint: TunnelEndpoint, bss: BssConfig },
    WtpSetupComplete { responder: NodeId, endpoint: TunnelEndpoint, wtp_port: u16 },
    BackhaulReport { dl_mbps: f64, ul_mbps: f64 },
}

impl ControlMsg {
    pub fn kind(&self) -> u8 {
        match self {
            ControlMsg::WtpSetupRequest { .. } => KIND_SETUP_REQUEST,
            ControlMsg::WtpSetupComplete { .. } => KIND_SETUP_COMPLETE,
            ControlMsg::BackhaulReport { .. } => KIND_BACKHAUL_REPORT,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControlMsg::WtpSetupRequest { .. } => "WtpSetupRequest",
            ControlMsg::WtpSetupComplete { .. } => "WtpSetupComplete",
            ControlMsg::BackhaulReport { .. } => "BackhaulReport",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MsgError {
    #[error("ssid longer than 32 bytes")]
    SsidTooLong,
    #[error("malformed control message at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
}

pub fn encode_msg(msg: &ControlMsg) -> Result<Vec<u8>, MsgError> {
    let mut out = vec![msg.kind()];
    match msg {
        ControlMsg::WtpSetupRequest { requester, endpoint, bss } => {
            if bss.ssid.len() > 32 {
                return Err(MsgError::SsidTooLong);
            }
            out.extend_from_slice(&requester.0.to_be_bytes());
            out.extend_from_slice(&endpoint.node.0.to_be_bytes());
            out.extend_from_slice(&endpoint.session.to_be_bytes());
            out.extend_from_slice(&bss.bssid.octets());
            out.push(bss.channel);
            out.push(bss.ssid.len() as u8);
            out.extend_from_slice(bss.ssid.as_bytes());
        }
        ControlMsg::WtpSetupComplete { responder, endpoint, wtp_port } => {
            out.extend_from_slice(&responder.0.to_be_bytes());
            out.extend_from_slice(&endpoint.node.0.to_be_bytes());
            out.extend_from_slice(&endpoint.session.to_be_bytes());
            out.extend_from_slice(&wtp_port.to_be_bytes());
        }
        ControlMsg::BackhaulReport { dl_mbps, ul_mbps } => {
            out.extend_from_slice(&dl_mbps.to_be_bytes());
            out.extend_from_slice(&ul_mbps.to_be_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MsgError> {
        if self.buf.len() - self.pos < n {
            return Err(MsgError::Malformed { offset: self.buf.len(), reason: "truncated" });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, MsgError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, MsgError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, MsgError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MsgError> {
        Ok(f64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<(), MsgError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(MsgError::Malformed { offset: self.pos, reason: "trailing bytes" })
        }
    }
}

pub fn decode_msg(bytes: &[u8]) -> Result<ControlMsg, MsgError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let msg = match r.u8()? {
        KIND_SETUP_REQUEST => {
            let requester = NodeId(r.u32()?);
            let endpoint = TunnelEndpoint { node: NodeId(r.u32()?), session: r.u32()? };
            let bssid = MacAddr(r.take(6)?.try_into().unwrap());
            let channel = r.u8()?;
            let len_at = r.pos;
            let len = r.u8()? as usize;
            if len > 32 {
                return Err(MsgError::Malformed { offset: len_at, reason: "ssid longer than 32 bytes" });
            }
            let ssid_at = r.pos;
            let ssid = std::str::from_utf8(r.take(len)?)
                .map_err(|_| MsgError::Malformed { offset: ssid_at, reason: "ssid is not utf-8" })?
                .to_owned();
            ControlMsg::WtpSetupRequest { requester, endpoint, bss: BssConfig { ssid, bssid, channel } }
        }
        KIND_SETUP_COMPLETE => ControlMsg::WtpSetupComplete {
            responder: NodeId(r.u32()?),
            endpoint: TunnelEndpoint { node: NodeId(r.u32()?), session: r.u32()? },
            wtp_port: r.u16()?,
        },
        KIND_BACKHAUL_REPORT => ControlMsg::BackhaulReport { dl_mbps: r.f64()?, ul_mbps: r.f64()? },
        _ => return Err(MsgError::Malformed { offset: 0, reason: "unknown message kind" }),
    };
    r.finish()?;
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request() -> ControlMsg {
        ControlMsg::WtpSetupRequest {
            requester: NodeId(1),
            endpoint: TunnelEndpoint { node: NodeId(1), session: 7 },
            bss: BssConfig { ssid: "bob".into(), bssid: MacAddr([2, 0, 0, 0, 1, 1]), channel: 40 },
        }
    }

    #[test]
    fn request_bytes() {
        let bytes = encode_msg(&request()).unwrap();
        let expected: Vec<u8> = [
            &[1u8][..],
            &[0, 0, 0, 1],
            &[0, 0, 0, 1],
            &[0, 0, 0, 7],
            &[2, 0, 0, 0, 1, 1],
            &[40, 3],
            b"bob",
        ]
        .concat();
        assert_eq!(bytes, expected);
    }

    #[test]
    fn round_trip_every_variant() {
        let msgs = [
            request(),
            ControlMsg::WtpSetupComplete { responder: NodeId(2), endpoint: TunnelEndpoint { node: NodeId(2), session: 9 }, wtp_port: 3 },
            ControlMsg::BackhaulReport { dl_mbps: 50.0, ul_mbps: 12.5 },
        ];
        for m in msgs {
            assert_eq!(decode_msg(&encode_msg(&m).unwrap()).unwrap(), m);
        }
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(decode_msg(&[]), Err(MsgError::Malformed { offset: 0, .. })));
        assert!(matches!(decode_msg(&[9]), Err(MsgError::Malformed { offset: 0, .. })));
        let mut bytes = encode_msg(&request()).unwrap();
        bytes.push(0);
        assert!(matches!(decode_msg(&bytes), Err(MsgError::Malformed { reason: "trailing bytes", .. })));
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(decode_msg(&bytes), Err(MsgError::Malformed { reason: "truncated", .. })));
    }

    #[test]
    fn long_ssid_rejected() {
        let m = ControlMsg::WtpSetupRequest {
            requester: NodeId(1),
            endpoint: TunnelEndpoint { node: NodeId(1), session: 0 },
            bss: BssConfig { ssid: "x".repeat(33), bssid: MacAddr::ZERO, channel: 40 },
        };
        assert_eq!(encode_msg(&m), Err(MsgError::SsidTooLong));
    }
}
