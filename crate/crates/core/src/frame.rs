//! 802.11 frame and radio metadata types, plus the fixed-layout wire codec
//! used on tunnels and by the switch parser stage.
//!
//! Layout (big-endian, byte offsets):
//!
//! | offset  | field                                                        |
//! |---------|--------------------------------------------------------------|
//! | 0       | kind code (Beacon=1 .. Data=9)                               |
//! | 1       | flags: bit0 retry, bit1 protected, bit2 injected, bit3 tx_status |
//! | 2..8    | addr1                                                        |
//! | 8..14   | addr2                                                        |
//! | 14..20  | addr3                                                        |
//! | 20..22  | sequence number (low 12 bits)                                |
//! | 22      | rssi, dBm, signed                                            |
//! | 23      | PHY rate index into {6,9,12,18,24,36,48,54}                  |
//! | 24      | tx power, dBm, signed                                        |
//! | 25..27  | payload length                                               |
//! | 27..    | payload                                                      |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 27;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;
pub const SEQ_MODULUS: u16 = 4096;

const OFF_FLAGS: usize = 1;
const OFF_ADDR1: usize = 2;
const OFF_ADDR2: usize = 8;
const OFF_ADDR3: usize = 14;
const OFF_SEQ: usize = 20;
const OFF_RSSI: usize = 22;
const OFF_RATE: usize = 23;
const OFF_TXPOWER: usize = 24;
const OFF_LEN: usize = 25;

const FLAG_RETRY: u8 = 1 << 0;
const FLAG_PROTECTED: u8 = 1 << 1;
const FLAG_INJECTED: u8 = 1 << 2;
const FLAG_TX_STATUS: u8 = 1 << 3;
const FLAG_MASK: u8 = FLAG_RETRY | FLAG_PROTECTED | FLAG_INJECTED | FLAG_TX_STATUS;

/// A 48-bit IEEE MAC address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const ZERO: MacAddr = MacAddr([0; 6]);
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub const fn new(octets: [u8; 6]) -> Self {
        MacAddr(octets)
    }

    pub fn is_broadcast(&self) -> bool {
        *self == Self::BROADCAST
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(String);

impl FromStr for MacAddr {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 6];
        let mut parts = s.split(':');
        for octet in out.iter_mut() {
            let part = parts.next().ok_or_else(|| ParseMacError(s.to_string()))?;
            if part.len() != 2 {
                return Err(ParseMacError(s.to_string()));
            }
            *octet = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_string()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_string()));
        }
        Ok(MacAddr(out))
    }
}

impl Serialize for MacAddr {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddr {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The closed set of frame kinds exchanged by the architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    Beacon,
    ProbeRequest,
    ProbeResponse,
    AuthRequest,
    AuthResponse,
    AssocRequest,
    AssocResponse,
    Ack,
    Data,
}

impl FrameKind {
    pub const ALL: [FrameKind; 9] = [
        FrameKind::Beacon,
        FrameKind::ProbeRequest,
        FrameKind::ProbeResponse,
        FrameKind::AuthRequest,
        FrameKind::AuthResponse,
        FrameKind::AssocRequest,
        FrameKind::AssocResponse,
        FrameKind::Ack,
        FrameKind::Data,
    ];

    pub fn code(self) -> u8 {
        match self {
            FrameKind::Beacon => 1,
            FrameKind::ProbeRequest => 2,
            FrameKind::ProbeResponse => 3,
            FrameKind::AuthRequest => 4,
            FrameKind::AuthResponse => 5,
            FrameKind::AssocRequest => 6,
            FrameKind::AssocResponse => 7,
            FrameKind::Ack => 8,
            FrameKind::Data => 9,
        }
    }

    pub fn from_code(code: u8) -> Option<FrameKind> {
        FrameKind::ALL.iter().copied().find(|k| k.code() == code)
    }

    pub fn is_control(self) -> bool {
        self == FrameKind::Ack
    }

    pub fn is_management(self) -> bool {
        !matches!(self, FrameKind::Ack | FrameKind::Data)
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// 802.11a PHY rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum PhyRate {
    #[default]
    Mbps6,
    Mbps9,
    Mbps12,
    Mbps18,
    Mbps24,
    Mbps36,
    Mbps48,
    Mbps54,
}

impl PhyRate {
    pub const ALL: [PhyRate; 8] = [
        PhyRate::Mbps6,
        PhyRate::Mbps9,
        PhyRate::Mbps12,
        PhyRate::Mbps18,
        PhyRate::Mbps24,
        PhyRate::Mbps36,
        PhyRate::Mbps48,
        PhyRate::Mbps54,
    ];

    pub fn mbps(self) -> f64 {
        match self {
            PhyRate::Mbps6 => 6.0,
            PhyRate::Mbps9 => 9.0,
            PhyRate::Mbps12 => 12.0,
            PhyRate::Mbps18 => 18.0,
            PhyRate::Mbps24 => 24.0,
            PhyRate::Mbps36 => 36.0,
            PhyRate::Mbps48 => 48.0,
            PhyRate::Mbps54 => 54.0,
        }
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(idx: u8) -> Option<PhyRate> {
        PhyRate::ALL.get(idx as usize).copied()
    }

    /// Exact match against the 802.11a rate set.
    pub fn from_mbps(mbps: f64) -> Option<PhyRate> {
        PhyRate::ALL.iter().copied().find(|r| r.mbps() == mbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FrameFlags {
    pub retry: bool,
    pub protected: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dot11Frame {
    pub kind: FrameKind,
    pub addr1: MacAddr,
    pub addr2: MacAddr,
    pub addr3: MacAddr,
    pub seq: u16,
    pub flags: FrameFlags,
    pub payload: Vec<u8>,
}

impl Dot11Frame {
    /// A management or data frame with cleared flags.
    pub fn new(kind: FrameKind, addr1: MacAddr, addr2: MacAddr, addr3: MacAddr, seq: u16) -> Self {
        Dot11Frame {
            kind,
            addr1,
            addr2,
            addr3,
            seq: seq % SEQ_MODULUS,
            flags: FrameFlags::default(),
            payload: Vec::new(),
        }
    }

    pub fn ack(receiver: MacAddr) -> Self {
        Dot11Frame::new(FrameKind::Ack, receiver, MacAddr::ZERO, MacAddr::ZERO, 0)
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = payload;
        self
    }

    pub fn protected(mut self) -> Self {
        self.flags.protected = true;
        self
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        let violation = if self.seq >= SEQ_MODULUS {
            Some(Violation::SeqRange)
        } else if self.payload.len() > MAX_PAYLOAD {
            Some(Violation::PayloadTooLong)
        } else if self.flags.protected && self.kind != FrameKind::Data {
            Some(Violation::ProtectedNonData)
        } else if self.kind == FrameKind::Ack && (!self.addr2.is_zero() || !self.addr3.is_zero()) {
            Some(Violation::AckAddresses)
        } else if self.kind == FrameKind::Ack && !self.payload.is_empty() {
            Some(Violation::AckPayload)
        } else {
            None
        };
        violation.map_or(Ok(()), |v| Err(FrameError::InvariantViolation(v)))
    }
}

/// Radio-side metadata attached to a frame (the RadioTap analogue).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RadioMeta {
    pub rssi_dbm: i8,
    pub phy_rate: PhyRate,
    pub tx_power_dbm: i8,
    pub injected: bool,
    pub tx_status: bool,
}

impl RadioMeta {
    pub fn validate(&self) -> Result<(), FrameError> {
        if self.tx_status && !self.injected {
            return Err(FrameError::InvariantViolation(Violation::TxStatusNotInjected));
        }
        Ok(())
    }
}

/// The unit carried on tunnels and switch ports.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedFrame {
    pub frame: Dot11Frame,
    pub meta: RadioMeta,
}

impl TaggedFrame {
    pub fn new(frame: Dot11Frame, meta: RadioMeta) -> Self {
        TaggedFrame { frame, meta }
    }

    pub fn validate(&self) -> Result<(), FrameError> {
        self.frame.validate()?;
        self.meta.validate()
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.frame.payload.len()
    }
}

/// A broken type invariant of [`TaggedFrame`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Violation {
    SeqRange,
    PayloadTooLong,
    ProtectedNonData,
    AckAddresses,
    AckPayload,
    TxStatusNotInjected,
}

impl Violation {
    /// Byte offset of the field that carries the violation.
    fn offset(self) -> usize {
        match self {
            Violation::SeqRange => OFF_SEQ,
            Violation::PayloadTooLong => OFF_LEN,
            Violation::ProtectedNonData | Violation::TxStatusNotInjected => OFF_FLAGS,
            Violation::AckAddresses => OFF_ADDR2,
            Violation::AckPayload => HEADER_LEN,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Violation::SeqRange => "sequence number exceeds 12 bits",
            Violation::PayloadTooLong => "payload longer than 65535 bytes",
            Violation::ProtectedNonData => "protected flag set on a non-data frame",
            Violation::AckAddresses => "ack frame carries addr2/addr3",
            Violation::AckPayload => "ack frame carries a payload",
            Violation::TxStatusNotInjected => "tx_status report without injected flag",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedReason {
    Truncated,
    UnknownKind(u8),
    LengthMismatch,
    ReservedBits,
    BadRateIndex(u8),
    Invariant(Violation),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::Truncated => f.write_str("truncated"),
            MalformedReason::UnknownKind(c) => write!(f, "unknown kind code {c}"),
            MalformedReason::LengthMismatch => f.write_str("payload length mismatch"),
            MalformedReason::ReservedBits => f.write_str("reserved bits set"),
            MalformedReason::BadRateIndex(i) => write!(f, "rate index {i} out of range"),
            MalformedReason::Invariant(what) => write!(f, "invariant violated: {what}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame invariant violated: {0}")]
    InvariantViolation(Violation),
    #[error("malformed frame at offset {offset}: {reason}")]
    Malformed { offset: usize, reason: MalformedReason },
}

fn malformed(offset: usize, reason: MalformedReason) -> FrameError {
    FrameError::Malformed { offset, reason }
}

pub fn encode(tf: &TaggedFrame) -> Result<Vec<u8>, FrameError> {
    tf.validate()?;
    let f = &tf.frame;
    let m = &tf.meta;
    let mut out = Vec::with_capacity(tf.encoded_len());
    out.push(f.kind.code());
    let mut flags = 0u8;
    if f.flags.retry {
        flags |= FLAG_RETRY;
    }
    if f.flags.protected {
        flags |= FLAG_PROTECTED;
    }
    if m.injected {
        flags |= FLAG_INJECTED;
    }
    if m.tx_status {
        flags |= FLAG_TX_STATUS;
    }
    out.push(flags);
    out.extend_from_slice(&f.addr1.0);
    out.extend_from_slice(&f.addr2.0);
    out.extend_from_slice(&f.addr3.0);
    out.extend_from_slice(&f.seq.to_be_bytes());
    out.push(m.rssi_dbm as u8);
    out.push(m.phy_rate.index());
    out.push(m.tx_power_dbm as u8);
    out.extend_from_slice(&(f.payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&f.payload);
    Ok(out)
}

fn read_mac(bytes: &[u8], at: usize) -> MacAddr {
    let mut o = [0u8; 6];
    o.copy_from_slice(&bytes[at..at + 6]);
    MacAddr(o)
}

/// Parses one encoded frame. Rejects every byte string that `encode` would
/// not produce, so a successful decode re-encodes to the same bytes.
pub fn decode(bytes: &[u8]) -> Result<TaggedFrame, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed(bytes.len(), MalformedReason::Truncated));
    }
    let code = bytes[0];
    let kind = FrameKind::from_code(code).ok_or(malformed(0, MalformedReason::UnknownKind(code)))?;
    let flags = bytes[OFF_FLAGS];
    if flags & !FLAG_MASK != 0 {
        return Err(malformed(OFF_FLAGS, MalformedReason::ReservedBits));
    }
    let seq = u16::from_be_bytes([bytes[OFF_SEQ], bytes[OFF_SEQ + 1]]);
    if seq >= SEQ_MODULUS {
        return Err(malformed(OFF_SEQ, MalformedReason::ReservedBits));
    }
    let rate_idx = bytes[OFF_RATE];
    let phy_rate =
        PhyRate::from_index(rate_idx).ok_or(malformed(OFF_RATE, MalformedReason::BadRateIndex(rate_idx)))?;
    let len = u16::from_be_bytes([bytes[OFF_LEN], bytes[OFF_LEN + 1]]) as usize;
    let rest = bytes.len() - HEADER_LEN;
    if len != rest {
        return Err(malformed(HEADER_LEN, MalformedReason::LengthMismatch));
    }
    let frame = Dot11Frame {
        kind,
        addr1: read_mac(bytes, OFF_ADDR1),
        addr2: read_mac(bytes, OFF_ADDR2),
        addr3: read_mac(bytes, OFF_ADDR3),
        seq,
        flags: FrameFlags {
            retry: flags & FLAG_RETRY != 0,
            protected: flags & FLAG_PROTECTED != 0,
        },
        payload: bytes[HEADER_LEN..].to_vec(),
    };
    let meta = RadioMeta {
        rssi_dbm: bytes[OFF_RSSI] as i8,
        phy_rate,
        tx_power_dbm: bytes[OFF_TXPOWER] as i8,
        injected: flags & FLAG_INJECTED != 0,
        tx_status: flags & FLAG_TX_STATUS != 0,
    };
    let tf = TaggedFrame { frame, meta };
    if let Err(FrameError::InvariantViolation(v)) = tf.validate() {
        return Err(malformed(v.offset(), MalformedReason::Invariant(v)));
    }
    Ok(tf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sta1() -> MacAddr {
        "02:00:00:00:00:01".parse().unwrap()
    }

    #[test]
    fn ack_encoding_matches_hand_built_bytes() {
        let tf = TaggedFrame::new(Dot11Frame::ack(sta1()), RadioMeta::default());
        let mut expected = vec![8u8, 0];
        expected.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
        expected.extend_from_slice(&[0; 12]);
        expected.extend_from_slice(&[0, 0]); // seq
        expected.extend_from_slice(&[0, 0, 0]); // rssi, rate idx, tx power
        expected.extend_from_slice(&[0, 0]); // payload length
        assert_eq!(expected.len(), 27);
        assert_eq!(encode(&tf).unwrap(), expected);
    }

    #[test]
    fn data_frame_length_is_header_plus_payload() {
        let f = Dot11Frame::new(FrameKind::Data, sta1(), MacAddr([2, 0, 0, 0, 1, 1]), MacAddr([2, 0, 0, 0, 1, 1]), 7)
            .with_payload(vec![0xab; 1400])
            .protected();
        let bytes = encode(&TaggedFrame::new(f, RadioMeta::default())).unwrap();
        assert_eq!(bytes.len(), 27 + 1400);
        assert_eq!(&bytes[25..27], &[0x05, 0x78]);
    }

    #[test]
    fn meta_fields_land_at_their_offsets() {
        let meta = RadioMeta { rssi_dbm: -67, phy_rate: PhyRate::Mbps24, tx_power_dbm: 15, injected: true, tx_status: true };
        let f = Dot11Frame::new(FrameKind::Beacon, MacAddr::BROADCAST, sta1(), sta1(), 0x0abc);
        let bytes = encode(&TaggedFrame::new(f, meta)).unwrap();
        assert_eq!(bytes[1], 0b1100);
        assert_eq!(&bytes[20..22], &[0x0a, 0xbc]);
        assert_eq!(bytes[22], (-67i8) as u8);
        assert_eq!(bytes[23], 4);
        assert_eq!(bytes[24], 15);
    }

    #[test]
    fn invariant_violations_are_rejected_by_encode() {
        let ack = Dot11Frame::ack(sta1()).with_payload(vec![1]);
        assert!(matches!(
            encode(&TaggedFrame::new(ack, RadioMeta::default())),
            Err(FrameError::InvariantViolation(_))
        ));

        let beacon = Dot11Frame::new(FrameKind::Beacon, MacAddr::BROADCAST, sta1(), sta1(), 0).protected();
        assert!(encode(&TaggedFrame::new(beacon, RadioMeta::default())).is_err());

        let meta = RadioMeta { tx_status: true, ..RadioMeta::default() };
        assert!(encode(&TaggedFrame::new(Dot11Frame::ack(sta1()), meta)).is_err());
    }

    #[test]
    fn empty_input_is_truncated_at_zero() {
        assert_eq!(decode(&[]), Err(malformed(0, MalformedReason::Truncated)));
    }

    #[test]
    fn overlong_length_field_is_flagged_at_payload_offset() {
        let f = Dot11Frame::new(FrameKind::Data, sta1(), sta1(), sta1(), 1).with_payload(vec![1, 2, 3]);
        let mut bytes = encode(&TaggedFrame::new(f, RadioMeta::default())).unwrap();
        bytes[26] = 9;
        assert_eq!(decode(&bytes), Err(malformed(HEADER_LEN, MalformedReason::LengthMismatch)));
    }

    #[test]
    fn unknown_kind_code() {
        let mut bytes = encode(&TaggedFrame::new(Dot11Frame::ack(sta1()), RadioMeta::default())).unwrap();
        bytes[0] = 0;
        assert_eq!(decode(&bytes), Err(malformed(0, MalformedReason::UnknownKind(0))));
        bytes[0] = 10;
        assert_eq!(decode(&bytes), Err(malformed(0, MalformedReason::UnknownKind(10))));
    }

    #[test]
    fn decode_rejects_non_canonical_inputs() {
        let base = encode(&TaggedFrame::new(Dot11Frame::ack(sta1()), RadioMeta::default())).unwrap();

        let mut b = base.clone();
        b[1] = 0x10;
        assert!(matches!(decode(&b), Err(FrameError::Malformed { offset: 1, .. })));

        let mut b = base.clone();
        b[20] = 0x10;
        assert!(matches!(decode(&b), Err(FrameError::Malformed { offset: 20, .. })));

        let mut b = base.clone();
        b[23] = 8;
        assert!(matches!(decode(&b), Err(FrameError::Malformed { offset: 23, .. })));

        let mut b = base.clone();
        b[9] = 1; // ack with addr2
        assert!(matches!(decode(&b), Err(FrameError::Malformed { .. })));

        let mut b = base.clone();
        b[27 - 2..].copy_from_slice(&[0, 1]);
        b.push(7); // ack with payload
        assert_eq!(decode(&b), Err(malformed(HEADER_LEN, MalformedReason::Invariant(Violation::AckPayload))));

        let mut b = base;
        b.push(0);
        assert!(matches!(decode(&b), Err(FrameError::Malformed { reason: MalformedReason::LengthMismatch, .. })));
    }

    #[test]
    fn mac_parse_and_display() {
        let m: MacAddr = "ff:ff:ff:ff:ff:ff".parse().unwrap();
        assert!(m.is_broadcast());
        assert_eq!(sta1().to_string(), "02:00:00:00:00:01");
        assert!("02:00:00:00:00".parse::<MacAddr>().is_err());
        assert!("02:00:00:00:00:01:02".parse::<MacAddr>().is_err());
        assert!("0g:00:00:00:00:01".parse::<MacAddr>().is_err());
    }

    #[test]
    fn seq_wraps_modulo_4096() {
        let f = Dot11Frame::new(FrameKind::Data, sta1(), sta1(), sta1(), 4097);
        assert_eq!(f.seq, 1);
    }
}
