//! Byte-level layouts of every frame in the stack.
//!
//! Three families travel over the air:
//!
//! * the wake-up call (WUC), an on/off-keyed image sent by the main radio
//!   and matched by the wake-up receiver of the addressed node,
//! * MAC frames (DATA, ACK and the 3-byte WUC ACK),
//! * routing frames (R_REQ, R_DATA, R_REQ_ACK), carried as MAC DATA
//!   payload.
//!
//! See `docs/wire-format.md` for the full tables.

use alloc::vec::Vec;
use core::fmt;

/// Minimum carrier burst of a wake-up call, in bytes.
pub const CARRIER_MIN: usize = 32;
/// Maximum carrier burst of a wake-up call, in bytes.
pub const CARRIER_MAX: usize = 100;
/// Carrier burst used by the reference hardware.
pub const DEFAULT_CARRIER_BYTES: usize = 42;
/// Preamble used by the reference hardware.
pub const DEFAULT_PREAMBLE_BYTES: usize = 48;
/// Bytes spent on the Manchester-coded address.
pub const PATTERN_BYTES: usize = 64;
/// Bytes per Manchester chip (one half of a logical bit).
pub const CHIP_BYTES: usize = 4;

/// Largest MAC DATA payload.
pub const MAX_PAYLOAD: usize = 246;
/// Largest slot count an R_REQ or R_REQ_ACK can carry.
pub const MAX_SLOTS: u8 = 63;

pub const MAC_DATA_HEADER: usize = 4;
pub const MAC_ACK_LEN: usize = 3;
pub const WUC_ACK_LEN: usize = 3;
pub const ROUTING_LEN: usize = 4;

/// Protocol identifier carried in the first byte of a WUC ACK.
pub const PROTOCOL_ID: u8 = 0x01;

pub mod tag {
    pub const MAC_DATA: u8 = 0x01;
    pub const MAC_ACK: u8 = 0x02;
    /// Low two bits of the first R_REQ byte.
    pub const R_REQ: u8 = 0b01;
    pub const R_DATA: u8 = 0x03;
    pub const R_REQ_ACK: u8 = 0x04;
}

const ON: u8 = 0xFF;
const OFF: u8 = 0x00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("carrier burst of {0} bytes outside {CARRIER_MIN}..={CARRIER_MAX}")]
    InvalidConfig(usize),
    #[error("wake-up pattern is not valid Manchester code at byte {0}")]
    MalformedPattern(usize),
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    PayloadTooLarge(usize),
    #[error("slot count {0} exceeds {MAX_SLOTS}")]
    SlotsOverflow(u8),
    #[error("unknown packet type 0x{0:02x}")]
    UnknownPacketType(u8),
    #[error("frame truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("frame has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
}

/// 8-bit logical address and its 16-chip Manchester image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WakeUpAddress {
    pub logical_id: u8,
}

impl WakeUpAddress {
    pub const fn new(logical_id: u8) -> Self {
        Self { logical_id }
    }

    /// Manchester image, MSB first: a logical 1 becomes chips `10`, a 0 becomes `01`.
    pub fn pattern(self) -> u16 {
        let mut out = 0u16;
        for bit in (0..8).rev() {
            let chips = if self.logical_id >> bit & 1 == 1 { 0b10 } else { 0b01 };
            out = out << 2 | chips;
        }
        out
    }

    pub fn from_pattern(pattern: u16) -> Option<Self> {
        let mut id = 0u8;
        for pair in (0..8).rev() {
            id <<= 1;
            match pattern >> (2 * pair) & 0b11 {
                0b10 => id |= 1,
                0b01 => {}
                _ => return None,
            }
        }
        Some(Self::new(id))
    }
}

impl fmt::Display for WakeUpAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "wu:{}", self.logical_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WakeUpFrame {
    pub carrier_burst_bytes: usize,
    pub preamble_bytes: usize,
    pub address: WakeUpAddress,
}

impl WakeUpFrame {
    /// Frame with the reference carrier and preamble lengths.
    pub fn new(address: WakeUpAddress) -> Self {
        Self {
            carrier_burst_bytes: DEFAULT_CARRIER_BYTES,
            preamble_bytes: DEFAULT_PREAMBLE_BYTES,
            address,
        }
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if !(CARRIER_MIN..=CARRIER_MAX).contains(&self.carrier_burst_bytes) {
            return Err(CodecError::InvalidConfig(self.carrier_burst_bytes));
        }
        Ok(())
    }

    /// Length of the on-air image.
    pub fn image_len(&self) -> usize {
        self.carrier_burst_bytes + self.preamble_bytes + PATTERN_BYTES
    }
}

/// On-air image: carrier burst, preamble, then the 64-byte pattern.
pub fn encode_wakeup(frame: &WakeUpFrame) -> Result<Vec<u8>, CodecError> {
    frame.validate()?;
    let mut out = Vec::with_capacity(frame.image_len());
    out.resize(frame.carrier_burst_bytes, ON);
    // Preamble alternates chips starting high.
    for i in 0..frame.preamble_bytes {
        out.push(if (i / CHIP_BYTES).is_multiple_of(2) { ON } else { OFF });
    }
    let pattern = frame.address.pattern();
    for chip in (0..16).rev() {
        let level = if pattern >> chip & 1 == 1 { ON } else { OFF };
        out.extend(core::iter::repeat_n(level, CHIP_BYTES));
    }
    Ok(out)
}

/// Recovers the address from a wake-up image.
///
/// Leading carrier bytes may be missing; the returned frame reports how many
/// were present.
pub fn decode_wakeup(bytes: &[u8], expected_preamble: usize) -> Result<WakeUpFrame, CodecError> {
    let needed = expected_preamble + PATTERN_BYTES;
    if bytes.len() < needed {
        return Err(CodecError::Truncated { needed, got: bytes.len() });
    }
    let start = bytes.len() - PATTERN_BYTES;
    let region = &bytes[start..];
    let mut pattern = 0u16;
    for (chip, cell) in region.chunks_exact(CHIP_BYTES).enumerate() {
        let level = cell[0];
        if (level != ON && level != OFF) || cell.iter().any(|&b| b != level) {
            return Err(CodecError::MalformedPattern(start + chip * CHIP_BYTES));
        }
        pattern = pattern << 1 | u16::from(level == ON);
    }
    let address = WakeUpAddress::from_pattern(pattern).ok_or_else(|| {
        let first_bad = (0..8)
            .find(|pair| {
                let chips = pattern >> (14 - 2 * pair) & 0b11;
                chips == 0b00 || chips == 0b11
            })
            .unwrap_or(0);
        CodecError::MalformedPattern(start + first_bad * 2 * CHIP_BYTES)
    })?;
    Ok(WakeUpFrame {
        carrier_burst_bytes: bytes.len() - needed,
        preamble_bytes: expected_preamble,
        address,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WucAckFrame {
    pub protocol_id: u8,
    pub receiver_id: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacDataFrame {
    pub src: u8,
    pub dest: u8,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacAckFrame {
    pub src: u8,
    pub dest: u8,
}

/// Frames handled by the MAC layer of the main radio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MacFrame {
    Data(MacDataFrame),
    Ack(MacAckFrame),
    WucAck(WucAckFrame),
}

pub fn encode_mac(frame: &MacFrame) -> Result<Vec<u8>, CodecError> {
    match frame {
        MacFrame::Data(d) => {
            if d.payload.len() > MAX_PAYLOAD {
                return Err(CodecError::PayloadTooLarge(d.payload.len()));
            }
            let mut out = Vec::with_capacity(MAC_DATA_HEADER + d.payload.len());
            out.extend_from_slice(&[tag::MAC_DATA, d.src, d.dest, d.payload.len() as u8]);
            out.extend_from_slice(&d.payload);
            Ok(out)
        }
        MacFrame::Ack(a) => Ok(alloc::vec![tag::MAC_ACK, a.src, a.dest]),
        MacFrame::WucAck(w) => {
            let [lo, hi] = w.receiver_id.to_le_bytes();
            Ok(alloc::vec![w.protocol_id, lo, hi])
        }
    }
}

/// Inverse of [`encode_mac`].
///
/// The radio's length byte delimits each frame, so a 3-byte frame opening
/// with the protocol id is a WUC ACK while longer ones are MAC DATA.
pub fn decode_mac(bytes: &[u8]) -> Result<MacFrame, CodecError> {
    let Some(&first) = bytes.first() else {
        return Err(CodecError::Truncated { needed: 1, got: 0 });
    };
    if bytes.len() == WUC_ACK_LEN && first == PROTOCOL_ID {
        return Ok(MacFrame::WucAck(WucAckFrame {
            protocol_id: first,
            receiver_id: u16::from_le_bytes([bytes[1], bytes[2]]),
        }));
    }
    match first {
        tag::MAC_DATA => {
            if bytes.len() < MAC_DATA_HEADER {
                return Err(CodecError::Truncated { needed: MAC_DATA_HEADER, got: bytes.len() });
            }
            let len = usize::from(bytes[3]);
            if len > MAX_PAYLOAD {
                return Err(CodecError::PayloadTooLarge(len));
            }
            let needed = MAC_DATA_HEADER + len;
            if bytes.len() < needed {
                return Err(CodecError::Truncated { needed, got: bytes.len() });
            }
            if bytes.len() > needed {
                return Err(CodecError::TrailingBytes { extra: bytes.len() - needed });
            }
            Ok(MacFrame::Data(MacDataFrame {
                src: bytes[1],
                dest: bytes[2],
                payload: bytes[MAC_DATA_HEADER..].to_vec(),
            }))
        }
        tag::MAC_ACK => {
            exact_len(bytes, MAC_ACK_LEN)?;
            Ok(MacFrame::Ack(MacAckFrame { src: bytes[1], dest: bytes[2] }))
        }
        other => Err(CodecError::UnknownPacketType(other)),
    }
}

fn exact_len(bytes: &[u8], len: usize) -> Result<(), CodecError> {
    if bytes.len() < len {
        Err(CodecError::Truncated { needed: len, got: bytes.len() })
    } else if bytes.len() > len {
        Err(CodecError::TrailingBytes { extra: bytes.len() - len })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutingFrame {
    /// Route request; also used to forward a request with a decremented TTL.
    Req { slots: u8, src: u8, dest: u8, ttl: u8 },
    /// Header of a routed data packet; the payload follows it.
    Data { src: u8, dest: u8, payload_len: u8 },
    ReqAck { current_ttl: u8, lqi: u8, free_slots: u8 },
}

pub fn encode_routing(frame: &RoutingFrame) -> Result<[u8; ROUTING_LEN], CodecError> {
    match *frame {
        RoutingFrame::Req { slots, src, dest, ttl } => {
            if slots > MAX_SLOTS {
                return Err(CodecError::SlotsOverflow(slots));
            }
            Ok([slots << 2 | tag::R_REQ, src, dest, ttl])
        }
        RoutingFrame::Data { src, dest, payload_len } => {
            if usize::from(payload_len) > MAX_PAYLOAD {
                return Err(CodecError::PayloadTooLarge(payload_len.into()));
            }
            Ok([tag::R_DATA, src, dest, payload_len])
        }
        RoutingFrame::ReqAck { current_ttl, lqi, free_slots } => {
            if free_slots > MAX_SLOTS {
                return Err(CodecError::SlotsOverflow(free_slots));
            }
            Ok([tag::R_REQ_ACK, current_ttl, lqi, free_slots])
        }
    }
}

/// Decodes the 4-byte routing header at the start of `bytes`.
///
/// Trailing bytes are allowed because R_DATA is followed by its payload.
pub fn decode_routing(bytes: &[u8]) -> Result<RoutingFrame, CodecError> {
    let Some(&first) = bytes.first() else {
        return Err(CodecError::Truncated { needed: ROUTING_LEN, got: 0 });
    };
    let kind = match first {
        tag::R_DATA | tag::R_REQ_ACK => first,
        b if b & 0b11 == tag::R_REQ => tag::R_REQ,
        other => return Err(CodecError::UnknownPacketType(other)),
    };
    if bytes.len() < ROUTING_LEN {
        return Err(CodecError::Truncated { needed: ROUTING_LEN, got: bytes.len() });
    }
    let [_, b1, b2, b3] = [bytes[0], bytes[1], bytes[2], bytes[3]];
    Ok(match kind {
        tag::R_REQ => RoutingFrame::Req { slots: first >> 2, src: b1, dest: b2, ttl: b3 },
        tag::R_DATA => {
            if usize::from(b3) > MAX_PAYLOAD {
                return Err(CodecError::PayloadTooLarge(b3.into()));
            }
            RoutingFrame::Data { src: b1, dest: b2, payload_len: b3 }
        }
        _ => {
            if b3 > MAX_SLOTS {
                return Err(CodecError::SlotsOverflow(b3));
            }
            RoutingFrame::ReqAck { current_ttl: b1, lqi: b2, free_slots: b3 }
        }
    })
}

/// Whether a wake-up call asks the woken node to pass it on (CTP-WUR).
///
/// The flag rides in the top bit of the logical address, so relay-capable
/// networks use node ids below 128.
pub const RELAY_FLAG: u8 = 0x80;

/// A frame as seen by the protocol engines, one level above raw bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Wuc(WakeUpFrame),
    WucAck(WucAckFrame),
    Ack(MacAckFrame),
    /// MAC DATA carrying an application payload directly.
    Data(MacDataFrame),
    /// MAC DATA carrying a routing frame; `payload` follows an R_DATA header.
    Routed { src: u8, dest: u8, routing: RoutingFrame, payload: Vec<u8> },
}

/// Layer a main-radio frame is decoded at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stack {
    /// MAC DATA payloads are application data.
    Plain,
    /// MAC DATA payloads start with a routing frame.
    Routed,
}

impl Frame {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        match self {
            Frame::Wuc(w) => encode_wakeup(w),
            Frame::WucAck(a) => encode_mac(&MacFrame::WucAck(*a)),
            Frame::Ack(a) => encode_mac(&MacFrame::Ack(*a)),
            Frame::Data(d) => encode_mac(&MacFrame::Data(d.clone())),
            Frame::Routed { src, dest, routing, payload } => {
                let header = encode_routing(routing)?;
                let mut body = Vec::with_capacity(ROUTING_LEN + payload.len());
                body.extend_from_slice(&header);
                body.extend_from_slice(payload);
                encode_mac(&MacFrame::Data(MacDataFrame { src: *src, dest: *dest, payload: body }))
            }
        }
    }

    /// Decodes a main-radio frame. Wake-up images go through [`decode_wakeup`].
    pub fn decode(bytes: &[u8], stack: Stack) -> Result<Frame, CodecError> {
        match decode_mac(bytes)? {
            MacFrame::WucAck(a) => Ok(Frame::WucAck(a)),
            MacFrame::Ack(a) => Ok(Frame::Ack(a)),
            MacFrame::Data(d) if stack == Stack::Plain => Ok(Frame::Data(d)),
            MacFrame::Data(d) => {
                let routing = decode_routing(&d.payload)?;
                let rest = &d.payload[ROUTING_LEN..];
                let expected = match routing {
                    RoutingFrame::Data { payload_len, .. } => usize::from(payload_len),
                    _ => 0,
                };
                if rest.len() < expected {
                    return Err(CodecError::Truncated {
                        needed: ROUTING_LEN + expected,
                        got: d.payload.len(),
                    });
                }
                if rest.len() > expected {
                    return Err(CodecError::TrailingBytes { extra: rest.len() - expected });
                }
                Ok(Frame::Routed { src: d.src, dest: d.dest, routing, payload: rest.to_vec() })
            }
        }
    }

    /// Node the frame is meant for. A WUC ACK is addressed to the node that
    /// sent the wake-up call.
    pub fn dest(&self) -> Option<u8> {
        match self {
            Frame::Wuc(w) => Some(w.address.logical_id & !RELAY_FLAG),
            Frame::WucAck(a) => u8::try_from(a.receiver_id).ok(),
            Frame::Ack(a) => Some(a.dest),
            Frame::Data(d) => Some(d.dest),
            Frame::Routed { dest, .. } => Some(*dest),
        }
    }

    /// Short label used in traces.
    pub fn kind(&self) -> &'static str {
        match self {
            Frame::Wuc(w) if w.address.logical_id & RELAY_FLAG != 0 => "WUC_RELAY",
            Frame::Wuc(_) => "WUC",
            Frame::WucAck(_) => "WUC_ACK",
            Frame::Ack(_) => "ACK",
            Frame::Data(_) => "DATA",
            Frame::Routed { routing: RoutingFrame::Req { .. }, .. } => "R_REQ",
            Frame::Routed { routing: RoutingFrame::Data { .. }, .. } => "R_DATA",
            Frame::Routed { routing: RoutingFrame::ReqAck { .. }, .. } => "R_REQ_ACK",
        }
    }

    /// Application payload bytes carried by this frame.
    pub fn app_payload(&self) -> &[u8] {
        match self {
            Frame::Data(d) => &d.payload,
            Frame::Routed { routing: RoutingFrame::Data { .. }, payload, .. } => payload,
            _ => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn pattern_of_85() {
        // 85 = 0b0101_0101
        assert_eq!(WakeUpAddress::new(85).pattern(), 0b0110_0110_0110_0110);
    }

    #[test]
    fn all_ids_round_trip_and_balance() {
        for id in 0..=255u8 {
            let p = WakeUpAddress::new(id).pattern();
            assert_eq!(p.count_ones(), 8);
            assert_eq!(WakeUpAddress::from_pattern(p), Some(WakeUpAddress::new(id)));
        }
    }

    #[test]
    fn wakeup_image_lengths() {
        let mut f = WakeUpFrame::new(WakeUpAddress::new(85));
        assert_eq!(encode_wakeup(&f).unwrap().len(), 154);
        f.carrier_burst_bytes = 32;
        f.preamble_bytes = 52;
        assert_eq!(encode_wakeup(&f).unwrap().len(), 148);
        f.carrier_burst_bytes = 100;
        assert_eq!(encode_wakeup(&f).unwrap().len(), 216);
        f.carrier_burst_bytes = 31;
        assert_eq!(encode_wakeup(&f), Err(CodecError::InvalidConfig(31)));
        f.carrier_burst_bytes = 101;
        assert_eq!(encode_wakeup(&f), Err(CodecError::InvalidConfig(101)));
    }

    #[test]
    fn decode_with_truncated_carrier() {
        let f = WakeUpFrame::new(WakeUpAddress::new(200));
        let img = encode_wakeup(&f).unwrap();
        let got = decode_wakeup(&img[10..], DEFAULT_PREAMBLE_BYTES).unwrap();
        assert_eq!(got.address.logical_id, 200);
        assert_eq!(got.carrier_burst_bytes, 32);
    }

    #[test]
    fn corrupt_pair_is_rejected() {
        let f = WakeUpFrame::new(WakeUpAddress::new(0));
        let mut img = encode_wakeup(&f).unwrap();
        // id 0 is all `01` pairs; make the first pair `11`
        let start = img.len() - PATTERN_BYTES;
        img[start..start + 4].fill(0xFF);
        assert_eq!(decode_wakeup(&img, 48), Err(CodecError::MalformedPattern(start)));
        let mut img = encode_wakeup(&f).unwrap();
        img[start + 13] = 0x7F;
        assert!(matches!(decode_wakeup(&img, 48), Err(CodecError::MalformedPattern(_))));
    }

    #[test]
    fn mac_layouts() {
        let data = MacFrame::Data(MacDataFrame { src: 13, dest: 10, payload: vec![7; 100] });
        let img = encode_mac(&data).unwrap();
        assert_eq!(img.len(), 104);
        assert_eq!(&img[..4], &[0x01, 13, 10, 100]);
        assert_eq!(decode_mac(&img).unwrap(), data);

        let ack = MacFrame::Ack(MacAckFrame { src: 10, dest: 13 });
        assert_eq!(encode_mac(&ack).unwrap(), vec![0x02, 10, 13]);

        let wa = MacFrame::WucAck(WucAckFrame { protocol_id: PROTOCOL_ID, receiver_id: 0x0A0B });
        assert_eq!(encode_mac(&wa).unwrap(), vec![0x01, 0x0B, 0x0A]);
        assert_eq!(decode_mac(&[0x01, 0x0B, 0x0A]).unwrap(), wa);

        let big = MacFrame::Data(MacDataFrame { src: 1, dest: 2, payload: vec![0; 247] });
        assert_eq!(encode_mac(&big), Err(CodecError::PayloadTooLarge(247)));
    }

    #[test]
    fn routing_layouts() {
        let req = RoutingFrame::Req { slots: 5, src: 13, dest: 10, ttl: 3 };
        let img = encode_routing(&req).unwrap();
        assert_eq!(img[0] >> 2, 5);
        assert_eq!(img, [0b0001_0101, 13, 10, 3]);
        assert_eq!(decode_routing(&img).unwrap(), req);

        let over = RoutingFrame::ReqAck { current_ttl: 2, lqi: 0, free_slots: 64 };
        assert_eq!(encode_routing(&over), Err(CodecError::SlotsOverflow(64)));
        let over = RoutingFrame::Req { slots: 64, src: 1, dest: 2, ttl: 3 };
        assert_eq!(encode_routing(&over), Err(CodecError::SlotsOverflow(64)));

        assert_eq!(
            decode_routing(&img[..3]),
            Err(CodecError::Truncated { needed: 4, got: 3 })
        );
        assert_eq!(decode_routing(&[0x02, 0, 0, 0]), Err(CodecError::UnknownPacketType(0x02)));
    }

    #[test]
    fn routed_frame_round_trip() {
        let f = Frame::Routed {
            src: 13,
            dest: 10,
            routing: RoutingFrame::Data { src: 13, dest: 10, payload_len: 3 },
            payload: vec![1, 2, 3],
        };
        let img = f.encode().unwrap();
        assert_eq!(img.len(), 4 + 4 + 3);
        assert_eq!(Frame::decode(&img, Stack::Routed).unwrap(), f);
        assert!(matches!(Frame::decode(&img, Stack::Plain).unwrap(), Frame::Data(_)));
    }
}
