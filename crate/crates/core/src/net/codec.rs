//! Length-prefixed binary frames.
//!
//! ```text
//! header (14 bytes, little-endian)
//!   magic "SWRM" (4) | version u8 = 1 | kind u8 | sender_id u32 | payload_len u32
//!
//! payloads
//!   HELLO     0x01  advertised listen address, UTF-8 (may be empty)
//!   PEER_LIST 0x02  count u32 | count × (node_id u32 | addr_len u16 | addr | last_seen_ms u64)
//!   WEIGHTS   0x03  round u32 | epoch u32 | sample_count u64 | param_count u64 | param_count × f64
//!   ACK       0x04  acked_kind u8 | status u8 | round u32
//!   LEAVE     0x05  empty
//! ```

use std::io::Read;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"SWRM";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 14;
pub const MAX_PAYLOAD: usize = i32::MAX as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Kind {
    Hello = 0x01,
    PeerList = 0x02,
    Weights = 0x03,
    Ack = 0x04,
    Leave = 0x05,
}

impl Kind {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0x01 => Self::Hello,
            0x02 => Self::PeerList,
            0x03 => Self::Weights,
            0x04 => Self::Ack,
            0x05 => Self::Leave,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum AckStatus {
    Ok = 0,
    IdCollision = 1,
    Rejected = 2,
}

impl AckStatus {
    fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Ok,
            1 => Self::IdCollision,
            2 => Self::Rejected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerInfo {
    pub node_id: u32,
    pub addr: String,
    pub last_seen_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightsBody {
    pub round: u32,
    pub epoch: u32,
    pub sample_count: u64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello {
        listen_addr: String,
    },
    PeerList(Vec<PeerInfo>),
    Weights(WeightsBody),
    Ack {
        acked: Kind,
        status: AckStatus,
        round: u32,
    },
    Leave,
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Self::Hello { .. } => Kind::Hello,
            Self::PeerList(_) => Kind::PeerList,
            Self::Weights(_) => Kind::Weights,
            Self::Ack { .. } => Kind::Ack,
            Self::Leave => Kind::Leave,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmMessage {
    pub sender_id: u32,
    pub payload: Payload,
}

impl SwarmMessage {
    pub fn new(sender_id: u32, payload: Payload) -> Self {
        Self { sender_id, payload }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the frame limit")]
    OversizePayload(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message kind 0x{0:02x}")]
    UnknownKind(u8),
    #[error("frame truncated in {field}: need {needed} bytes, have {available}")]
    TruncatedFrame {
        field: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("length mismatch in {field}: declared {declared}, found {actual}")]
    LengthMismatch {
        field: &'static str,
        declared: usize,
        actual: usize,
    },
    #[error("malformed {0}")]
    Malformed(&'static str),
}

fn body_len(payload: &Payload) -> usize {
    match payload {
        Payload::Hello { listen_addr } => listen_addr.len(),
        Payload::PeerList(entries) => 4 + entries.iter().map(|e| 14 + e.addr.len()).sum::<usize>(),
        Payload::Weights(w) => 24 + 8 * w.values.len(),
        Payload::Ack { .. } => 6,
        Payload::Leave => 0,
    }
}

pub fn encode(msg: &SwarmMessage) -> Result<Vec<u8>, CodecError> {
    let len = body_len(&msg.payload);
    if len > MAX_PAYLOAD {
        return Err(CodecError::OversizePayload(len));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&msg.sender_id.to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    match &msg.payload {
        Payload::Hello { listen_addr } => out.extend_from_slice(listen_addr.as_bytes()),
        Payload::PeerList(entries) => {
            out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
            for e in entries {
                let addr_len = u16::try_from(e.addr.len())
                    .map_err(|_| CodecError::OversizePayload(e.addr.len()))?;
                out.extend_from_slice(&e.node_id.to_le_bytes());
                out.extend_from_slice(&addr_len.to_le_bytes());
                out.extend_from_slice(e.addr.as_bytes());
                out.extend_from_slice(&e.last_seen_ms.to_le_bytes());
            }
        }
        Payload::Weights(w) => {
            out.extend_from_slice(&w.round.to_le_bytes());
            out.extend_from_slice(&w.epoch.to_le_bytes());
            out.extend_from_slice(&w.sample_count.to_le_bytes());
            out.extend_from_slice(&(w.values.len() as u64).to_le_bytes());
            for v in &w.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Payload::Ack {
            acked,
            status,
            round,
        } => {
            out.push(*acked as u8);
            out.push(*status as u8);
            out.extend_from_slice(&round.to_le_bytes());
        }
        Payload::Leave => {}
    }
    Ok(out)
}

/// Cursor over a payload that reports which field ran out.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], CodecError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(CodecError::LengthMismatch {
                field,
                declared: self.buf.len(),
                actual: self.pos + n,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N], CodecError> {
        Ok(self.take(N, field)?.try_into().expect("exact length"))
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, CodecError> {
        Ok(self.take(1, field)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, CodecError> {
        self.array(field).map(u16::from_le_bytes)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, CodecError> {
        self.array(field).map(u32::from_le_bytes)
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, CodecError> {
        self.array(field).map(u64::from_le_bytes)
    }

    fn finish(&self, field: &'static str) -> Result<(), CodecError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(CodecError::LengthMismatch {
                field,
                declared: self.buf.len(),
                actual: self.pos,
            })
        }
    }
}

/// Validates a frame header and returns `(kind, sender_id, payload_len)`.
/// Checks fields in wire order so the first violated field is reported.
pub fn decode_header(bytes: &[u8]) -> Result<(Kind, u32, usize), CodecError> {
    let magic_have = bytes.len().min(4);
    if bytes[..magic_have] != MAGIC[..magic_have] {
        return Err(CodecError::BadMagic);
    }
    let truncated = |field, needed| CodecError::TruncatedFrame {
        field,
        needed,
        available: bytes.len(),
    };
    if bytes.len() < 5 {
        return Err(truncated("magic/version", HEADER_LEN));
    }
    if bytes[4] != VERSION {
        return Err(CodecError::BadVersion(bytes[4]));
    }
    if bytes.len() < 6 {
        return Err(truncated("kind", HEADER_LEN));
    }
    let kind = Kind::from_u8(bytes[5]).ok_or(CodecError::UnknownKind(bytes[5]))?;
    if bytes.len() < HEADER_LEN {
        return Err(truncated("header", HEADER_LEN));
    }
    let sender = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let len = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(CodecError::OversizePayload(len));
    }
    Ok((kind, sender, len))
}

/// Parses exactly one frame. Total over arbitrary input.
pub fn decode(bytes: &[u8]) -> Result<SwarmMessage, CodecError> {
    let (kind, sender_id, len) = decode_header(bytes)?;
    let available = bytes.len() - HEADER_LEN;
    if available < len {
        return Err(CodecError::TruncatedFrame {
            field: "payload",
            needed: HEADER_LEN + len,
            available: bytes.len(),
        });
    }
    if available > len {
        return Err(CodecError::LengthMismatch {
            field: "payload_len",
            declared: len,
            actual: available,
        });
    }
    let payload = decode_payload(kind, &bytes[HEADER_LEN..])?;
    Ok(SwarmMessage { sender_id, payload })
}

fn decode_payload(kind: Kind, body: &[u8]) -> Result<Payload, CodecError> {
    let mut r = Reader { buf: body, pos: 0 };
    let payload = match kind {
        Kind::Hello => {
            let listen_addr =
                std::str::from_utf8(body).map_err(|_| CodecError::Malformed("hello address"))?;
            r.pos = body.len();
            Payload::Hello {
                listen_addr: listen_addr.to_string(),
            }
        }
        Kind::PeerList => {
            let count = r.u32("peer count")? as usize;
            // Each entry takes at least 14 bytes; bound the allocation by what is present.
            if count > body.len() / 14 {
                return Err(CodecError::LengthMismatch {
                    field: "peer count",
                    declared: count,
                    actual: body.len() / 14,
                });
            }
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let node_id = r.u32("peer node_id")?;
                let addr_len = r.u16("peer addr_len")? as usize;
                let addr = std::str::from_utf8(r.take(addr_len, "peer addr")?)
                    .map_err(|_| CodecError::Malformed("peer address"))?
                    .to_string();
                let last_seen_ms = r.u64("peer last_seen")?;
                entries.push(PeerInfo {
                    node_id,
                    addr,
                    last_seen_ms,
                });
            }
            Payload::PeerList(entries)
        }
        Kind::Weights => {
            let round = r.u32("round")?;
            let epoch = r.u32("epoch")?;
            let sample_count = r.u64("sample_count")?;
            let param_count = r.u64("param_count")?;
            let expected = (body.len() - r.pos) / 8;
            if param_count != expected as u64 || !(body.len() - r.pos).is_multiple_of(8) {
                return Err(CodecError::LengthMismatch {
                    field: "param_count",
                    declared: usize::try_from(param_count).unwrap_or(usize::MAX),
                    actual: body.len() - r.pos,
                });
            }
            let values = body[r.pos..]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            r.pos = body.len();
            Payload::Weights(WeightsBody {
                round,
                epoch,
                sample_count,
                values,
            })
        }
        Kind::Ack => {
            let raw_kind = r.u8("acked kind")?;
            let acked = Kind::from_u8(raw_kind).ok_or(CodecError::UnknownKind(raw_kind))?;
            let status = AckStatus::from_u8(r.u8("ack status")?)
                .ok_or(CodecError::Malformed("ack status"))?;
            let round = r.u32("ack round")?;
            Payload::Ack {
                acked,
                status,
                round,
            }
        }
        Kind::Leave => Payload::Leave,
    };
    r.finish("payload")?;
    Ok(payload)
}

/// Reads one frame from a byte stream.
pub fn read_frame(stream: &mut impl Read) -> std::io::Result<Vec<u8>> {
    let mut frame = vec![0u8; HEADER_LEN];
    stream.read_exact(&mut frame)?;
    let (_, _, len) = decode_header(&frame)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    frame.resize(HEADER_LEN + len, 0);
    stream.read_exact(&mut frame[HEADER_LEN..])?;
    Ok(frame)
}
