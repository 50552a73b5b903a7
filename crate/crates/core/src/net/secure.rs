//! Authenticated, encrypted framing for the TCP transport.
//!
//! Each connection runs a Noise `XX` handshake (X25519, ChaCha20-Poly1305,
//! BLAKE2s). Both sides prove possession of a static key that must appear in
//! the other's trust list, and every frame received afterwards must carry a
//! `sender_id` bound to that key. Static keys are distributed out of band.
//! Encrypted records are `u16` big-endian length + ciphertext; a frame larger
//! than one record spans several.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::TcpStream;

use serde::{Deserialize, Serialize};

use super::codec::{decode_header, HEADER_LEN};

const NOISE_PARAMS: &str = "Noise_XX_25519_ChaChaPoly_BLAKE2s";
const MAX_RECORD: usize = 65535;
const TAG_LEN: usize = 16;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticKeypair {
    #[serde(with = "hex_key")]
    pub private: [u8; 32],
    #[serde(with = "hex_key")]
    pub public: [u8; 32],
}

impl std::fmt::Debug for StaticKeypair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StaticKeypair")
            .field("public", &hex::encode(self.public))
            .finish_non_exhaustive()
    }
}

impl StaticKeypair {
    pub fn generate() -> Self {
        let kp = snow::Builder::new(NOISE_PARAMS.parse().expect("valid noise params"))
            .generate_keypair()
            .expect("keypair generation");
        Self {
            private: kp.private.try_into().expect("32-byte key"),
            public: kp.public.try_into().expect("32-byte key"),
        }
    }
}

/// A node's static identity plus the public keys it accepts, by node id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityConfig {
    pub local: StaticKeypair,
    #[serde(with = "hex_key_map")]
    pub trusted: BTreeMap<u32, [u8; 32]>,
}

impl SecurityConfig {
    /// Checks that `sender_id` is bound to the key authenticated on this channel.
    pub fn sender_matches(&self, sender_id: u32, remote_static: &[u8; 32]) -> bool {
        self.trusted.get(&sender_id) == Some(remote_static)
    }

    fn is_trusted(&self, key: &[u8]) -> bool {
        self.trusted.values().any(|k| k.as_slice() == key)
    }
}

pub(crate) enum Channel {
    Plain(TcpStream),
    Noise {
        stream: TcpStream,
        state: Box<snow::TransportState>,
        remote: [u8; 32],
        rx: Vec<u8>,
    },
}

fn io_err(kind: io::ErrorKind, msg: impl Into<String>) -> io::Error {
    io::Error::new(kind, msg.into())
}

fn noise_err(e: snow::Error) -> io::Error {
    io_err(io::ErrorKind::PermissionDenied, format!("noise: {e}"))
}

fn write_record(stream: &mut TcpStream, data: &[u8]) -> io::Result<()> {
    let len = u16::try_from(data.len())
        .map_err(|_| io_err(io::ErrorKind::InvalidInput, "record too large"))?;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(data)
}

fn read_record(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 2];
    stream.read_exact(&mut len)?;
    let mut buf = vec![0u8; u16::from_be_bytes(len) as usize];
    stream.read_exact(&mut buf)?;
    Ok(buf)
}

impl Channel {
    pub(crate) fn client(stream: TcpStream, security: Option<&SecurityConfig>) -> io::Result<Self> {
        let Some(sec) = security else {
            return Ok(Self::Plain(stream));
        };
        let hs = snow::Builder::new(NOISE_PARAMS.parse().expect("valid noise params"))
            .local_private_key(&sec.local.private)
            .build_initiator()
            .map_err(noise_err)?;
        Self::handshake(stream, hs, sec, true)
    }

    pub(crate) fn server(stream: TcpStream, security: Option<&SecurityConfig>) -> io::Result<Self> {
        let Some(sec) = security else {
            return Ok(Self::Plain(stream));
        };
        let hs = snow::Builder::new(NOISE_PARAMS.parse().expect("valid noise params"))
            .local_private_key(&sec.local.private)
            .build_responder()
            .map_err(noise_err)?;
        Self::handshake(stream, hs, sec, false)
    }

    fn handshake(
        mut stream: TcpStream,
        mut hs: snow::HandshakeState,
        sec: &SecurityConfig,
        initiator: bool,
    ) -> io::Result<Self> {
        let mut buf = vec![0u8; MAX_RECORD];
        let mut scratch = vec![0u8; MAX_RECORD];
        // XX: -> e ; <- e, ee, s, es ; -> s, se
        for step in 0..3 {
            let our_turn = (step % 2 == 0) == initiator;
            if our_turn {
                let n = hs.write_message(&[], &mut buf).map_err(noise_err)?;
                write_record(&mut stream, &buf[..n])?;
            } else {
                let msg = read_record(&mut stream)?;
                hs.read_message(&msg, &mut scratch).map_err(noise_err)?;
            }
        }
        let remote: [u8; 32] = hs
            .get_remote_static()
            .and_then(|k| k.try_into().ok())
            .ok_or_else(|| io_err(io::ErrorKind::PermissionDenied, "peer sent no static key"))?;
        if !sec.is_trusted(&remote) {
            return Err(io_err(
                io::ErrorKind::PermissionDenied,
                "untrusted static key",
            ));
        }
        let state = hs.into_transport_mode().map_err(noise_err)?;
        Ok(Self::Noise {
            stream,
            state: Box::new(state),
            remote,
            rx: Vec::new(),
        })
    }

    pub(crate) fn remote_static(&self) -> Option<&[u8; 32]> {
        match self {
            Self::Plain(_) => None,
            Self::Noise { remote, .. } => Some(remote),
        }
    }

    pub(crate) fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        match self {
            Self::Plain(s) => s.write_all(frame),
            Self::Noise { stream, state, .. } => {
                let mut buf = vec![0u8; MAX_RECORD];
                for chunk in frame.chunks(MAX_RECORD - TAG_LEN) {
                    let n = state.write_message(chunk, &mut buf).map_err(noise_err)?;
                    write_record(stream, &buf[..n])?;
                }
                Ok(())
            }
        }
    }

    pub(crate) fn recv_frame(&mut self) -> io::Result<Vec<u8>> {
        match self {
            Self::Plain(s) => super::codec::read_frame(s),
            Self::Noise {
                stream, state, rx, ..
            } => {
                let mut plain = vec![0u8; MAX_RECORD];
                loop {
                    if rx.len() >= HEADER_LEN {
                        let (_, _, len) = decode_header(rx)
                            .map_err(|e| io_err(io::ErrorKind::InvalidData, e.to_string()))?;
                        if rx.len() >= HEADER_LEN + len {
                            let rest = rx.split_off(HEADER_LEN + len);
                            return Ok(std::mem::replace(rx, rest));
                        }
                    }
                    let record = read_record(stream)?;
                    let n = state.read_message(&record, &mut plain).map_err(noise_err)?;
                    rx.extend_from_slice(&plain[..n]);
                }
            }
        }
    }
}

mod hex_key {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(key: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(key))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let text = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(text, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

mod hex_key_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u32, [u8; 32]>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let as_hex: BTreeMap<String, String> = map
            .iter()
            .map(|(k, v)| (k.to_string(), hex::encode(v)))
            .collect();
        as_hex.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<u32, [u8; 32]>, D::Error> {
        let raw = BTreeMap::<String, String>::deserialize(d)?;
        raw.into_iter()
            .map(|(k, v)| {
                let id = k.parse::<u32>().map_err(serde::de::Error::custom)?;
                let mut key = [0u8; 32];
                hex::decode_to_slice(v, &mut key).map_err(serde::de::Error::custom)?;
                Ok((id, key))
            })
            .collect()
    }
}
