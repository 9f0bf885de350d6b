//! Flow identity and keyed flow hashing.
//!
//! Each datagram is mapped to a [`FiveTuple`] from its outer UDP addressing and
//! hashed with SipHash-2-4 under a per-process secret [`HashKey`]. The secret
//! key keeps an attacker from steering many flows into the same state-table
//! probe chain.

use std::fmt;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FlowError {
    #[error("only IPv4 flows are supported, got {0}")]
    NotIpv4(IpAddr),
    #[error("hash key must be 32 hex characters")]
    BadHashKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: u8,
}

impl FiveTuple {
    pub const UDP: u8 = 17;
    pub const ENCODED_LEN: usize = 13;

    /// `src_ip || dst_ip || src_port || dst_port || protocol`, integers big-endian.
    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0..4].copy_from_slice(&self.src_ip.octets());
        out[4..8].copy_from_slice(&self.dst_ip.octets());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out[12] = self.protocol;
        out
    }
}

/// The flow a datagram belongs to: source is the peer, destination is us.
pub fn extract_five_tuple(peer: SocketAddr, local: SocketAddr) -> Result<FiveTuple, FlowError> {
    Ok(FiveTuple {
        src_ip: ipv4_of(peer.ip())?,
        dst_ip: ipv4_of(local.ip())?,
        src_port: peer.port(),
        dst_port: local.port(),
        protocol: FiveTuple::UDP,
    })
}

fn ipv4_of(ip: IpAddr) -> Result<Ipv4Addr, FlowError> {
    match ip {
        IpAddr::V4(v4) => Ok(v4),
        IpAddr::V6(v6) => v6.to_ipv4_mapped().ok_or(FlowError::NotIpv4(ip)),
    }
}

/// 128-bit SipHash key. Never serialized; `Debug` is redacted.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct HashKey {
    pub k0: u64,
    pub k1: u64,
}

impl HashKey {
    pub fn new(k0: u64, k1: u64) -> Self {
        Self { k0, k1 }
    }

    /// Fresh key from OS randomness.
    pub fn random() -> Self {
        let mut rng = rand::rngs::OsRng;
        Self::new(rng.next_u64(), rng.next_u64())
    }

    /// Key bytes as in the reference test vectors: 16 bytes, each half little-endian.
    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        let k0 = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let k1 = u64::from_le_bytes(bytes[8..].try_into().unwrap());
        Self::new(k0, k1)
    }

    /// Parses 32 hex characters in the byte order of [`HashKey::from_bytes`].
    pub fn from_hex(s: &str) -> Result<Self, FlowError> {
        let s = s.trim();
        if s.len() != 32 || !s.is_ascii() {
            return Err(FlowError::BadHashKey);
        }
        let mut bytes = [0u8; 16];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|_| FlowError::BadHashKey)?;
        }
        Ok(Self::from_bytes(bytes))
    }
}

impl fmt::Debug for HashKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("HashKey(<redacted>)")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey(pub u64);

#[inline(always)]
fn sip_round(v: &mut [u64; 4]) {
    v[0] = v[0].wrapping_add(v[1]);
    v[1] = v[1].rotate_left(13);
    v[1] ^= v[0];
    v[0] = v[0].rotate_left(32);
    v[2] = v[2].wrapping_add(v[3]);
    v[3] = v[3].rotate_left(16);
    v[3] ^= v[2];
    v[0] = v[0].wrapping_add(v[3]);
    v[3] = v[3].rotate_left(21);
    v[3] ^= v[0];
    v[2] = v[2].wrapping_add(v[1]);
    v[1] = v[1].rotate_left(17);
    v[1] ^= v[2];
    v[2] = v[2].rotate_left(32);
}

/// SipHash-2-4: two compression rounds per 8-byte word, four finalization rounds.
pub fn siphash24(key: HashKey, data: &[u8]) -> u64 {
    let mut v = [
        key.k0 ^ 0x736f_6d65_7073_6575,
        key.k1 ^ 0x646f_7261_6e64_6f6d,
        key.k0 ^ 0x6c79_6765_6e65_7261,
        key.k1 ^ 0x7465_6462_7974_6573,
    ];

    let mut words = data.chunks_exact(8);
    for word in words.by_ref() {
        let m = u64::from_le_bytes(word.try_into().unwrap());
        v[3] ^= m;
        sip_round(&mut v);
        sip_round(&mut v);
        v[0] ^= m;
    }

    let mut last = (data.len() as u64) << 56;
    for (i, &b) in words.remainder().iter().enumerate() {
        last |= (b as u64) << (8 * i);
    }
    v[3] ^= last;
    sip_round(&mut v);
    sip_round(&mut v);
    v[0] ^= last;

    v[2] ^= 0xff;
    for _ in 0..4 {
        sip_round(&mut v);
    }
    v[0] ^ v[1] ^ v[2] ^ v[3]
}

#[inline]
pub fn flow_key(key: HashKey, tuple: &FiveTuple) -> FlowKey {
    FlowKey(siphash24(key, &tuple.to_bytes()))
}
