//! DTLS-style secure channel: a three-message ephemeral handshake followed by
//! AEAD-protected records with a 64-entry anti-replay window.
//!
//! The handshake is repo-local (no cookies, certificates, fragmentation or
//! retransmission) but keeps the cost structure of a real one: one key-pair
//! generation per server key (or per connection when reuse is off), one
//! agreement per connection, an HKDF key schedule and Finished MACs over the
//! transcript in both directions.
//!
//! Records use the DTLS 1.2 header layout. The AEAD nonce is the 4-byte
//! directional salt followed by `epoch || seq` as 8 big-endian bytes, and the
//! additional data is the full 13-byte header.

mod handshake;
mod kex;
mod keys;
mod record;
mod replay;
mod suite;

use std::sync::Arc;

use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use handshake::{
    connect_pair, handshake_step, start_client, ChannelConfig, HandshakeCtx, HandshakeOutput,
    KexCache,
};
pub use kex::{kex_agree, kex_generate, modp_prime, KexKeyPair, KexMethod, DHE_EXPONENT_BITS};
pub use keys::{derive_keys, KeyBlock, RANDOM_LEN};
pub use record::{ContentType, RecordHeader, HEADER_LEN, MAX_BODY_LEN, MAX_SEQ, VERSION};
pub use replay::ReplayWindow;
pub use suite::{CipherSuite, NONCE_LEN, SALT_LEN, TAG_LEN};

use suite::RecordCipher;

/// Largest plaintext that still fits one datagram after header and tag.
pub const MAX_PLAINTEXT_LEN: usize = MAX_BODY_LEN - TAG_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeFailure {
    UnknownSuite(u16),
    SuiteMismatch,
    BadFinished,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("malformed record: {0}")]
    MalformedRecord(&'static str),
    #[error("malformed handshake message: {0}")]
    MalformedHandshake(&'static str),
    #[error("handshake failure: {0:?}")]
    HandshakeFailure(HandshakeFailure),
    #[error("record authentication failed")]
    AuthenticationFailed,
    #[error("record {seq} rejected as replay")]
    ReplayRejected { seq: u64 },
    #[error("connection is not established")]
    NotEstablished,
    #[error("connection is closed")]
    Closed,
    #[error("plaintext of {len} bytes exceeds {MAX_PLAINTEXT_LEN}")]
    PlaintextTooLong { len: usize },
    #[error("record sequence space exhausted")]
    SequenceExhausted,
    #[error("malformed peer public key")]
    MalformedPublicKey,
    #[error("key agreement produced a degenerate shared secret")]
    DegenerateSharedSecret,
    #[error("AEAD failure")]
    Crypto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Client,
    Server,
}

/// Connection phase; doubles as the gateway's function-table index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Phase {
    AwaitingHello = 0,
    AwaitingFinished = 1,
    Established = 2,
    Closed = 3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficCounters {
    pub rx_packets: u64,
    pub rx_bytes: u64,
    pub tx_packets: u64,
    pub tx_bytes: u64,
}

#[derive(Clone)]
struct Direction {
    cipher: RecordCipher,
    salt: [u8; SALT_LEN],
}

/// Per-flow channel state.
pub struct ConnectionState {
    role: Role,
    phase: Phase,
    suite: CipherSuite,
    kex: KexMethod,
    send: Option<Direction>,
    recv: Option<Direction>,
    epoch: u16,
    send_seq: u64,
    replay: ReplayWindow,
    transcript: Sha256,
    handshake_seq: u64,
    client_random: [u8; RANDOM_LEN],
    server_random: [u8; RANDOM_LEN],
    own_key: Option<Arc<KexKeyPair>>,
    /// Finished keys, held only until the handshake completes.
    own_finished_key: Option<[u8; 32]>,
    peer_finished_key: Option<[u8; 32]>,
    counters: TrafficCounters,
}

impl std::fmt::Debug for ConnectionState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConnectionState")
            .field("role", &self.role)
            .field("phase", &self.phase)
            .field("suite", &self.suite)
            .field("kex", &self.kex)
            .field("epoch", &self.epoch)
            .field("send_seq", &self.send_seq)
            .field("counters", &self.counters)
            .finish_non_exhaustive()
    }
}

impl ConnectionState {
    fn new(role: Role, suite: CipherSuite, kex: KexMethod) -> Self {
        Self {
            role,
            phase: Phase::AwaitingHello,
            suite,
            kex,
            send: None,
            recv: None,
            epoch: 0,
            send_seq: 0,
            replay: ReplayWindow::new(),
            transcript: Sha256::new(),
            handshake_seq: 0,
            client_random: [0; RANDOM_LEN],
            server_random: [0; RANDOM_LEN],
            own_key: None,
            own_finished_key: None,
            peer_finished_key: None,
            counters: TrafficCounters::default(),
        }
    }

    /// A client that will offer `suite`; call [`start_client`] to produce its hello.
    pub fn new_client(suite: CipherSuite, kex: KexMethod) -> Self {
        Self::new(Role::Client, suite, kex)
    }

    /// A server awaiting a ClientHello. Suite and method are fixed by the hello.
    pub fn new_server(kex: KexMethod) -> Self {
        Self::new(Role::Server, CipherSuite::ChaCha20Poly1305, kex)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn suite(&self) -> CipherSuite {
        self.suite
    }

    pub fn kex(&self) -> KexMethod {
        self.kex
    }

    pub fn epoch(&self) -> u16 {
        self.epoch
    }

    pub fn send_seq(&self) -> u64 {
        self.send_seq
    }

    pub fn counters(&self) -> TrafficCounters {
        self.counters
    }

    pub fn replay_window(&self) -> &ReplayWindow {
        &self.replay
    }

    pub fn close(&mut self) {
        self.phase = Phase::Closed;
    }

    /// Test hook: jump the send sequence, e.g. to exercise exhaustion.
    #[doc(hidden)]
    pub fn set_send_seq(&mut self, seq: u64) {
        self.send_seq = seq;
    }

    pub(crate) fn next_handshake_seq(&mut self) -> u64 {
        let s = self.handshake_seq;
        self.handshake_seq += 1;
        s
    }

    /// Protects `plaintext` as one application-data record.
    pub fn seal(&mut self, plaintext: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if self.phase != Phase::Established {
            return Err(ChannelError::NotEstablished);
        }
        if plaintext.len() > MAX_PLAINTEXT_LEN {
            return Err(ChannelError::PlaintextTooLong {
                len: plaintext.len(),
            });
        }
        if self.send_seq > MAX_SEQ {
            return Err(ChannelError::SequenceExhausted);
        }
        let dir = self.send.as_ref().ok_or(ChannelError::NotEstablished)?;
        let header = RecordHeader {
            content_type: ContentType::ApplicationData,
            epoch: self.epoch,
            seq: self.send_seq,
            length: (plaintext.len() + TAG_LEN) as u16,
        }
        .encode();
        let nonce = nonce_for(&dir.salt, self.epoch, self.send_seq);

        let mut body = Vec::with_capacity(plaintext.len() + TAG_LEN);
        body.extend_from_slice(plaintext);
        dir.cipher.seal(&nonce, &header, &mut body)?;

        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.extend_from_slice(&header);
        out.extend_from_slice(&body);

        self.send_seq += 1;
        self.counters.tx_packets += 1;
        self.counters.tx_bytes += plaintext.len() as u64;
        Ok(out)
    }

    /// Authenticates and decrypts one application-data record. On any error
    /// the state is unchanged.
    pub fn open(&mut self, record: &[u8]) -> Result<Vec<u8>, ChannelError> {
        if self.phase != Phase::Established {
            return Err(ChannelError::NotEstablished);
        }
        let (header, body) = RecordHeader::parse(record)?;
        if header.content_type != ContentType::ApplicationData {
            return Err(ChannelError::MalformedRecord("not application data"));
        }
        if header.epoch != self.epoch {
            return Err(ChannelError::MalformedRecord("epoch"));
        }
        if body.len() < TAG_LEN {
            return Err(ChannelError::MalformedRecord("body shorter than tag"));
        }
        if !self.replay.check(header.seq) {
            return Err(ChannelError::ReplayRejected { seq: header.seq });
        }
        let dir = self.recv.as_ref().ok_or(ChannelError::NotEstablished)?;
        let nonce = nonce_for(&dir.salt, header.epoch, header.seq);
        let mut buf = body.to_vec();
        dir.cipher.open(&nonce, &record[..HEADER_LEN], &mut buf)?;

        self.replay.mark(header.seq);
        self.counters.rx_packets += 1;
        self.counters.rx_bytes += buf.len() as u64;
        Ok(buf)
    }
}

fn nonce_for(salt: &[u8; SALT_LEN], epoch: u16, seq: u64) -> [u8; NONCE_LEN] {
    let mut nonce = [0u8; NONCE_LEN];
    nonce[..SALT_LEN].copy_from_slice(salt);
    let explicit = ((epoch as u64) << 48) | seq;
    nonce[SALT_LEN..].copy_from_slice(&explicit.to_be_bytes());
    nonce
}

/// Seeds a channel RNG: from `seed` when given, otherwise from OS randomness.
pub fn channel_rng(seed: Option<u64>) -> ChaCha20Rng {
    use rand::SeedableRng;
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}
