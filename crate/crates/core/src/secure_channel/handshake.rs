//! Handshake messages (all carried in type-22 records at epoch 0):
//!
//! ```text
//! ClientHello  0x01 || client_random(32) || suite(2) || len(2) || client_pub
//! ServerHello  0x02 || server_random(32) || suite(2) || len(2) || server_pub
//! Finished     0x14 || verify_data(32)
//! ```
//!
//! The client's Finished covers `ClientHello || ServerHello`; the server's
//! covers those plus the client Finished. `verify_data` is
//! HMAC-SHA256(finished_key, SHA-256(transcript)).

use std::sync::Arc;

use hmac::{Hmac, Mac};
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use super::kex::{kex_agree, kex_generate, KexKeyPair, KexMethod};
use super::keys::{derive_keys, KeyBlock, RANDOM_LEN};
use super::record::{ContentType, RecordHeader, HEADER_LEN, MAX_BODY_LEN};
use super::suite::{CipherSuite, RecordCipher};
use super::{ChannelError, ConnectionState, Direction, HandshakeFailure, Phase, Role};

const MSG_CLIENT_HELLO: u8 = 0x01;
const MSG_SERVER_HELLO: u8 = 0x02;
const MSG_FINISHED: u8 = 0x14;
const VERIFY_LEN: usize = 32;

type HmacSha256 = Hmac<Sha256>;

/// Server-side handshake policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelConfig {
    /// Suites the server accepts.
    pub suites: Vec<CipherSuite>,
    pub kex: KexMethod,
    /// Reuse one server key pair across connections.
    pub reuse_kex: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            suites: CipherSuite::ALL.to_vec(),
            kex: KexMethod::Ecdhe,
            reuse_kex: true,
        }
    }
}

/// Holds the reusable server key pair and counts generations.
#[derive(Debug, Default)]
pub struct KexCache {
    pair: Option<Arc<KexKeyPair>>,
    generated: u64,
}

impl KexCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of key pairs generated through this cache.
    pub fn generated(&self) -> u64 {
        self.generated
    }

    fn server_pair(&mut self, cfg: &ChannelConfig, rng: &mut ChaCha20Rng) -> Arc<KexKeyPair> {
        if cfg.reuse_kex {
            if let Some(p) = &self.pair {
                if p.method() == cfg.kex {
                    return Arc::clone(p);
                }
            }
        }
        let pair = Arc::new(kex_generate(cfg.kex, rng));
        self.generated += 1;
        if cfg.reuse_kex {
            self.pair = Some(Arc::clone(&pair));
        }
        pair
    }
}

/// Everything a handshake step may need besides the connection itself.
pub struct HandshakeCtx<'a> {
    pub cfg: &'a ChannelConfig,
    pub rng: &'a mut ChaCha20Rng,
    pub keys: &'a mut KexCache,
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct HandshakeOutput {
    /// Wire records to send back to the peer.
    pub records: Vec<Vec<u8>>,
    /// The message did not fit the current phase and was dropped.
    pub ignored: bool,
}

impl HandshakeOutput {
    fn ignored() -> Self {
        Self {
            records: Vec::new(),
            ignored: true,
        }
    }

    fn reply(record: Vec<u8>) -> Self {
        Self {
            records: vec![record],
            ignored: false,
        }
    }
}

struct Hello<'a> {
    random: [u8; RANDOM_LEN],
    suite_id: u16,
    public: &'a [u8],
}

fn encode_hello(kind: u8, random: &[u8; RANDOM_LEN], suite: CipherSuite, public: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + RANDOM_LEN + 4 + public.len());
    out.push(kind);
    out.extend_from_slice(random);
    out.extend_from_slice(&suite.id().to_be_bytes());
    out.extend_from_slice(&(public.len() as u16).to_be_bytes());
    out.extend_from_slice(public);
    out
}

fn parse_hello(body: &[u8]) -> Result<Hello<'_>, ChannelError> {
    const FIXED: usize = 1 + RANDOM_LEN + 4;
    if body.len() < FIXED {
        return Err(ChannelError::MalformedHandshake("short hello"));
    }
    let mut random = [0u8; RANDOM_LEN];
    random.copy_from_slice(&body[1..1 + RANDOM_LEN]);
    let suite_id = u16::from_be_bytes([body[1 + RANDOM_LEN], body[2 + RANDOM_LEN]]);
    let len = u16::from_be_bytes([body[3 + RANDOM_LEN], body[4 + RANDOM_LEN]]) as usize;
    let public = &body[FIXED..];
    if public.len() != len {
        return Err(ChannelError::MalformedHandshake("public key length"));
    }
    Ok(Hello {
        random,
        suite_id,
        public,
    })
}

fn finished_tag(key: &[u8; 32], transcript: &Sha256) -> [u8; VERIFY_LEN] {
    let hash = transcript.clone().finalize();
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length");
    mac.update(&hash);
    mac.finalize().into_bytes().into()
}

fn verify_finished(key: &[u8; 32], transcript: &Sha256, tag: &[u8]) -> bool {
    let hash = transcript.clone().finalize();
    let mut mac = HmacSha256::new_from_slice(key).expect("any key length");
    mac.update(&hash);
    mac.verify_slice(tag).is_ok()
}

fn encode_finished(tag: &[u8; VERIFY_LEN]) -> Vec<u8> {
    let mut out = Vec::with_capacity(1 + VERIFY_LEN);
    out.push(MSG_FINISHED);
    out.extend_from_slice(tag);
    out
}

fn handshake_record(state: &mut ConnectionState, body: &[u8]) -> Vec<u8> {
    debug_assert!(body.len() <= MAX_BODY_LEN);
    let header = RecordHeader {
        content_type: ContentType::Handshake,
        epoch: 0,
        seq: state.next_handshake_seq(),
        length: body.len() as u16,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&header.encode());
    out.extend_from_slice(body);
    out
}

fn install_keys(state: &mut ConnectionState, keys: &KeyBlock) {
    let client = Direction {
        cipher: RecordCipher::new(state.suite, &keys.client_write_key),
        salt: keys.client_salt,
    };
    let server = Direction {
        cipher: RecordCipher::new(state.suite, &keys.server_write_key),
        salt: keys.server_salt,
    };
    match state.role {
        Role::Client => {
            state.send = Some(client);
            state.recv = Some(server);
            state.own_finished_key = Some(keys.client_finished_key);
            state.peer_finished_key = Some(keys.server_finished_key);
        }
        Role::Server => {
            state.send = Some(server);
            state.recv = Some(client);
            state.own_finished_key = Some(keys.server_finished_key);
            state.peer_finished_key = Some(keys.client_finished_key);
        }
    }
}

fn establish(state: &mut ConnectionState) {
    state.phase = Phase::Established;
    state.epoch = 1;
    state.send_seq = 0;
    state.peer_finished_key = None;
    state.own_finished_key = None;
    state.own_key = None;
}

/// Generates the client's key pair and random and returns the ClientHello record.
pub fn start_client(
    state: &mut ConnectionState,
    rng: &mut ChaCha20Rng,
) -> Result<Vec<u8>, ChannelError> {
    if state.role != Role::Client {
        return Err(ChannelError::MalformedHandshake("not a client"));
    }
    if state.phase != Phase::AwaitingHello || state.own_key.is_some() {
        return Err(ChannelError::MalformedHandshake("client already started"));
    }
    let pair = kex_generate(state.kex, rng);
    rng.fill_bytes(&mut state.client_random);
    let body = encode_hello(
        MSG_CLIENT_HELLO,
        &state.client_random,
        state.suite,
        &pair.public_bytes(),
    );
    state.transcript.update(&body);
    state.own_key = Some(Arc::new(pair));
    Ok(handshake_record(state, &body))
}

/// Feeds one handshake message body (the payload of a type-22 record).
pub fn handshake_step(
    state: &mut ConnectionState,
    msg: &[u8],
    ctx: &mut HandshakeCtx<'_>,
) -> Result<HandshakeOutput, ChannelError> {
    if state.phase == Phase::Closed {
        return Err(ChannelError::Closed);
    }
    let Some(&kind) = msg.first() else {
        return Err(ChannelError::MalformedHandshake("empty message"));
    };
    if !matches!(kind, MSG_CLIENT_HELLO | MSG_SERVER_HELLO | MSG_FINISHED) {
        return Err(ChannelError::MalformedHandshake("unknown message type"));
    }
    match (state.role, state.phase, kind) {
        (Role::Server, Phase::AwaitingHello, MSG_CLIENT_HELLO) => server_on_hello(state, msg, ctx),
        (Role::Client, Phase::AwaitingHello, MSG_SERVER_HELLO) if state.own_key.is_some() => {
            client_on_hello(state, msg)
        }
        (Role::Server, Phase::AwaitingFinished, MSG_FINISHED) => server_on_finished(state, msg),
        (Role::Client, Phase::AwaitingFinished, MSG_FINISHED) => client_on_finished(state, msg),
        _ => Ok(HandshakeOutput::ignored()),
    }
}

fn server_on_hello(
    state: &mut ConnectionState,
    msg: &[u8],
    ctx: &mut HandshakeCtx<'_>,
) -> Result<HandshakeOutput, ChannelError> {
    let hello = parse_hello(msg)?;
    let suite = CipherSuite::from_id(hello.suite_id)
        .filter(|s| ctx.cfg.suites.contains(s))
        .ok_or(ChannelError::HandshakeFailure(HandshakeFailure::UnknownSuite(
            hello.suite_id,
        )))?;
    if hello.public.len() != ctx.cfg.kex.public_len() {
        return Err(ChannelError::MalformedPublicKey);
    }

    let pair = ctx.keys.server_pair(ctx.cfg, ctx.rng);
    let shared = kex_agree(&pair, hello.public)?;
    let mut server_random = [0u8; RANDOM_LEN];
    ctx.rng.fill_bytes(&mut server_random);
    let keys = derive_keys(&shared, &hello.random, &server_random, suite);
    let reply = encode_hello(MSG_SERVER_HELLO, &server_random, suite, &pair.public_bytes());

    state.suite = suite;
    state.kex = ctx.cfg.kex;
    state.client_random = hello.random;
    state.server_random = server_random;
    state.transcript = Sha256::new();
    state.transcript.update(msg);
    state.transcript.update(&reply);
    install_keys(state, &keys);
    state.phase = Phase::AwaitingFinished;
    Ok(HandshakeOutput::reply(handshake_record(state, &reply)))
}

fn client_on_hello(state: &mut ConnectionState, msg: &[u8]) -> Result<HandshakeOutput, ChannelError> {
    let hello = parse_hello(msg)?;
    if hello.suite_id != state.suite.id() {
        return Err(ChannelError::HandshakeFailure(HandshakeFailure::SuiteMismatch));
    }
    let own = state.own_key.as_ref().expect("checked by caller");
    let shared = kex_agree(own, hello.public)?;
    let keys = derive_keys(&shared, &state.client_random, &hello.random, state.suite);

    let mut transcript = state.transcript.clone();
    transcript.update(msg);
    let finished = encode_finished(&finished_tag(&keys.client_finished_key, &transcript));
    transcript.update(&finished);

    state.server_random = hello.random;
    state.transcript = transcript;
    install_keys(state, &keys);
    state.phase = Phase::AwaitingFinished;
    Ok(HandshakeOutput::reply(handshake_record(state, &finished)))
}

fn finished_tag_of(msg: &[u8]) -> Result<&[u8], ChannelError> {
    if msg.len() != 1 + VERIFY_LEN {
        return Err(ChannelError::MalformedHandshake("finished length"));
    }
    Ok(&msg[1..])
}

fn server_on_finished(state: &mut ConnectionState, msg: &[u8]) -> Result<HandshakeOutput, ChannelError> {
    let tag = finished_tag_of(msg)?;
    let key = state.peer_finished_key.expect("set with keys");
    if !verify_finished(&key, &state.transcript, tag) {
        state.phase = Phase::Closed;
        return Err(ChannelError::HandshakeFailure(HandshakeFailure::BadFinished));
    }
    state.transcript.update(msg);
    let server_key = state.own_finished_key.expect("set with keys");
    let reply = encode_finished(&finished_tag(&server_key, &state.transcript));
    establish(state);
    Ok(HandshakeOutput::reply(handshake_record(state, &reply)))
}

fn client_on_finished(state: &mut ConnectionState, msg: &[u8]) -> Result<HandshakeOutput, ChannelError> {
    let tag = finished_tag_of(msg)?;
    let key = state.peer_finished_key.expect("set with keys");
    if !verify_finished(&key, &state.transcript, tag) {
        state.phase = Phase::Closed;
        return Err(ChannelError::HandshakeFailure(HandshakeFailure::BadFinished));
    }
    establish(state);
    Ok(HandshakeOutput::default())
}

/// Runs a complete in-memory handshake and returns `(client, server)`, both
/// established. The server uses a fresh config with reuse enabled.
pub fn connect_pair(
    suite: CipherSuite,
    kex: KexMethod,
    rng: &mut ChaCha20Rng,
) -> Result<(ConnectionState, ConnectionState), ChannelError> {
    let cfg = ChannelConfig {
        suites: vec![suite],
        kex,
        reuse_kex: true,
    };
    let mut cache = KexCache::new();
    let mut client = ConnectionState::new_client(suite, kex);
    let mut server = ConnectionState::new_server(kex);

    let mut inflight = vec![start_client(&mut client, rng)?];
    let mut to_server = true;
    while !inflight.is_empty() {
        let mut next = Vec::new();
        for rec in inflight {
            let (_, body) = RecordHeader::parse(&rec)?;
            let target = if to_server { &mut server } else { &mut client };
            let mut ctx = HandshakeCtx {
                cfg: &cfg,
                rng: &mut *rng,
                keys: &mut cache,
            };
            next.extend(handshake_step(target, body, &mut ctx)?.records);
        }
        inflight = next;
        to_server = !to_server;
    }
    if client.phase() != Phase::Established || server.phase() != Phase::Established {
        return Err(ChannelError::NotEstablished);
    }
    Ok((client, server))
}
