//! Per-stage micro-loops. Every loop times single operations with the cycle
//! clock and discards the first `warmup` timings.

use std::hint::black_box;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{BenchError, CycleClock, StageKind, StageSample};
use crate::flow_hash::{extract_five_tuple, flow_key, FlowKey, HashKey};
use crate::packet_io::{Datagram, LoopbackNet, Transport, DEFAULT_BATCH};
use crate::secure_channel::{
    channel_rng, connect_pair, handshake_step, start_client, ChannelConfig, CipherSuite,
    ConnectionState, HandshakeCtx, KexCache, KexMethod, Phase, RecordHeader, MAX_PLAINTEXT_LEN,
};
use crate::state_table::StateTable;

/// Inputs shared by all micro-loops.
#[derive(Debug, Clone, Serialize)]
pub struct MicroConfig {
    /// Needed by the crypto and handshake stages.
    pub suite: Option<CipherSuite>,
    pub kex: KexMethod,
    pub reuse_kex: bool,
    pub payload: usize,
    /// Datagrams per IO call; IO timings are per datagram.
    pub batch: usize,
    /// Table size for lookups, table refill point for inserts.
    pub connections: usize,
    pub seed: u64,
    #[serde(skip)]
    pub clock: CycleClock,
}

impl MicroConfig {
    pub fn new(clock: CycleClock) -> Self {
        Self {
            suite: Some(CipherSuite::ChaCha20Poly1305),
            kex: KexMethod::Ecdhe,
            reuse_kex: true,
            payload: 500,
            batch: DEFAULT_BATCH,
            connections: 1000,
            seed: 1,
            clock,
        }
    }

    fn suite(&self, stage: StageKind) -> Result<CipherSuite, BenchError> {
        self.suite
            .ok_or_else(|| BenchError::Config(format!("stage {stage} needs a cipher suite")))
    }
}

/// 10% of `iterations`, at least 100, and always below `iterations`.
pub fn default_warmup(iterations: u64) -> u64 {
    (iterations / 10).max(100).min(iterations.saturating_sub(1))
}

/// Runs one stage's micro-loop `iterations` times and aggregates all but the
/// first `warmup` timings.
pub fn measure_stage(
    stage: StageKind,
    iterations: u64,
    warmup: u64,
    cfg: &MicroConfig,
) -> Result<StageSample, BenchError> {
    if iterations <= warmup {
        return Err(BenchError::Config(format!(
            "iterations ({iterations}) must exceed warmup ({warmup})"
        )));
    }
    if cfg.batch == 0 {
        return Err(BenchError::Config("batch must be at least 1".into()));
    }
    if cfg.payload > MAX_PLAINTEXT_LEN {
        return Err(BenchError::Config(format!(
            "payload {} exceeds {MAX_PLAINTEXT_LEN}",
            cfg.payload
        )));
    }
    let n = iterations as usize;
    let timings = match stage {
        StageKind::IoRx => io_rx(n, cfg)?,
        StageKind::IoTx => io_tx(n, cfg)?,
        StageKind::Hash => hash(n, cfg),
        StageKind::TableLookup => table_lookup(n, cfg)?,
        StageKind::TableInsert => table_insert(n, cfg)?,
        StageKind::StateAlloc => state_alloc(n, cfg),
        StageKind::CryptoSeal => crypto_seal(n, cfg)?,
        StageKind::CryptoOpen => crypto_open(n, cfg)?,
        StageKind::Handshake => handshake(n, cfg)?,
    };
    let sample = StageSample::from_timings(stage, &timings[warmup as usize..])?;
    Ok(match stage {
        StageKind::IoRx | StageKind::IoTx | StageKind::CryptoSeal | StageKind::CryptoOpen => {
            sample.with_bytes(cfg.payload as u64)
        }
        StageKind::Hash => sample.with_bytes(crate::flow_hash::FiveTuple::ENCODED_LEN as u64),
        StageKind::TableLookup | StageKind::TableInsert => {
            sample.with_connections(cfg.connections as u64)
        }
        StageKind::Handshake => sample.with_connections(iterations - warmup),
        StageKind::StateAlloc => sample,
    })
}

fn addr(i: u32, port: u16) -> SocketAddr {
    SocketAddr::V4(SocketAddrV4::new(Ipv4Addr::from(0x0A00_0000 | (i & 0x00FF_FFFF)), port))
}

fn io_rx(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let (mut ep, mut peer) = LoopbackNet::pair(addr(1, 4433), addr(2, 5000));
    let payload = vec![0xA5u8; cfg.payload];
    let mut out = Vec::with_capacity(n);
    let mut batch = Vec::with_capacity(cfg.batch);
    for _ in 0..n {
        batch.extend((0..cfg.batch).map(|_| Datagram::new(payload.clone(), ep.local_addr())));
        peer.tx_batch(&mut batch)?;
        let t0 = cfg.clock.now();
        let got = ep.rx_batch(cfg.batch)?;
        let t1 = cfg.clock.now();
        out.push((t1 - t0) / got.len().max(1) as u64);
        drop(black_box(got));
    }
    Ok(out)
}

fn io_tx(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let (mut ep, mut peer) = LoopbackNet::pair(addr(1, 4433), addr(2, 5000));
    let payload = vec![0xA5u8; cfg.payload];
    let target = peer.local_addr();
    let mut out = Vec::with_capacity(n);
    let mut batch = Vec::with_capacity(cfg.batch);
    for _ in 0..n {
        batch.extend((0..cfg.batch).map(|_| Datagram::new(payload.clone(), target)));
        let t0 = cfg.clock.now();
        let sent = ep.tx_batch(&mut batch)?;
        let t1 = cfg.clock.now();
        out.push((t1 - t0) / sent.max(1) as u64);
        drop(black_box(peer.rx_batch(cfg.batch)?));
    }
    Ok(out)
}

/// Distinct peer addresses for hashing loops.
fn peers(count: u32, rng: &mut ChaCha20Rng) -> Vec<SocketAddr> {
    (0..count)
        .map(|_| {
            SocketAddr::V4(SocketAddrV4::new(
                Ipv4Addr::from(rng.gen::<u32>()),
                rng.gen_range(1024..=u16::MAX),
            ))
        })
        .collect()
}

fn hash(n: usize, cfg: &MicroConfig) -> Vec<u64> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let key = HashKey::new(rng.gen(), rng.gen());
    let local = addr(1, 4433);
    let peers = peers(4096, &mut rng);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let peer = peers[i % peers.len()];
        let t0 = cfg.clock.now();
        let tuple = extract_five_tuple(black_box(peer), local).expect("ipv4");
        black_box(flow_key(key, &tuple));
        let t1 = cfg.clock.now();
        out.push(t1 - t0);
    }
    out
}

fn random_keys(count: usize, seed: u64) -> Vec<FlowKey> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count).map(|_| FlowKey(rng.gen())).collect()
}

fn table_lookup(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let size = cfg.connections.max(1);
    let keys = random_keys(size, cfg.seed);
    let mut table = StateTable::new();
    for (i, k) in keys.iter().enumerate() {
        table.insert(*k, i as u32)?;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let k = keys[i % size];
        let t0 = cfg.clock.now();
        black_box(table.lookup(black_box(k)));
        let t1 = cfg.clock.now();
        out.push(t1 - t0);
    }
    Ok(out)
}

fn table_insert(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let size = cfg.connections.max(1);
    let keys = random_keys(n, cfg.seed);
    let mut table = StateTable::new();
    let mut out = Vec::with_capacity(n);
    for (i, k) in keys.into_iter().enumerate() {
        if table.len() == size {
            drop(std::mem::take(&mut table));
        }
        let t0 = cfg.clock.now();
        table.insert(black_box(k), i as u32)?;
        let t1 = cfg.clock.now();
        out.push(t1 - t0);
    }
    Ok(out)
}

fn state_alloc(n: usize, cfg: &MicroConfig) -> Vec<u64> {
    let mut live: Vec<ConnectionState> = Vec::with_capacity(1024);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        if live.len() == live.capacity() {
            live.clear();
        }
        let t0 = cfg.clock.now();
        live.push(ConnectionState::new_server(black_box(cfg.kex)));
        let t1 = cfg.clock.now();
        out.push(t1 - t0);
    }
    black_box(&live);
    out
}

fn crypto_seal(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let suite = cfg.suite(StageKind::CryptoSeal)?;
    let mut rng = channel_rng(Some(cfg.seed));
    let (mut client, _server) = connect_pair(suite, KexMethod::Ecdhe, &mut rng)?;
    let payload = vec![0x5Au8; cfg.payload];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t0 = cfg.clock.now();
        let rec = client.seal(black_box(&payload))?;
        let t1 = cfg.clock.now();
        out.push(t1 - t0);
        drop(black_box(rec));
    }
    Ok(out)
}

fn crypto_open(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let suite = cfg.suite(StageKind::CryptoOpen)?;
    let mut rng = channel_rng(Some(cfg.seed));
    let (mut client, mut server) = connect_pair(suite, KexMethod::Ecdhe, &mut rng)?;
    let payload = vec![0x5Au8; cfg.payload];
    let mut out = Vec::with_capacity(n);
    let mut pending = Vec::with_capacity(256);
    while out.len() < n {
        let chunk = (n - out.len()).min(256);
        for _ in 0..chunk {
            pending.push(client.seal(&payload)?);
        }
        for rec in pending.drain(..) {
            let t0 = cfg.clock.now();
            let plain = server.open(black_box(&rec))?;
            let t1 = cfg.clock.now();
            out.push(t1 - t0);
            drop(black_box(plain));
        }
    }
    Ok(out)
}

/// Drives handshakes and times only the server's two steps.
pub struct HandshakeDriver {
    suite: CipherSuite,
    cfg: ChannelConfig,
    server_rng: ChaCha20Rng,
    client_rng: ChaCha20Rng,
    client_cfg: ChannelConfig,
    client_cache: KexCache,
}

impl HandshakeDriver {
    pub fn new(suite: CipherSuite, kex: KexMethod, reuse_kex: bool, seed: u64) -> Self {
        Self {
            suite,
            cfg: ChannelConfig {
                suites: vec![suite],
                kex,
                reuse_kex,
            },
            server_rng: channel_rng(Some(seed)),
            client_rng: channel_rng(Some(seed ^ 0x5555)),
            client_cfg: ChannelConfig::default(),
            client_cache: KexCache::new(),
        }
    }

    /// One complete handshake against `cache`; returns the server's cycles.
    pub fn server_cycles(&mut self, cache: &mut KexCache, clock: &CycleClock) -> Result<u64, BenchError> {
        let mut client = ConnectionState::new_client(self.suite, self.cfg.kex);
        let mut server = ConnectionState::new_server(self.cfg.kex);
        let ch = start_client(&mut client, &mut self.client_rng)?;
        let (_, ch_body) = RecordHeader::parse(&ch)?;

        let t0 = clock.now();
        let sh = handshake_step(
            &mut server,
            ch_body,
            &mut HandshakeCtx {
                cfg: &self.cfg,
                rng: &mut self.server_rng,
                keys: cache,
            },
        )?;
        let t1 = clock.now();

        let sh = sh.records.first().ok_or(BenchError::Config("no ServerHello".into()))?;
        let (_, sh_body) = RecordHeader::parse(sh)?;
        let cf = handshake_step(
            &mut client,
            sh_body,
            &mut HandshakeCtx {
                cfg: &self.client_cfg,
                rng: &mut self.client_rng,
                keys: &mut self.client_cache,
            },
        )?;
        let cf = cf.records.first().ok_or(BenchError::Config("no client Finished".into()))?;
        let (_, cf_body) = RecordHeader::parse(cf)?;

        let t2 = clock.now();
        let sf = handshake_step(
            &mut server,
            cf_body,
            &mut HandshakeCtx {
                cfg: &self.cfg,
                rng: &mut self.server_rng,
                keys: cache,
            },
        )?;
        let t3 = clock.now();
        debug_assert_eq!(server.phase(), Phase::Established);
        black_box(sf);
        Ok((t1 - t0) + (t3 - t2))
    }
}

fn handshake(n: usize, cfg: &MicroConfig) -> Result<Vec<u64>, BenchError> {
    let suite = cfg.suite(StageKind::Handshake)?;
    let mut driver = HandshakeDriver::new(suite, cfg.kex, cfg.reuse_kex, cfg.seed);
    let mut cache = KexCache::new();
    (0..n).map(|_| driver.server_cycles(&mut cache, &cfg.clock)).collect()
}

/// Server handshake cost for `c` connections against a fresh server.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HandshakeSeries {
    pub connections: u64,
    /// `total / connections`.
    pub per_conn: f64,
    /// Sum over handshake positions of the smallest cost seen at that
    /// position across repetitions.
    pub total: u64,
    pub key_pairs_generated: u64,
    /// The per-position minimums summed into `total`.
    pub per_position: Vec<u64>,
}

impl HandshakeSeries {
    pub fn to_sample(&self) -> Result<StageSample, BenchError> {
        Ok(StageSample::from_timings(StageKind::Handshake, &self.per_position)?.with_connections(self.connections))
    }
}

/// Measures server handshake cycles per connection over `c` connections,
/// each repetition starting with a fresh key cache. A separate warm-up cache
/// absorbs first-use effects.
pub fn measure_handshakes(
    suite: CipherSuite,
    kex: KexMethod,
    reuse_kex: bool,
    c: u64,
    reps: u32,
    clock: &CycleClock,
    seed: u64,
) -> Result<HandshakeSeries, BenchError> {
    Ok(handshake_curve(suite, kex, reuse_kex, &[c], reps, clock, seed)?.remove(0))
}

/// [`measure_handshakes`] for several connection counts. The n-th handshake
/// of a run is charged the minimum it cost over all repetitions, so every
/// position sees the same number of samples whatever `c` is. Repetitions are
/// interleaved across the counts so slow phases of the machine hit every
/// count alike.
pub fn handshake_curve(
    suite: CipherSuite,
    kex: KexMethod,
    reuse_kex: bool,
    counts: &[u64],
    reps: u32,
    clock: &CycleClock,
    seed: u64,
) -> Result<Vec<HandshakeSeries>, BenchError> {
    if counts.is_empty() || counts.contains(&0) || reps == 0 {
        return Err(BenchError::Config("connections and repetitions must be positive".into()));
    }
    let mut driver = HandshakeDriver::new(suite, kex, reuse_kex, seed);
    let mut warm = KexCache::new();
    for _ in 0..3 {
        driver.server_cycles(&mut warm, clock)?;
    }
    let mut best: Vec<Vec<u64>> = counts.iter().map(|&c| vec![u64::MAX; c as usize]).collect();
    let mut generated = vec![0; counts.len()];
    for _ in 0..reps {
        for (i, slots) in best.iter_mut().enumerate() {
            let mut cache = KexCache::new();
            for slot in slots.iter_mut() {
                *slot = (*slot).min(driver.server_cycles(&mut cache, clock)?);
            }
            generated[i] = cache.generated();
        }
    }
    Ok(counts
        .iter()
        .zip(best)
        .zip(generated)
        .map(|((&c, slots), key_pairs_generated)| {
            let total: u64 = slots.iter().sum();
            HandshakeSeries {
                connections: c,
                per_conn: total as f64 / c as f64,
                total,
                key_pairs_generated,
                per_position: slots,
            }
        })
        .collect())
}

/// Per-insert cycles while filling one fresh table, with the resize points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InsertTrace {
    pub cycles: Vec<u64>,
    /// Whether insert `i` (0-based) triggered a resize.
    pub resized: Vec<bool>,
    /// Capacity after insert `i`.
    pub capacity: Vec<usize>,
}

pub fn insert_trace(n: usize, clock: &CycleClock, seed: u64) -> Result<InsertTrace, BenchError> {
    let keys = random_keys(n, seed);
    let mut table = StateTable::new();
    let mut trace = InsertTrace {
        cycles: Vec::with_capacity(n),
        resized: Vec::with_capacity(n),
        capacity: Vec::with_capacity(n),
    };
    for (i, k) in keys.into_iter().enumerate() {
        let before = table.resize_count();
        let t0 = clock.now();
        table.insert(black_box(k), i as u32)?;
        let t1 = clock.now();
        trace.cycles.push(t1 - t0);
        trace.resized.push(table.resize_count() != before);
        trace.capacity.push(table.capacity());
    }
    Ok(trace)
}

/// Average cycles per insert when filling a fresh table with `c` keys;
/// the smallest of `reps` fills.
pub fn insert_average(c: usize, reps: u32, clock: &CycleClock, seed: u64) -> Result<f64, BenchError> {
    if c == 0 || reps == 0 {
        return Err(BenchError::Config("connections and repetitions must be positive".into()));
    }
    let keys = random_keys(c, seed);
    let mut best = u64::MAX;
    for _ in 0..reps {
        let mut table = StateTable::new();
        let t0 = clock.now();
        for (i, k) in keys.iter().enumerate() {
            table.insert(black_box(*k), i as u32)?;
        }
        let t1 = clock.now();
        best = best.min(t1 - t0);
        drop(black_box(table));
    }
    Ok(best as f64 / c as f64)
}

/// A fixed busy loop for clock sanity checks.
pub fn spin(iterations: u64) -> u64 {
    let mut x = 0u64;
    for i in 0..iterations {
        x = black_box(x.wrapping_mul(6364136223846793005).wrapping_add(i));
    }
    x
}
