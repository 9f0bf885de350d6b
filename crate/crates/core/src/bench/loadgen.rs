//! Closed-loop echo load generator.
//!
//! Each connection handshakes with the gateway, then sends application
//! records whose plaintext is an 8-byte big-endian packet id followed by
//! filler derived from the id. Every echo is decrypted and checked; a wrong
//! echo aborts the run. An echo that has not come back within the echo
//! timeout counts as lost.
//!
//! Two modes: realtime against any running gateway over real transports, and
//! a single-threaded simulation in virtual time where one worker serves a
//! bounded receive queue at a configured capacity.

use std::collections::VecDeque;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, SocketAddrV4};
use std::time::{Duration, Instant};

use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::{BenchError, BlackboxPoint};
use crate::gateway::{GatewayConfig, Worker, WorkerStats};
use crate::packet_io::UdpTransport;
use crate::packet_io::{Datagram, LoopbackNet, QueueConfig, Transport};
use crate::secure_channel::{
    channel_rng, handshake_step, start_client, ChannelConfig, CipherSuite, ConnectionState,
    ContentType, HandshakeCtx, KexCache, KexMethod, Phase, RecordHeader, HEADER_LEN,
    MAX_PLAINTEXT_LEN, TAG_LEN,
};

/// Bytes of packet id at the front of every payload.
pub const ID_LEN: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct LoadgenConfig {
    pub connections: usize,
    /// Plaintext bytes per packet, at least [`ID_LEN`].
    pub payload: usize,
    /// Packets per connection when no rate and duration are given.
    pub packets_per_conn: u64,
    /// Offered packets per second over all connections; `None` sends as
    /// fast as the outstanding window allows.
    pub rate: Option<f64>,
    /// With a rate, the run offers `rate * duration` packets in total and
    /// achieved rates count only echoes that arrive within the offered span.
    pub duration: Option<Duration>,
    pub suite: CipherSuite,
    pub kex: KexMethod,
    pub handshake_timeout: Duration,
    pub echo_timeout: Duration,
    /// Maximum unanswered packets when unpaced.
    pub window: usize,
    pub seed: Option<u64>,
}

impl Default for LoadgenConfig {
    fn default() -> Self {
        Self {
            connections: 1,
            payload: 500,
            packets_per_conn: 100,
            rate: None,
            duration: None,
            suite: CipherSuite::ChaCha20Poly1305,
            kex: KexMethod::Ecdhe,
            handshake_timeout: Duration::from_secs(5),
            echo_timeout: Duration::from_secs(1),
            window: 256,
            seed: None,
        }
    }
}

impl LoadgenConfig {
    fn check(&self) -> Result<(), BenchError> {
        if self.connections == 0 {
            return Err(BenchError::Config("connections must be at least 1".into()));
        }
        if self.payload < ID_LEN || self.payload > MAX_PLAINTEXT_LEN {
            return Err(BenchError::Config(format!(
                "payload must be between {ID_LEN} and {MAX_PLAINTEXT_LEN} bytes"
            )));
        }
        if let Some(r) = self.rate {
            if !(r.is_finite() && r > 0.0) {
                return Err(BenchError::Config(format!("rate must be positive, got {r}")));
            }
        }
        if self.window == 0 {
            return Err(BenchError::Config("window must be at least 1".into()));
        }
        Ok(())
    }

    fn total_packets(&self, established: usize) -> u64 {
        match (self.rate, self.duration) {
            (Some(r), Some(d)) => (r * d.as_secs_f64()).round() as u64,
            _ => self.packets_per_conn * established as u64,
        }
    }

    /// Bytes on the wire per record, header and tag included.
    pub fn record_len(&self) -> usize {
        HEADER_LEN + self.payload + TAG_LEN
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadgenStats {
    pub requested_connections: usize,
    pub established: usize,
    pub handshake_failures: usize,
    pub sent: u64,
    pub verified: u64,
    pub lost: u64,
    /// Echoes rejected by the replay window.
    pub duplicates: u64,
    /// Datagrams the transport refused or dropped on send.
    pub send_drops: u64,
    pub offered_pps: f64,
    pub achieved_pps: f64,
    /// Verified record bytes per second, in bits.
    pub achieved_bps: f64,
    pub elapsed_secs: f64,
}

/// Deterministic payload for packet `id`.
pub fn fill_payload(id: u64, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&id.to_be_bytes()[..ID_LEN.min(len)]);
    let seed = id.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    for i in ID_LEN..len {
        out.push((seed >> ((i % 8) * 8)) as u8 ^ i as u8);
    }
    out
}

/// Checks an echoed payload and returns its id.
pub fn verify_payload(buf: &[u8], len: usize) -> Result<u64, String> {
    if buf.len() != len {
        return Err(format!("length {} != {len}", buf.len()));
    }
    let id = u64::from_be_bytes(buf[..ID_LEN].try_into().expect("length checked"));
    if fill_payload(id, len) != buf {
        return Err(format!("filler mismatch for id {id}"));
    }
    Ok(id)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Pending(u64),
    Done,
    Lost,
}

struct Client {
    io: Box<dyn Transport>,
    state: ConnectionState,
    failed: bool,
}

/// Client side of every connection plus packet bookkeeping. Time is an
/// abstract u64 (nanoseconds or ticks) supplied by the caller.
struct Clients {
    target: SocketAddr,
    cfg: LoadgenConfig,
    conns: Vec<Client>,
    live: Vec<usize>,
    rng: ChaCha20Rng,
    channel: ChannelConfig,
    cache: KexCache,
    slots: Vec<Slot>,
    order: VecDeque<u64>,
    outstanding: usize,
    stats: LoadgenStats,
    last_echo: u64,
    /// Echoes arriving after this time are verified but not rated.
    window_end: u64,
    in_window: u64,
}

impl Clients {
    fn new(target: SocketAddr, ios: Vec<Box<dyn Transport>>, cfg: &LoadgenConfig) -> Self {
        let conns = ios
            .into_iter()
            .map(|io| Client {
                io,
                state: ConnectionState::new_client(cfg.suite, cfg.kex),
                failed: false,
            })
            .collect();
        Self {
            target,
            cfg: cfg.clone(),
            conns,
            live: Vec::new(),
            rng: channel_rng(cfg.seed),
            channel: ChannelConfig {
                suites: vec![cfg.suite],
                kex: cfg.kex,
                reuse_kex: true,
            },
            cache: KexCache::new(),
            slots: Vec::new(),
            order: VecDeque::new(),
            outstanding: 0,
            stats: LoadgenStats {
                requested_connections: cfg.connections,
                ..LoadgenStats::default()
            },
            last_echo: 0,
            window_end: u64::MAX,
            in_window: 0,
        }
    }

    fn send_one(&mut self, conn: usize, record: Vec<u8>) -> Result<bool, BenchError> {
        let mut out = vec![Datagram::new(record, self.target)];
        Ok(self.conns[conn].io.tx_batch(&mut out)? == 1)
    }

    fn begin_handshakes(&mut self) -> Result<(), BenchError> {
        for i in 0..self.conns.len() {
            let ch = start_client(&mut self.conns[i].state, &mut self.rng)?;
            if !self.send_one(i, ch)? {
                self.conns[i].failed = true;
            }
        }
        Ok(())
    }

    /// Feeds handshake replies to clients. Returns true when every
    /// connection has either finished or failed.
    fn pump_handshakes(&mut self) -> Result<bool, BenchError> {
        let mut pending = false;
        for i in 0..self.conns.len() {
            let c = &mut self.conns[i];
            if c.failed || c.state.phase() == Phase::Established {
                continue;
            }
            for d in c.io.rx_batch(16)? {
                if d.peer != self.target {
                    continue;
                }
                let Ok((hdr, body)) = RecordHeader::parse(&d.payload) else {
                    continue;
                };
                if hdr.content_type != ContentType::Handshake {
                    continue;
                }
                let mut ctx = HandshakeCtx {
                    cfg: &self.channel,
                    rng: &mut self.rng,
                    keys: &mut self.cache,
                };
                match handshake_step(&mut c.state, body, &mut ctx) {
                    Ok(out) => {
                        for rec in out.records {
                            let mut q = vec![Datagram::new(rec, self.target)];
                            c.io.tx_batch(&mut q)?;
                        }
                    }
                    Err(_) => {
                        c.failed = true;
                        break;
                    }
                }
            }
            if !c.failed && c.state.phase() == Phase::Closed {
                c.failed = true;
            }
            pending |= !c.failed && c.state.phase() != Phase::Established;
        }
        Ok(!pending)
    }

    fn finish_handshakes(&mut self) -> Result<(), BenchError> {
        self.live = (0..self.conns.len())
            .filter(|&i| !self.conns[i].failed && self.conns[i].state.phase() == Phase::Established)
            .collect();
        self.stats.established = self.live.len();
        self.stats.handshake_failures = self.conns.len() - self.live.len();
        if self.live.is_empty() {
            return Err(BenchError::NoConnections {
                requested: self.conns.len(),
            });
        }
        Ok(())
    }

    fn conn_for(&self, id: u64) -> usize {
        self.live[(id % self.live.len() as u64) as usize]
    }

    fn send_packet(&mut self, id: u64, now: u64) -> Result<(), BenchError> {
        let conn = self.conn_for(id);
        let rec = self.conns[conn].state.seal(&fill_payload(id, self.cfg.payload))?;
        self.stats.sent += 1;
        if self.send_one(conn, rec)? {
            self.slots.push(Slot::Pending(now));
            self.order.push_back(id);
            self.outstanding += 1;
        } else {
            self.slots.push(Slot::Lost);
            self.stats.send_drops += 1;
        }
        Ok(())
    }

    /// Drains every live connection. Returns the echoes verified.
    fn receive(&mut self, now: u64) -> Result<usize, BenchError> {
        let mut got = 0;
        for pos in 0..self.live.len() {
            let conn = self.live[pos];
            loop {
                let batch = self.conns[conn].io.rx_batch(64)?;
                if batch.is_empty() {
                    break;
                }
                for d in batch {
                    if d.peer != self.target {
                        continue;
                    }
                    match RecordHeader::parse(&d.payload) {
                        Ok((hdr, _)) if hdr.content_type == ContentType::ApplicationData => {}
                        _ => continue,
                    }
                    let plain = match self.conns[conn].state.open(&d.payload) {
                        Ok(p) => p,
                        Err(crate::secure_channel::ChannelError::ReplayRejected { .. }) => {
                            self.stats.duplicates += 1;
                            continue;
                        }
                        Err(e) => {
                            return Err(BenchError::Verification {
                                conn,
                                reason: e.to_string(),
                            })
                        }
                    };
                    let id = verify_payload(&plain, self.cfg.payload)
                        .map_err(|reason| BenchError::Verification { conn, reason })?;
                    if id as usize >= self.slots.len() || self.conn_for(id) != conn {
                        return Err(BenchError::Verification {
                            conn,
                            reason: format!("echo of id {id} on the wrong connection"),
                        });
                    }
                    if let Slot::Pending(_) = self.slots[id as usize] {
                        self.slots[id as usize] = Slot::Done;
                        self.outstanding -= 1;
                        self.stats.verified += 1;
                        self.last_echo = now;
                        if now <= self.window_end {
                            self.in_window += 1;
                        }
                        got += 1;
                    }
                }
            }
        }
        Ok(got)
    }

    /// Marks packets older than `timeout` as lost.
    fn expire(&mut self, now: u64, timeout: u64) {
        while let Some(&id) = self.order.front() {
            match self.slots[id as usize] {
                Slot::Pending(t) if now.saturating_sub(t) > timeout => {
                    self.slots[id as usize] = Slot::Lost;
                    self.outstanding -= 1;
                    self.order.pop_front();
                }
                Slot::Pending(_) => break,
                _ => {
                    self.order.pop_front();
                }
            }
        }
    }

    /// `span_secs` is the offered span with a rate, else the time of the
    /// last echo.
    fn finish(mut self, span_secs: f64, elapsed_secs: f64) -> LoadgenStats {
        let rated = self.in_window;
        let s = &mut self.stats;
        s.lost = s.sent - s.verified;
        s.elapsed_secs = elapsed_secs;
        s.offered_pps = match self.cfg.rate {
            Some(r) => r,
            None if span_secs > 0.0 => s.sent as f64 / span_secs,
            None => 0.0,
        };
        if span_secs > 0.0 {
            s.achieved_pps = rated as f64 / span_secs;
            s.achieved_bps = s.achieved_pps * self.cfg.record_len() as f64 * 8.0;
        }
        for c in &mut self.conns {
            s.send_drops += c.io.counters().drops;
        }
        self.stats
    }
}

/// Runs against a live gateway at `target`, one transport per connection.
pub fn run_loadgen(
    target: SocketAddr,
    clients: Vec<Box<dyn Transport>>,
    cfg: &LoadgenConfig,
) -> Result<LoadgenStats, BenchError> {
    cfg.check()?;
    if clients.len() != cfg.connections {
        return Err(BenchError::Config(format!(
            "{} transports for {} connections",
            clients.len(),
            cfg.connections
        )));
    }
    let mut cl = Clients::new(target, clients, cfg);
    let begin = Instant::now();
    cl.begin_handshakes()?;
    while !cl.pump_handshakes()? {
        if begin.elapsed() > cfg.handshake_timeout {
            break;
        }
        std::thread::yield_now();
    }
    cl.finish_handshakes()?;

    let total = cfg.total_packets(cl.live.len());
    if let Some(r) = cfg.rate {
        cl.window_end = (total as f64 / r * 1e9) as u64;
    }
    let timeout = cfg.echo_timeout.as_nanos() as u64;
    let start = Instant::now();
    let mut next = 0u64;
    loop {
        let now = start.elapsed().as_nanos() as u64;
        let mut progressed = false;
        let mut burst = 0;
        while next < total && burst < 64 {
            match cfg.rate {
                Some(r) if next as f64 / r * 1e9 > now as f64 => break,
                None if cl.outstanding >= cfg.window => break,
                _ => {}
            }
            cl.send_packet(next, now)?;
            next += 1;
            burst += 1;
            progressed = true;
        }
        progressed |= cl.receive(now)? > 0;
        cl.expire(now, timeout);
        if next == total && cl.outstanding == 0 {
            break;
        }
        if !progressed {
            std::thread::yield_now();
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let span = match cfg.rate {
        Some(r) => total as f64 / r,
        None => cl.last_echo as f64 / 1e9,
    };
    Ok(cl.finish(span, elapsed))
}

/// How much work the simulated worker may do per unit of virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ServiceCapacity {
    /// Drain the queue completely every tick.
    Unlimited,
    /// Serve at most this many datagrams per second.
    Packets(f64),
}

#[derive(Debug, Clone)]
pub struct SimTarget {
    pub gateway: GatewayConfig,
    pub capacity: ServiceCapacity,
    /// Gateway receive queue; arrivals beyond it are dropped.
    pub queue_capacity: usize,
    pub tick: Duration,
}

impl SimTarget {
    pub fn new(gateway: GatewayConfig, capacity: ServiceCapacity) -> Self {
        Self {
            gateway,
            capacity,
            queue_capacity: 4096,
            tick: Duration::from_millis(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub stats: LoadgenStats,
    pub worker: WorkerStats,
    /// Arrivals dropped at the gateway's full receive queue.
    pub queue_drops: u64,
}

const SIM_GATEWAY: SocketAddr = SocketAddr::V4(SocketAddrV4::new(Ipv4Addr::new(10, 0, 0, 1), 4433));

fn sim_client_addr(i: usize) -> SocketAddr {
    SocketAddr::V4(SocketAddrV4::new(
        Ipv4Addr::from(0x0A01_0000u32 + i as u32 + 1),
        40000 + (i % 20000) as u16,
    ))
}

/// Runs the load in virtual time against one in-process worker.
pub fn run_sim(target: &SimTarget, cfg: &LoadgenConfig) -> Result<SimOutcome, BenchError> {
    cfg.check()?;
    if target.queue_capacity == 0 || target.tick.is_zero() {
        return Err(BenchError::Config("queue capacity and tick must be positive".into()));
    }
    if let ServiceCapacity::Packets(p) = target.capacity {
        if !(p.is_finite() && p > 0.0) {
            return Err(BenchError::Config(format!("service capacity must be positive, got {p}")));
        }
    }
    let net = LoopbackNet::new();
    let ep = net.bind(SIM_GATEWAY, QueueConfig::bounded(target.queue_capacity, true))?;
    let mut worker = Worker::new(0, Box::new(ep), &target.gateway);
    let mut ios: Vec<Box<dyn Transport>> = Vec::with_capacity(cfg.connections);
    for i in 0..cfg.connections {
        ios.push(Box::new(net.bind(sim_client_addr(i), QueueConfig::default())?));
    }
    let mut cl = Clients::new(SIM_GATEWAY, ios, cfg);

    let drain = |w: &mut Worker| -> Result<(), BenchError> {
        while w.poll()? > 0 {}
        Ok(())
    };
    cl.begin_handshakes()?;
    for _ in 0..16 {
        drain(&mut worker)?;
        if cl.pump_handshakes()? {
            break;
        }
    }
    drain(&mut worker)?;
    cl.finish_handshakes()?;

    let tick_secs = target.tick.as_secs_f64();
    let timeout = (cfg.echo_timeout.as_secs_f64() / tick_secs).ceil() as u64;
    let total = cfg.total_packets(cl.live.len());
    if let Some(r) = cfg.rate {
        cl.window_end = (total as f64 / r / tick_secs).ceil() as u64;
    }
    let (mut arrivals, mut budget) = (0.0f64, 0.0f64);
    let mut next = 0u64;
    let mut tick = 0u64;
    loop {
        match cfg.rate {
            Some(r) => {
                arrivals += r * tick_secs;
                while next < total && arrivals >= 1.0 {
                    cl.send_packet(next, tick)?;
                    next += 1;
                    arrivals -= 1.0;
                }
            }
            None => {
                while next < total && cl.outstanding < cfg.window {
                    cl.send_packet(next, tick)?;
                    next += 1;
                }
            }
        }
        match target.capacity {
            ServiceCapacity::Unlimited => drain(&mut worker)?,
            ServiceCapacity::Packets(p) => {
                budget += p * tick_secs;
                let mut allowance = budget.floor() as usize;
                while allowance > 0 {
                    let n = worker.poll_max(allowance)?;
                    if n == 0 {
                        break;
                    }
                    allowance -= n;
                    budget -= n as f64;
                }
                if net.queued(SIM_GATEWAY) == 0 {
                    budget = budget.fract();
                }
            }
        }
        tick += 1;
        cl.receive(tick)?;
        cl.expire(tick, timeout);
        if next == total && cl.outstanding == 0 {
            break;
        }
    }
    let span = match cfg.rate {
        Some(r) => total as f64 / r,
        None => cl.last_echo as f64 * tick_secs,
    };
    let queue_drops = cl.conns.iter().map(|c| c.io.counters().drops).sum();
    // Virtual time throughout, so runs with one seed report identically.
    let stats = cl.finish(span, tick as f64 * tick_secs);
    Ok(SimOutcome {
        stats,
        worker: worker.stats().clone(),
        queue_drops,
    })
}

/// Makes client transports for realtime runs.
#[derive(Clone)]
pub enum ClientFactory {
    /// Endpoints on an in-memory network, addresses counting up from `base`.
    Loopback { net: LoopbackNet, base: Ipv4Addr },
    /// OS sockets on ephemeral ports of `bind`.
    Udp { bind: IpAddr },
}

impl ClientFactory {
    /// `round` keeps addresses distinct between successive runs.
    pub fn make(&self, count: usize, round: usize) -> Result<Vec<Box<dyn Transport>>, BenchError> {
        let mut out: Vec<Box<dyn Transport>> = Vec::with_capacity(count);
        for i in 0..count {
            match self {
                ClientFactory::Loopback { net, base } => {
                    let ip = Ipv4Addr::from(u32::from(*base).wrapping_add(i as u32 + 1));
                    let port = 20000 + (round % 40000) as u16;
                    let addr = SocketAddr::V4(SocketAddrV4::new(ip, port));
                    out.push(Box::new(net.bind(addr, QueueConfig::default())?));
                }
                ClientFactory::Udp { bind } => {
                    out.push(Box::new(UdpTransport::bind(&SocketAddr::new(*bind, 0).to_string())?));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone)]
pub enum LoadTarget {
    Sim(SimTarget),
    Remote { addr: SocketAddr, clients: ClientFactory },
}

/// One run at the configured rate, fresh connections each time.
pub fn run_target(target: &LoadTarget, cfg: &LoadgenConfig, round: usize) -> Result<LoadgenStats, BenchError> {
    match target {
        LoadTarget::Sim(sim) => Ok(run_sim(sim, cfg)?.stats),
        LoadTarget::Remote { addr, clients } => {
            cfg.check()?;
            run_loadgen(*addr, clients.make(cfg.connections, round)?, cfg)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Sweep {
    pub points: Vec<BlackboxPoint>,
    /// Rates whose run failed, with the reason.
    pub failures: Vec<(f64, String)>,
}

/// Offers each rate in turn for `cfg.duration` (default one second).
/// A failed rate is recorded and skipped; a verification failure aborts.
pub fn blackbox_sweep(target: &LoadTarget, rates: &[f64], cfg: &LoadgenConfig) -> Result<Sweep, BenchError> {
    if rates.is_empty() {
        return Err(BenchError::Config("no rates to sweep".into()));
    }
    if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) || rates.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::Config("rates must be positive and strictly ascending".into()));
    }
    let mut sweep = Sweep::default();
    for (round, &rate) in rates.iter().enumerate() {
        let run = LoadgenConfig {
            rate: Some(rate),
            duration: Some(cfg.duration.unwrap_or(Duration::from_secs(1))),
            ..cfg.clone()
        };
        match run_target(target, &run, round) {
            Ok(s) => sweep.points.push(BlackboxPoint {
                offered_pps: rate,
                achieved_pps: s.achieved_pps,
                achieved_bps: s.achieved_bps,
            }),
            Err(e @ BenchError::Verification { .. }) | Err(e @ BenchError::Config(_)) => return Err(e),
            Err(e) => sweep.failures.push((rate, e.to_string())),
        }
    }
    Ok(sweep)
}
