use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::bench::{CycleClock, StageKind};
use crate::flow_hash::{extract_five_tuple, flow_key, FlowKey, HashKey};
use crate::packet_io::{Datagram, IoError, Transport};
use crate::secure_channel::{
    channel_rng, handshake_step, ChannelConfig, ChannelError, ConnectionState, ContentType,
    HandshakeCtx, KexCache, Phase, RecordHeader,
};
use crate::state_table::StateTable;

use super::GatewayConfig;

/// Why a datagram produced no response.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DropCounters {
    pub malformed: u64,
    pub auth_failed: u64,
    pub replay: u64,
    /// Non-handshake traffic from a flow with no state.
    pub unknown_flow: u64,
    /// Application data on a flow still in its handshake.
    pub not_established: u64,
    pub handshake_failed: u64,
    /// Handshake messages that did not fit the flow's phase.
    pub ignored: u64,
    pub table_full: u64,
    pub not_ipv4: u64,
    pub tx_refused: u64,
    pub closed: u64,
}

impl DropCounters {
    pub fn total(&self) -> u64 {
        self.malformed
            + self.auth_failed
            + self.replay
            + self.unknown_flow
            + self.not_established
            + self.handshake_failed
            + self.ignored
            + self.table_full
            + self.not_ipv4
            + self.tx_refused
            + self.closed
    }

    fn add(&mut self, o: &DropCounters) {
        self.malformed += o.malformed;
        self.auth_failed += o.auth_failed;
        self.replay += o.replay;
        self.unknown_flow += o.unknown_flow;
        self.not_established += o.not_established;
        self.handshake_failed += o.handshake_failed;
        self.ignored += o.ignored;
        self.table_full += o.table_full;
        self.not_ipv4 += o.not_ipv4;
        self.tx_refused += o.tx_refused;
        self.closed += o.closed;
    }
}

/// Cycles and operation counts attributed to each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCycles {
    pub cycles: [u64; StageKind::COUNT],
    pub ops: [u64; StageKind::COUNT],
}

impl StageCycles {
    pub fn get(&self, stage: StageKind) -> u64 {
        self.cycles[stage.index()]
    }

    pub fn ops(&self, stage: StageKind) -> u64 {
        self.ops[stage.index()]
    }

    pub fn sum(&self) -> u64 {
        self.cycles.iter().sum()
    }

    #[inline]
    fn record(&mut self, stage: StageKind, cycles: u64) {
        self.cycles[stage.index()] += cycles;
        self.ops[stage.index()] += 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct WorkerStats {
    pub worker: usize,
    pub rx_packets: u64,
    pub rx_bytes: u64,
    pub tx_packets: u64,
    pub tx_bytes: u64,
    /// Application records opened and re-sealed.
    pub echoed: u64,
    pub payload_bytes: u64,
    pub handshakes: u64,
    pub established: u64,
    pub batches: u64,
    pub drops: DropCounters,
    pub stages: StageCycles,
    /// Cycles from the start of each non-empty receive to the end of its transmit.
    pub busy_cycles: u64,
}

impl WorkerStats {
    pub fn merge(&mut self, o: &WorkerStats) {
        self.rx_packets += o.rx_packets;
        self.rx_bytes += o.rx_bytes;
        self.tx_packets += o.tx_packets;
        self.tx_bytes += o.tx_bytes;
        self.echoed += o.echoed;
        self.payload_bytes += o.payload_bytes;
        self.handshakes += o.handshakes;
        self.established += o.established;
        self.batches += o.batches;
        self.drops.add(&o.drops);
        for i in 0..StageKind::COUNT {
            self.stages.cycles[i] += o.stages.cycles[i];
            self.stages.ops[i] += o.stages.ops[i];
        }
        self.busy_cycles += o.busy_cycles;
    }
}

type Handler = fn(&mut Worker, FlowKey, u32, &Datagram, &mut Vec<Datagram>);

/// Phase-indexed handlers: the function table.
const FUNCTION_TABLE: [Handler; 4] = [
    Worker::on_handshake,   // AwaitingHello
    Worker::on_handshake,   // AwaitingFinished
    Worker::on_established, // Established
    Worker::on_closed,      // Closed
];

/// One share-nothing pipeline: its own transport, table and connections.
pub struct Worker {
    id: usize,
    io: Box<dyn Transport>,
    local: SocketAddr,
    hash_key: HashKey,
    table: StateTable<u32>,
    conns: Vec<Option<ConnectionState>>,
    free: Vec<u32>,
    functions: [Handler; 4],
    channel: ChannelConfig,
    kex: KexCache,
    rng: ChaCha20Rng,
    max_connections: Option<usize>,
    batch: usize,
    clock: Option<CycleClock>,
    stats: WorkerStats,
    out: Vec<Datagram>,
}

impl Worker {
    pub fn new(id: usize, io: Box<dyn Transport>, cfg: &GatewayConfig) -> Self {
        let local = io.local_addr();
        let seed = cfg
            .seed
            .map(|s| s ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        Self {
            id,
            io,
            local,
            hash_key: cfg.hash_key,
            table: StateTable::new(),
            conns: Vec::new(),
            free: Vec::new(),
            functions: FUNCTION_TABLE,
            channel: cfg.channel.clone(),
            kex: KexCache::new(),
            rng: channel_rng(seed),
            max_connections: cfg.max_connections,
            batch: cfg.batch.max(1),
            clock: cfg.clock,
            stats: WorkerStats {
                worker: id,
                ..WorkerStats::default()
            },
            out: Vec::new(),
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn stats(&self) -> &WorkerStats {
        &self.stats
    }

    pub fn table(&self) -> &StateTable<u32> {
        &self.table
    }

    pub fn connection_count(&self) -> usize {
        self.table.len()
    }

    pub fn kex_generated(&self) -> u64 {
        self.kex.generated()
    }

    pub fn connection(&self, key: FlowKey) -> Option<&ConnectionState> {
        let h = *self.table.lookup(key)?;
        self.conns[h as usize].as_ref()
    }

    pub fn transport(&self) -> &dyn Transport {
        self.io.as_ref()
    }

    pub fn close_transport(&mut self) {
        self.io.close();
    }

    /// Explicit teardown; returns whether the flow existed.
    pub fn remove_flow(&mut self, key: FlowKey) -> bool {
        match self.table.lookup(key).copied() {
            Some(h) => {
                self.release(key, h);
                true
            }
            None => false,
        }
    }

    #[inline]
    fn now(&self) -> u64 {
        match &self.clock {
            Some(c) => c.now(),
            None => 0,
        }
    }

    #[inline]
    fn charge(&mut self, stage: StageKind, start: u64) -> u64 {
        let t = self.now();
        if self.clock.is_some() {
            self.stats.stages.record(stage, t.saturating_sub(start));
        }
        t
    }

    /// Runs the pipeline on one datagram and returns its responses.
    pub fn process_packet(&mut self, dgram: Datagram) -> Vec<Datagram> {
        let mut out = Vec::new();
        self.stats.rx_packets += 1;
        self.stats.rx_bytes += dgram.payload.len() as u64;
        self.process_into(&dgram, &mut out);
        out
    }

    fn process_into(&mut self, dgram: &Datagram, out: &mut Vec<Datagram>) {
        let t0 = self.now();
        let tuple = match extract_five_tuple(dgram.peer, self.local) {
            Ok(t) => t,
            Err(_) => {
                self.stats.drops.not_ipv4 += 1;
                return;
            }
        };
        let key = flow_key(self.hash_key, &tuple);
        let t1 = self.charge(StageKind::Hash, t0);
        let handle = self.table.lookup(key).copied();
        self.charge(StageKind::TableLookup, t1);

        match handle {
            Some(h) => {
                let phase = self.conns[h as usize]
                    .as_ref()
                    .map_or(Phase::Closed, |c| c.phase());
                (self.functions[phase as usize])(self, key, h, dgram, out);
            }
            None => self.on_new_flow(key, dgram, out),
        }
    }

    fn on_new_flow(&mut self, key: FlowKey, dgram: &Datagram, out: &mut Vec<Datagram>) {
        let payload = &dgram.payload;
        let body = match RecordHeader::parse(payload) {
            Ok((h, body)) if h.content_type == ContentType::Handshake => body,
            _ => {
                self.stats.drops.unknown_flow += 1;
                return;
            }
        };
        if self
            .max_connections
            .is_some_and(|max| self.table.len() >= max)
        {
            self.stats.drops.table_full += 1;
            return;
        }

        let t0 = self.now();
        let mut conn = ConnectionState::new_server(self.channel.kex);
        let t1 = self.charge(StageKind::StateAlloc, t0);
        let mut ctx = HandshakeCtx {
            cfg: &self.channel,
            rng: &mut self.rng,
            keys: &mut self.kex,
        };
        let result = handshake_step(&mut conn, body, &mut ctx);
        let t2 = self.charge(StageKind::Handshake, t1);
        let replies = match result {
            Ok(r) if !r.ignored => r.records,
            Ok(_) => {
                self.stats.drops.ignored += 1;
                return;
            }
            Err(_) => {
                self.stats.drops.handshake_failed += 1;
                return;
            }
        };

        let h = match self.free.pop() {
            Some(h) => {
                self.conns[h as usize] = Some(conn);
                h
            }
            None => {
                self.conns.push(Some(conn));
                (self.conns.len() - 1) as u32
            }
        };
        let inserted = self.table.insert(key, h);
        self.charge(StageKind::TableInsert, t2);
        if inserted.is_err() {
            self.conns[h as usize] = None;
            self.free.push(h);
            self.stats.drops.table_full += 1;
            return;
        }
        self.stats.handshakes += 1;
        out.extend(replies.into_iter().map(|r| Datagram::new(r, dgram.peer)));
    }

    fn on_handshake(&mut self, key: FlowKey, h: u32, dgram: &Datagram, out: &mut Vec<Datagram>) {
        let body = match RecordHeader::parse(&dgram.payload) {
            Ok((hdr, body)) if hdr.content_type == ContentType::Handshake => body,
            Ok(_) => {
                self.stats.drops.not_established += 1;
                return;
            }
            Err(_) => {
                self.stats.drops.malformed += 1;
                return;
            }
        };
        let t0 = self.now();
        let conn = self.conns[h as usize].as_mut().expect("live handle");
        let was_established = conn.phase() == Phase::Established;
        let mut ctx = HandshakeCtx {
            cfg: &self.channel,
            rng: &mut self.rng,
            keys: &mut self.kex,
        };
        let result = handshake_step(conn, body, &mut ctx);
        let phase = conn.phase();
        self.charge(StageKind::Handshake, t0);
        match result {
            Ok(r) if r.ignored => self.stats.drops.ignored += 1,
            Ok(r) => {
                if !was_established && phase == Phase::Established {
                    self.stats.established += 1;
                }
                out.extend(r.records.into_iter().map(|rec| Datagram::new(rec, dgram.peer)));
            }
            Err(_) => {
                self.stats.drops.handshake_failed += 1;
                if phase == Phase::Closed {
                    self.release(key, h);
                }
            }
        }
    }

    fn on_established(&mut self, key: FlowKey, h: u32, dgram: &Datagram, out: &mut Vec<Datagram>) {
        if dgram.payload.first() == Some(&(ContentType::Handshake as u8)) {
            return self.on_handshake(key, h, dgram, out);
        }
        let t0 = self.now();
        let conn = self.conns[h as usize].as_mut().expect("live handle");
        let opened = conn.open(&dgram.payload);
        let t1 = self.charge(StageKind::CryptoOpen, t0);
        let plain = match opened {
            Ok(p) => p,
            Err(ChannelError::AuthenticationFailed) => {
                self.stats.drops.auth_failed += 1;
                return;
            }
            Err(ChannelError::ReplayRejected { .. }) => {
                self.stats.drops.replay += 1;
                return;
            }
            Err(_) => {
                self.stats.drops.malformed += 1;
                return;
            }
        };
        let conn = self.conns[h as usize].as_mut().expect("live handle");
        let sealed = conn.seal(&plain);
        self.charge(StageKind::CryptoSeal, t1);
        match sealed {
            Ok(rec) => {
                self.stats.echoed += 1;
                self.stats.payload_bytes += plain.len() as u64;
                out.push(Datagram::new(rec, dgram.peer));
            }
            Err(_) => self.stats.drops.malformed += 1,
        }
    }

    fn on_closed(&mut self, _key: FlowKey, _h: u32, _dgram: &Datagram, _out: &mut Vec<Datagram>) {
        self.stats.drops.closed += 1;
    }

    fn release(&mut self, key: FlowKey, h: u32) {
        self.table.remove(key);
        self.conns[h as usize] = None;
        self.free.push(h);
    }

    /// One receive, process, transmit round. Returns the datagrams received.
    pub fn poll(&mut self) -> Result<usize, IoError> {
        self.poll_max(self.batch)
    }

    /// Like [`Worker::poll`] but receives at most `max` datagrams.
    pub fn poll_max(&mut self, max: usize) -> Result<usize, IoError> {
        if max == 0 {
            return Ok(0);
        }
        let t0 = self.now();
        let batch = self.io.rx_batch(max.min(self.batch))?;
        if batch.is_empty() {
            return Ok(0);
        }
        self.charge(StageKind::IoRx, t0);
        let n = batch.len();
        let mut out = std::mem::take(&mut self.out);
        for dgram in &batch {
            self.stats.rx_packets += 1;
            self.stats.rx_bytes += dgram.payload.len() as u64;
            self.process_into(dgram, &mut out);
        }

        let t2 = self.now();
        let queued = out.len();
        let lens: Vec<u64> = out.iter().map(|d| d.payload.len() as u64).collect();
        let sent = self.io.tx_batch(&mut out);
        let t3 = self.charge(StageKind::IoTx, t2);
        out.clear();
        self.out = out;
        let accepted = sent?;
        self.stats.tx_packets += accepted as u64;
        self.stats.tx_bytes += lens[..accepted].iter().sum::<u64>();
        self.stats.drops.tx_refused += (queued - accepted) as u64;

        self.stats.batches += 1;
        if self.clock.is_some() {
            self.stats.busy_cycles += t3.saturating_sub(t0);
        }
        Ok(n)
    }
}

/// Polls until `stop` is set or the transport closes.
pub fn run_worker(worker: &mut Worker, stop: &AtomicBool) -> WorkerStats {
    let mut idle = 0u32;
    while !stop.load(Ordering::Relaxed) {
        match worker.poll() {
            Ok(0) => {
                idle += 1;
                if idle < 64 {
                    std::thread::yield_now();
                } else {
                    std::thread::sleep(Duration::from_micros(50));
                }
            }
            Ok(_) => idle = 0,
            Err(_) => break,
        }
    }
    worker.stats.clone()
}
