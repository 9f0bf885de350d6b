//! The echo gateway: receive, key the flow, look up its state, dispatch on the
//! connection phase, open and re-seal application records, transmit.
//!
//! With one worker the worker owns the transport directly. With more, a
//! dispatcher thread owns it and hands datagrams to share-nothing workers
//! over bounded queues, keyed by `flow_key mod n`.

mod worker;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

pub use worker::{run_worker, DropCounters, StageCycles, Worker, WorkerStats};

use crate::bench::CycleClock;
use crate::flow_hash::{extract_five_tuple, flow_key, FlowKey, HashKey};
use crate::packet_io::{ChannelTransport, Datagram, IoError, Transport, DEFAULT_BATCH};
use crate::secure_channel::ChannelConfig;

/// Depth of each dispatcher-to-worker queue.
pub const DEFAULT_QUEUE_DEPTH: usize = 4096;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("worker thread panicked")]
    WorkerPanicked,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub channel: ChannelConfig,
    pub hash_key: HashKey,
    pub workers: usize,
    pub batch: usize,
    pub max_connections: Option<usize>,
    /// Stage instrumentation; `None` skips every clock read.
    pub clock: Option<CycleClock>,
    pub seed: Option<u64>,
    pub queue_depth: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            hash_key: HashKey::random(),
            workers: 1,
            batch: DEFAULT_BATCH,
            max_connections: None,
            clock: None,
            seed: None,
            queue_depth: DEFAULT_QUEUE_DEPTH,
        }
    }
}

/// Worker index for a flow: `key mod n`.
pub fn dispatch(key: FlowKey, n: usize) -> usize {
    assert!(n >= 1, "worker count must be at least 1");
    (key.0 % n as u64) as usize
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct DispatcherStats {
    pub rx_packets: u64,
    pub forwarded: u64,
    pub queue_full: u64,
    pub not_ipv4: u64,
    pub tx_packets: u64,
    pub tx_refused: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub workers: Vec<WorkerStats>,
    pub dispatcher: Option<DispatcherStats>,
}

impl GatewayStats {
    /// Sum over workers.
    pub fn total(&self) -> WorkerStats {
        let mut t = WorkerStats::default();
        for w in &self.workers {
            t.merge(w);
        }
        t
    }
}

/// A running gateway; stop it to collect statistics.
pub struct Gateway {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<WorkerStats>>,
    dispatcher: Option<JoinHandle<DispatcherStats>>,
}

impl Gateway {
    pub fn start(io: Box<dyn Transport>, cfg: GatewayConfig) -> Result<Self, GatewayError> {
        if cfg.workers == 0 {
            return Err(GatewayError::NoWorkers);
        }
        let local = io.local_addr();
        let stop = Arc::new(AtomicBool::new(false));

        if cfg.workers == 1 {
            let mut worker = Worker::new(0, io, &cfg);
            let flag = Arc::clone(&stop);
            let handle = std::thread::Builder::new()
                .name("gw-worker-0".into())
                .spawn(move || run_worker(&mut worker, &flag))
                .map_err(|e| GatewayError::Io(IoError::Os(e)))?;
            return Ok(Self {
                local,
                stop,
                workers: vec![handle],
                dispatcher: None,
            });
        }

        let mut to_workers = Vec::with_capacity(cfg.workers);
        let mut from_workers = Vec::with_capacity(cfg.workers);
        let mut workers = Vec::with_capacity(cfg.workers);
        for id in 0..cfg.workers {
            let (in_tx, in_rx) = sync_channel(cfg.queue_depth);
            let (out_tx, out_rx) = sync_channel(cfg.queue_depth);
            to_workers.push(in_tx);
            from_workers.push(out_rx);
            let mut worker = Worker::new(id, Box::new(ChannelTransport::new(local, in_rx, out_tx)), &cfg);
            let flag = Arc::clone(&stop);
            workers.push(
                std::thread::Builder::new()
                    .name(format!("gw-worker-{id}"))
                    .spawn(move || run_worker(&mut worker, &flag))
                    .map_err(|e| GatewayError::Io(IoError::Os(e)))?,
            );
        }
        let flag = Arc::clone(&stop);
        let (hash_key, batch) = (cfg.hash_key, cfg.batch.max(1));
        let dispatcher = std::thread::Builder::new()
            .name("gw-dispatch".into())
            .spawn(move || run_dispatcher(io, hash_key, batch, to_workers, from_workers, &flag))
            .map_err(|e| GatewayError::Io(IoError::Os(e)))?;
        Ok(Self {
            local,
            stop,
            workers,
            dispatcher: Some(dispatcher),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    /// Signals every thread to stop, joins them and returns their statistics.
    pub fn stop(mut self) -> Result<GatewayStats, GatewayError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<GatewayStats, GatewayError> {
        self.stop.store(true, Ordering::Relaxed);
        let dispatcher = match self.dispatcher.take() {
            Some(h) => Some(h.join().map_err(|_| GatewayError::WorkerPanicked)?),
            None => None,
        };
        let mut workers = Vec::new();
        for h in self.workers.drain(..) {
            workers.push(h.join().map_err(|_| GatewayError::WorkerPanicked)?);
        }
        Ok(GatewayStats {
            workers,
            dispatcher,
        })
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        if !self.workers.is_empty() || self.dispatcher.is_some() {
            let _ = self.shutdown();
        }
    }
}

fn run_dispatcher(
    mut io: Box<dyn Transport>,
    hash_key: HashKey,
    batch: usize,
    to_workers: Vec<SyncSender<Datagram>>,
    from_workers: Vec<Receiver<Datagram>>,
    stop: &AtomicBool,
) -> DispatcherStats {
    let n = to_workers.len();
    let local = io.local_addr();
    let mut stats = DispatcherStats::default();
    let mut out = Vec::new();
    let mut idle = 0u32;
    while !stop.load(Ordering::Relaxed) {
        let inbound = match io.rx_batch(batch) {
            Ok(b) => b,
            Err(_) => break,
        };
        let mut moved = inbound.len();
        for dgram in inbound {
            stats.rx_packets += 1;
            let Ok(tuple) = extract_five_tuple(dgram.peer, local) else {
                stats.not_ipv4 += 1;
                continue;
            };
            let idx = dispatch(flow_key(hash_key, &tuple), n);
            match to_workers[idx].try_send(dgram) {
                Ok(()) => stats.forwarded += 1,
                Err(TrySendError::Full(_)) | Err(TrySendError::Disconnected(_)) => {
                    stats.queue_full += 1
                }
            }
        }
        for rx in &from_workers {
            while let Ok(d) = rx.try_recv() {
                out.push(d);
            }
        }
        if !out.is_empty() {
            moved += out.len();
            let queued = out.len();
            match io.tx_batch(&mut out) {
                Ok(accepted) => {
                    stats.tx_packets += accepted as u64;
                    stats.tx_refused += (queued - accepted) as u64;
                }
                Err(_) => break,
            }
            out.clear();
        }
        if moved == 0 {
            idle += 1;
            if idle < 64 {
                std::thread::yield_now();
            } else {
                std::thread::sleep(Duration::from_micros(50));
            }
        } else {
            idle = 0;
        }
    }
    stats
}
