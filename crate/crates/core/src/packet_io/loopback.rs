use std::collections::{HashMap, VecDeque};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use super::{check_mtu, monotonic_ns, Datagram, IoCounters, IoError, Transport, DEFAULT_MTU};

/// Receive-queue policy of a loopback endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueConfig {
    /// `None` means unbounded.
    pub capacity: Option<usize>,
    /// When the queue is full, senders drop the excess (and count it) instead
    /// of leaving it in their outgoing batch.
    pub drop_on_full: bool,
}

impl QueueConfig {
    pub fn bounded(capacity: usize, drop_on_full: bool) -> Self {
        Self {
            capacity: Some(capacity),
            drop_on_full,
        }
    }
}

struct Mailbox {
    queue: Mutex<VecDeque<Datagram>>,
    config: QueueConfig,
    open: AtomicBool,
}

/// An in-memory datagram network. Endpoints bind to addresses on it and can
/// reach any other bound endpoint.
#[derive(Clone, Default)]
pub struct LoopbackNet {
    routes: Arc<RwLock<HashMap<SocketAddr, Arc<Mailbox>>>>,
}

impl LoopbackNet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&self, addr: SocketAddr, config: QueueConfig) -> Result<LoopbackEndpoint, IoError> {
        let mut routes = self.routes.write().expect("loopback routes poisoned");
        if routes.contains_key(&addr) {
            return Err(IoError::AddrInUse(addr));
        }
        let mailbox = Arc::new(Mailbox {
            queue: Mutex::new(VecDeque::new()),
            config,
            open: AtomicBool::new(true),
        });
        routes.insert(addr, Arc::clone(&mailbox));
        Ok(LoopbackEndpoint {
            net: self.clone(),
            addr,
            mailbox,
            counters: IoCounters::default(),
            mtu: DEFAULT_MTU,
            open: true,
        })
    }

    /// Two endpoints on a fresh network with unbounded queues.
    pub fn pair(a: SocketAddr, b: SocketAddr) -> (LoopbackEndpoint, LoopbackEndpoint) {
        let net = Self::new();
        let ea = net.bind(a, QueueConfig::default()).expect("fresh network");
        let eb = net.bind(b, QueueConfig::default()).expect("fresh network");
        (ea, eb)
    }

    /// Number of datagrams waiting at `addr`.
    pub fn queued(&self, addr: SocketAddr) -> usize {
        let routes = self.routes.read().expect("loopback routes poisoned");
        routes
            .get(&addr)
            .map(|m| m.queue.lock().expect("mailbox poisoned").len())
            .unwrap_or(0)
    }

    fn route(&self, addr: &SocketAddr) -> Option<Arc<Mailbox>> {
        self.routes
            .read()
            .expect("loopback routes poisoned")
            .get(addr)
            .cloned()
    }

    fn unbind(&self, addr: &SocketAddr) {
        self.routes
            .write()
            .expect("loopback routes poisoned")
            .remove(addr);
    }
}

pub struct LoopbackEndpoint {
    net: LoopbackNet,
    addr: SocketAddr,
    mailbox: Arc<Mailbox>,
    counters: IoCounters,
    mtu: usize,
    open: bool,
}

impl LoopbackEndpoint {
    pub fn with_mtu(mut self, mtu: usize) -> Self {
        self.mtu = mtu;
        self
    }

    pub fn queued(&self) -> usize {
        self.mailbox.queue.lock().expect("mailbox poisoned").len()
    }
}

impl Transport for LoopbackEndpoint {
    fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    fn rx_batch(&mut self, max: usize) -> Result<Vec<Datagram>, IoError> {
        if !self.open {
            return Err(IoError::Closed);
        }
        if max == 0 {
            return Err(IoError::ZeroBatch);
        }
        let batch: Vec<Datagram> = {
            let mut queue = self.mailbox.queue.lock().expect("mailbox poisoned");
            let n = queue.len().min(max);
            queue.drain(..n).collect()
        };
        if !batch.is_empty() {
            self.counters.rx_packets += batch.len() as u64;
            self.counters.rx_batches += 1;
        }
        Ok(batch)
    }

    fn tx_batch(&mut self, out: &mut Vec<Datagram>) -> Result<usize, IoError> {
        if !self.open {
            return Err(IoError::Closed);
        }
        if out.is_empty() {
            return Ok(0);
        }
        check_mtu(out, self.mtu)?;

        let mut accepted = 0usize;
        let mut consumed = 0usize;
        let mut dropped = 0u64;
        // Consecutive datagrams usually share a destination; reuse the route.
        let mut cached: Option<(SocketAddr, Option<Arc<Mailbox>>)> = None;
        for dgram in out.iter_mut() {
            let dest = dgram.peer;
            let mailbox = match &cached {
                Some((addr, mb)) if *addr == dest => mb.clone(),
                _ => {
                    let mb = self.net.route(&dest);
                    cached = Some((dest, mb.clone()));
                    mb
                }
            };
            let Some(mailbox) = mailbox.filter(|m| m.open.load(Ordering::Acquire)) else {
                dropped += 1;
                consumed += 1;
                continue;
            };
            let mut queue = mailbox.queue.lock().expect("mailbox poisoned");
            let full = mailbox
                .config
                .capacity
                .is_some_and(|cap| queue.len() >= cap);
            if full {
                if mailbox.config.drop_on_full {
                    dropped += 1;
                    consumed += 1;
                    continue;
                }
                break;
            }
            queue.push_back(Datagram {
                payload: std::mem::take(&mut dgram.payload),
                peer: self.addr,
                timestamp_ns: monotonic_ns(),
            });
            accepted += 1;
            consumed += 1;
        }
        out.drain(..consumed);

        self.counters.tx_packets += accepted as u64;
        self.counters.drops += dropped;
        if accepted > 0 {
            self.counters.tx_batches += 1;
        }
        Ok(accepted)
    }

    fn counters(&self) -> IoCounters {
        self.counters
    }

    fn close(&mut self) {
        if self.open {
            self.open = false;
            self.mailbox.open.store(false, Ordering::Release);
            self.net.unbind(&self.addr);
        }
    }

    fn is_open(&self) -> bool {
        self.open
    }
}

impl Drop for LoopbackEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}
