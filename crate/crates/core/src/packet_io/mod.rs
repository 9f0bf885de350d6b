//! Batched datagram transports.
//!
//! Every driver implements [`Transport`]: `rx_batch` drains up to `max`
//! datagrams, `tx_batch` hands a batch to the driver and reports how many were
//! accepted. Two drivers ship: an in-memory [`LoopbackNet`] used by tests and
//! microbenchmarks, and [`UdpTransport`] on top of an OS datagram socket.
//! [`ChannelTransport`] connects a gateway worker to the dispatcher.

mod channel;
mod loopback;
mod udp;

use std::net::SocketAddr;
use std::sync::OnceLock;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use channel::ChannelTransport;
pub use loopback::{LoopbackEndpoint, LoopbackNet, QueueConfig};
pub use udp::UdpTransport;

/// Payload budget of one datagram: 1500 byte MTU minus IPv4 and UDP headers.
pub const DEFAULT_MTU: usize = 1472;

pub const DEFAULT_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Datagram {
    pub payload: Vec<u8>,
    /// Source address on receive, destination address on transmit.
    pub peer: SocketAddr,
    /// Monotonic nanoseconds when the datagram entered the driver.
    pub timestamp_ns: u64,
}

impl Datagram {
    pub fn new(payload: Vec<u8>, peer: SocketAddr) -> Self {
        Self {
            payload,
            peer,
            timestamp_ns: monotonic_ns(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounters {
    pub rx_packets: u64,
    pub tx_packets: u64,
    pub rx_batches: u64,
    pub tx_batches: u64,
    pub drops: u64,
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("transport is closed")]
    Closed,
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("payload of {len} bytes exceeds the {mtu} byte MTU budget")]
    Oversized { len: usize, mtu: usize },
    #[error("address {0} is already bound")]
    AddrInUse(SocketAddr),
    #[error("invalid address {0:?}")]
    BadAddress(String),
    #[error(transparent)]
    Os(#[from] std::io::Error),
}

/// A batched, single-owner datagram endpoint.
pub trait Transport: Send {
    fn local_addr(&self) -> SocketAddr;

    /// Returns between 0 and `max` datagrams in arrival order. An empty batch
    /// means nothing is available right now; it is not an error.
    fn rx_batch(&mut self, max: usize) -> Result<Vec<Datagram>, IoError>;

    /// Transmits datagrams from the front of `out`, removing every datagram
    /// the driver consumed (accepted or dropped) and returning the accepted
    /// count. Datagrams left in `out` were refused and may be retried.
    fn tx_batch(&mut self, out: &mut Vec<Datagram>) -> Result<usize, IoError>;

    fn counters(&self) -> IoCounters;

    fn close(&mut self);

    fn is_open(&self) -> bool;
}

pub(crate) fn check_mtu(out: &[Datagram], mtu: usize) -> Result<(), IoError> {
    match out.iter().find(|d| d.payload.len() > mtu) {
        Some(d) => Err(IoError::Oversized {
            len: d.payload.len(),
            mtu,
        }),
        None => Ok(()),
    }
}

/// Nanoseconds since the first call in this process.
pub fn monotonic_ns() -> u64 {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    EPOCH.get_or_init(Instant::now).elapsed().as_nanos() as u64
}
