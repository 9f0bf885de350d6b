use std::net::SocketAddr;
use std::sync::mpsc::{Receiver, SyncSender, TryRecvError, TrySendError};

use super::{check_mtu, Datagram, IoCounters, IoError, Transport, DEFAULT_MTU};

/// Worker-side endpoint of a dispatcher handoff: receives the datagrams the
/// dispatcher steered to this worker and queues responses for transmission.
pub struct ChannelTransport {
    local: SocketAddr,
    inbound: Receiver<Datagram>,
    outbound: SyncSender<Datagram>,
    counters: IoCounters,
    open: bool,
}

impl ChannelTransport {
    pub fn new(local: SocketAddr, inbound: Receiver<Datagram>, outbound: SyncSender<Datagram>) -> Self {
        Self {
            local,
            inbound,
            outbound,
            counters: IoCounters::default(),
            open: true,
        }
    }
}

impl Transport for ChannelTransport {
    fn local_addr(&self) -> SocketAddr {
        self.local
    }

    fn rx_batch(&mut self, max: usize) -> Result<Vec<Datagram>, IoError> {
        if !self.open {
            return Err(IoError::Closed);
        }
        if max == 0 {
            return Err(IoError::ZeroBatch);
        }
        let mut batch = Vec::new();
        while batch.len() < max {
            match self.inbound.try_recv() {
                Ok(d) => batch.push(d),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    if batch.is_empty() {
                        self.open = false;
                        return Err(IoError::Closed);
                    }
                    break;
                }
            }
        }
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
        check_mtu(out, DEFAULT_MTU)?;
        let mut accepted = 0;
        let mut result = Ok(());
        for dgram in out.iter_mut() {
            let taken = std::mem::replace(dgram, Datagram {
                payload: Vec::new(),
                peer: self.local,
                timestamp_ns: 0,
            });
            match self.outbound.try_send(taken) {
                Ok(()) => accepted += 1,
                Err(TrySendError::Full(d)) => {
                    *dgram = d;
                    break;
                }
                Err(TrySendError::Disconnected(d)) => {
                    *dgram = d;
                    self.open = false;
                    result = Err(IoError::Closed);
                    break;
                }
            }
        }
        out.drain(..accepted);
        self.counters.tx_packets += accepted as u64;
        if accepted > 0 {
            self.counters.tx_batches += 1;
        }
        result.map(|()| accepted)
    }

    fn counters(&self) -> IoCounters {
        self.counters
    }

    fn close(&mut self) {
        self.open = false;
    }

    fn is_open(&self) -> bool {
        self.open
    }
}
