use std::io::ErrorKind;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};

use super::{check_mtu, monotonic_ns, Datagram, IoCounters, IoError, Transport, DEFAULT_MTU};

/// Non-blocking OS datagram socket driver.
pub struct UdpTransport {
    socket: Option<UdpSocket>,
    local: SocketAddr,
    counters: IoCounters,
    mtu: usize,
    buf: Vec<u8>,
}

impl UdpTransport {
    /// Binds to a `host:port` string.
    pub fn bind(addr: &str) -> Result<Self, IoError> {
        let addr = resolve(addr)?;
        let socket = UdpSocket::bind(addr)?;
        socket.set_nonblocking(true)?;
        let local = socket.local_addr()?;
        Ok(Self {
            socket: Some(socket),
            local,
            counters: IoCounters::default(),
            mtu: DEFAULT_MTU,
            buf: vec![0; DEFAULT_MTU + 1],
        })
    }

    fn socket(&self) -> Result<&UdpSocket, IoError> {
        self.socket.as_ref().ok_or(IoError::Closed)
    }
}

pub fn resolve(addr: &str) -> Result<SocketAddr, IoError> {
    addr.to_socket_addrs()
        .map_err(|_| IoError::BadAddress(addr.to_string()))?
        .next()
        .ok_or_else(|| IoError::BadAddress(addr.to_string()))
}

impl Transport for UdpTransport {
    fn local_addr(&self) -> SocketAddr {
        self.local
    }

    fn rx_batch(&mut self, max: usize) -> Result<Vec<Datagram>, IoError> {
        if max == 0 {
            return Err(IoError::ZeroBatch);
        }
        let mut batch = Vec::new();
        let mut dropped = 0;
        {
            let socket = self.socket.as_ref().ok_or(IoError::Closed)?;
            while batch.len() < max {
                match socket.recv_from(&mut self.buf) {
                    Ok((n, peer)) if n <= self.mtu => batch.push(Datagram {
                        payload: self.buf[..n].to_vec(),
                        peer,
                        timestamp_ns: monotonic_ns(),
                    }),
                    // Truncated: larger than the MTU budget.
                    Ok(_) => dropped += 1,
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                    // ICMP port unreachable surfaces here on some platforms.
                    Err(e) if e.kind() == ErrorKind::ConnectionRefused => continue,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        self.counters.drops += dropped;
        if !batch.is_empty() {
            self.counters.rx_packets += batch.len() as u64;
            self.counters.rx_batches += 1;
        }
        Ok(batch)
    }

    fn tx_batch(&mut self, out: &mut Vec<Datagram>) -> Result<usize, IoError> {
        let socket = self.socket()?;
        if out.is_empty() {
            return Ok(0);
        }
        check_mtu(out, self.mtu)?;
        let mut accepted = 0;
        for dgram in out.iter() {
            match socket.send_to(&dgram.payload, dgram.peer) {
                Ok(_) => accepted += 1,
                Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                Err(e) => {
                    if accepted == 0 {
                        return Err(e.into());
                    }
                    break;
                }
            }
        }
        out.drain(..accepted);
        self.counters.tx_packets += accepted as u64;
        if accepted > 0 {
            self.counters.tx_batches += 1;
        }
        Ok(accepted)
    }

    fn counters(&self) -> IoCounters {
        self.counters
    }

    fn close(&mut self) {
        self.socket = None;
    }

    fn is_open(&self) -> bool {
        self.socket.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn udp_round_trip_on_localhost() {
        let mut a = UdpTransport::bind("127.0.0.1:0").unwrap();
        let mut b = UdpTransport::bind("127.0.0.1:0").unwrap();
        let mut out: Vec<Datagram> = (0..5u8)
            .map(|i| Datagram::new(vec![i; 100], b.local_addr()))
            .collect();
        assert_eq!(a.tx_batch(&mut out).unwrap(), 5);

        let mut got = Vec::new();
        let deadline = std::time::Instant::now() + std::time::Duration::from_secs(2);
        while got.len() < 5 && std::time::Instant::now() < deadline {
            got.extend(b.rx_batch(32).unwrap());
        }
        assert_eq!(got.len(), 5);
        assert!(got.iter().all(|d| d.peer == a.local_addr()));
        assert_eq!(b.counters().rx_packets, 5);
        assert_eq!(a.counters().tx_packets, 5);
    }

    #[test]
    fn closed_socket_errors() {
        let mut a = UdpTransport::bind("127.0.0.1:0").unwrap();
        a.close();
        assert!(matches!(a.rx_batch(4), Err(IoError::Closed)));
        assert!(!a.is_open());
    }

    #[test]
    fn bad_address_is_reported() {
        assert!(matches!(
            UdpTransport::bind("not an address"),
            Err(IoError::BadAddress(_))
        ));
    }
}
