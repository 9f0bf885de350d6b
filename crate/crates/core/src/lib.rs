//! Instrumented DTLS-style UDP security gateway.
//!
//! The gateway is split into the four stages that dominate per-packet cost in a
//! datagram security endpoint: packet IO ([`packet_io`]), flow keying
//! ([`flow_hash`]), per-flow state tracking ([`state_table`]) and record
//! protection ([`secure_channel`]). [`gateway`] wires them into a worker
//! pipeline, [`cost_model`] predicts cycle budgets from per-stage coefficients,
//! and [`bench`] measures those coefficients on the local machine.

pub mod bench;
pub mod cost_model;
pub mod flow_hash;
pub mod gateway;
pub mod packet_io;
pub mod secure_channel;
pub mod state_table;

pub use flow_hash::{flow_key, siphash24, FiveTuple, FlowKey, HashKey};
pub use packet_io::{Datagram, IoCounters, IoError, Transport};
pub use secure_channel::{CipherSuite, ConnectionState, KexMethod, Phase};
pub use state_table::StateTable;
