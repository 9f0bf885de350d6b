//! Measurement: cycle clock, per-stage micro-loops, the load generator and
//! report files.

mod clock;
pub mod loadgen;
pub mod micro;
pub mod plot;
mod report;
mod stage;

use thiserror::Error;

pub use clock::{tsc_available, ClockSource, CycleClock};
pub use report::{
    emit_report, now_unix, read_report, BenchReport, BlackboxPoint, ReportFormat, RunMeta,
    StageSample, BLACKBOX_HEADER, SAMPLE_HEADER,
};
pub use stage::StageKind;

use crate::gateway::GatewayError;
use crate::packet_io::IoError;
use crate::secure_channel::ChannelError;
use crate::state_table::TableError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("bad report format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("channel error: {0}")]
    Channel(#[from] ChannelError),
    #[error("transport error: {0}")]
    Transport(#[from] IoError),
    #[error("gateway error: {0}")]
    Gateway(#[from] GatewayError),
    #[error("state table error: {0}")]
    Table(#[from] TableError),
    #[error("no connection out of {requested} completed its handshake")]
    NoConnections { requested: usize },
    #[error("echo verification failed on connection {conn}: {reason}")]
    Verification { conn: usize, reason: String },
}
