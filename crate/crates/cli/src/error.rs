use std::io;

use thiserror::Error;

use dtlsgate_core::bench::BenchError;
use dtlsgate_core::cost_model::ModelError;
use dtlsgate_core::gateway::GatewayError;
use dtlsgate_core::IoError;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad invocation that clap could not catch; exits 2.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Transport(#[from] IoError),
    #[error("{path}: {source}")]
    File { path: String, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
