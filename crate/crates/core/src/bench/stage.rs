use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// An instrumented pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StageKind {
    IoRx,
    IoTx,
    Hash,
    TableLookup,
    TableInsert,
    StateAlloc,
    CryptoSeal,
    CryptoOpen,
    Handshake,
}

impl StageKind {
    pub const COUNT: usize = 9;

    pub const ALL: [StageKind; Self::COUNT] = [
        StageKind::IoRx,
        StageKind::IoTx,
        StageKind::Hash,
        StageKind::TableLookup,
        StageKind::TableInsert,
        StageKind::StateAlloc,
        StageKind::CryptoSeal,
        StageKind::CryptoOpen,
        StageKind::Handshake,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageKind::IoRx => "IO_RX",
            StageKind::IoTx => "IO_TX",
            StageKind::Hash => "HASH",
            StageKind::TableLookup => "TABLE_LOOKUP",
            StageKind::TableInsert => "TABLE_INSERT",
            StageKind::StateAlloc => "STATE_ALLOC",
            StageKind::CryptoSeal => "CRYPTO_SEAL",
            StageKind::CryptoOpen => "CRYPTO_OPEN",
            StageKind::Handshake => "HANDSHAKE",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        StageKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}
