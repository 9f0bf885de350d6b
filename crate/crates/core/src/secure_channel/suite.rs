use std::fmt;
use std::str::FromStr;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Aes256Gcm};
use chacha20poly1305::ChaCha20Poly1305;
use serde::{Deserialize, Serialize};

use super::ChannelError;

pub const TAG_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const SALT_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CipherSuite {
    #[serde(rename = "aes128gcm")]
    Aes128Gcm,
    #[serde(rename = "aes256gcm")]
    Aes256Gcm,
    #[serde(rename = "chacha20")]
    ChaCha20Poly1305,
}

impl CipherSuite {
    pub const ALL: [CipherSuite; 3] = [
        CipherSuite::Aes128Gcm,
        CipherSuite::Aes256Gcm,
        CipherSuite::ChaCha20Poly1305,
    ];

    pub fn id(self) -> u16 {
        match self {
            CipherSuite::Aes128Gcm => 0x0001,
            CipherSuite::Aes256Gcm => 0x0002,
            CipherSuite::ChaCha20Poly1305 => 0x0003,
        }
    }

    pub fn from_id(id: u16) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.id() == id)
    }

    pub fn key_len(self) -> usize {
        match self {
            CipherSuite::Aes128Gcm => 16,
            CipherSuite::Aes256Gcm | CipherSuite::ChaCha20Poly1305 => 32,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CipherSuite::Aes128Gcm => "aes128gcm",
            CipherSuite::Aes256Gcm => "aes256gcm",
            CipherSuite::ChaCha20Poly1305 => "chacha20",
        }
    }
}

impl fmt::Display for CipherSuite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CipherSuite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "aes128gcm" | "aes-128-gcm" => Ok(CipherSuite::Aes128Gcm),
            "aes256gcm" | "aes-256-gcm" => Ok(CipherSuite::Aes256Gcm),
            "chacha20" | "chacha20poly1305" | "chacha20-poly1305" => {
                Ok(CipherSuite::ChaCha20Poly1305)
            }
            other => Err(format!("unknown cipher suite {other:?}")),
        }
    }
}

/// A keyed AEAD instance for one traffic direction.
#[derive(Clone)]
pub(crate) enum RecordCipher {
    Aes128(Box<Aes128Gcm>),
    Aes256(Box<Aes256Gcm>),
    ChaCha(Box<ChaCha20Poly1305>),
}

impl RecordCipher {
    pub(crate) fn new(suite: CipherSuite, key: &[u8]) -> Self {
        debug_assert_eq!(key.len(), suite.key_len());
        match suite {
            CipherSuite::Aes128Gcm => {
                RecordCipher::Aes128(Box::new(Aes128Gcm::new_from_slice(key).expect("key length")))
            }
            CipherSuite::Aes256Gcm => {
                RecordCipher::Aes256(Box::new(Aes256Gcm::new_from_slice(key).expect("key length")))
            }
            CipherSuite::ChaCha20Poly1305 => RecordCipher::ChaCha(Box::new(
                ChaCha20Poly1305::new_from_slice(key).expect("key length"),
            )),
        }
    }

    /// Encrypts `buf` in place and appends the tag.
    pub(crate) fn seal(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], buf: &mut Vec<u8>) -> Result<(), ChannelError> {
        let nonce = nonce.into();
        let res = match self {
            RecordCipher::Aes128(c) => c.encrypt_in_place(nonce, aad, buf),
            RecordCipher::Aes256(c) => c.encrypt_in_place(nonce, aad, buf),
            RecordCipher::ChaCha(c) => c.encrypt_in_place(nonce, aad, buf),
        };
        res.map_err(|_| ChannelError::Crypto)
    }

    /// Verifies and strips the trailing tag, decrypting `buf` in place.
    pub(crate) fn open(&self, nonce: &[u8; NONCE_LEN], aad: &[u8], buf: &mut Vec<u8>) -> Result<(), ChannelError> {
        let nonce = nonce.into();
        let res = match self {
            RecordCipher::Aes128(c) => c.decrypt_in_place(nonce, aad, buf),
            RecordCipher::Aes256(c) => c.decrypt_in_place(nonce, aad, buf),
            RecordCipher::ChaCha(c) => c.decrypt_in_place(nonce, aad, buf),
        };
        res.map_err(|_| ChannelError::AuthenticationFailed)
    }
}
