//! Record framing: `type(1) || 0xFE 0xFD || epoch(2) || seq(6) || length(2) || body`,
//! all integers big-endian.

use super::ChannelError;
use crate::packet_io::DEFAULT_MTU;

pub const HEADER_LEN: usize = 13;
pub const VERSION: [u8; 2] = [0xFE, 0xFD];
pub const MAX_BODY_LEN: usize = DEFAULT_MTU - HEADER_LEN;
pub const MAX_SEQ: u64 = (1 << 48) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ContentType {
    Handshake = 22,
    ApplicationData = 23,
}

impl ContentType {
    fn from_u8(b: u8) -> Option<Self> {
        match b {
            22 => Some(ContentType::Handshake),
            23 => Some(ContentType::ApplicationData),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordHeader {
    pub content_type: ContentType,
    pub epoch: u16,
    pub seq: u64,
    pub length: u16,
}

impl RecordHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        debug_assert!(self.seq <= MAX_SEQ);
        let mut out = [0u8; HEADER_LEN];
        out[0] = self.content_type as u8;
        out[1..3].copy_from_slice(&VERSION);
        out[3..5].copy_from_slice(&self.epoch.to_be_bytes());
        out[5..11].copy_from_slice(&self.seq.to_be_bytes()[2..]);
        out[11..13].copy_from_slice(&self.length.to_be_bytes());
        out
    }

    /// Parses a whole record, returning the header and its body.
    pub fn parse(record: &[u8]) -> Result<(RecordHeader, &[u8]), ChannelError> {
        if record.len() < HEADER_LEN {
            return Err(ChannelError::MalformedRecord("short header"));
        }
        let content_type =
            ContentType::from_u8(record[0]).ok_or(ChannelError::MalformedRecord("content type"))?;
        if record[1..3] != VERSION {
            return Err(ChannelError::MalformedRecord("version"));
        }
        let epoch = u16::from_be_bytes([record[3], record[4]]);
        let mut seq_bytes = [0u8; 8];
        seq_bytes[2..].copy_from_slice(&record[5..11]);
        let seq = u64::from_be_bytes(seq_bytes);
        let length = u16::from_be_bytes([record[11], record[12]]);
        let body = &record[HEADER_LEN..];
        if body.len() != length as usize {
            return Err(ChannelError::MalformedRecord("length mismatch"));
        }
        if body.len() > MAX_BODY_LEN {
            return Err(ChannelError::MalformedRecord("body too long"));
        }
        Ok((
            RecordHeader {
                content_type,
                epoch,
                seq,
                length,
            },
            body,
        ))
    }
}
