//! Bitcoin consensus serialization.
//!
//! Integers are little-endian, variable-length counts use the CompactSize
//! encoding and byte strings are length-prefixed. Decoding rejects
//! non-canonical CompactSize values and trailing data.

use thiserror::Error;

use crate::hash::Hash256;

/// Upper bound on any length prefix accepted while decoding.
pub const MAX_VEC_LEN: u64 = 4_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("non-canonical compact size encoding")]
    NonCanonicalVarInt,
    #[error("length prefix {0} exceeds limit")]
    OversizedVec(u64),
    #[error("{0} trailing bytes after object")]
    TrailingBytes(usize),
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("{0}")]
    Invalid(&'static str),
}

pub trait Encodable {
    fn consensus_encode(&self, out: &mut Vec<u8>);

    fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.consensus_encode(&mut out);
        out
    }
}

pub trait Decodable: Sized {
    fn consensus_decode(reader: &mut Reader<'_>) -> Result<Self, DecodeError>;

    /// Decodes a complete object, failing on trailing bytes.
    fn deserialize(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = Reader::new(bytes);
        let value = Self::consensus_decode(&mut reader)?;
        match reader.remaining() {
            0 => Ok(value),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }

    fn from_hex(s: &str) -> Result<Self, DecodeError> {
        let bytes = hex::decode(s.trim()).map_err(|e| DecodeError::Hex(e.to_string()))?;
        Self::deserialize(&bytes)
    }
}

pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEof);
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N)?);
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32, DecodeError> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn hash(&mut self) -> Result<Hash256, DecodeError> {
        Ok(Hash256::from_bytes(self.array()?))
    }

    pub fn compact_size(&mut self) -> Result<u64, DecodeError> {
        let (value, min) = match self.u8()? {
            0xff => (self.u64()?, 0x1_0000_0000),
            0xfe => (self.u32()? as u64, 0x1_0000),
            0xfd => (self.u16()? as u64, 0xfd),
            n => return Ok(n as u64),
        };
        if value < min {
            return Err(DecodeError::NonCanonicalVarInt);
        }
        Ok(value)
    }

    /// Reads a CompactSize count and checks it against [`MAX_VEC_LEN`] and
    /// the bytes actually left.
    pub fn length(&mut self) -> Result<usize, DecodeError> {
        let n = self.compact_size()?;
        if n > MAX_VEC_LEN {
            return Err(DecodeError::OversizedVec(n));
        }
        Ok(n as usize)
    }

    pub fn var_bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.length()?;
        Ok(self.take(n)?.to_vec())
    }
}

pub fn write_compact_size(out: &mut Vec<u8>, n: u64) {
    match n {
        0..=0xfc => out.push(n as u8),
        0xfd..=0xffff => {
            out.push(0xfd);
            out.extend_from_slice(&(n as u16).to_le_bytes());
        }
        0x1_0000..=0xffff_ffff => {
            out.push(0xfe);
            out.extend_from_slice(&(n as u32).to_le_bytes());
        }
        _ => {
            out.push(0xff);
            out.extend_from_slice(&n.to_le_bytes());
        }
    }
}

pub fn write_var_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    write_compact_size(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}
