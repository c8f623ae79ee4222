use std::fmt;

use thiserror::Error;

use crate::encode::{write_compact_size, write_var_bytes, Decodable, DecodeError, Encodable, Reader};
use crate::hash::{sha256d, Hash256};

/// Serialized size of a block header.
pub const HEADER_SIZE: usize = 80;

/// Total supply cap in satoshi; no single output may exceed it.
pub const MAX_MONEY: u64 = 21_000_000 * 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct BlockHeader {
    pub version: i32,
    pub prev: Hash256,
    pub merkle_root: Hash256,
    pub time: u32,
    pub bits: u32,
    pub nonce: u32,
}

impl BlockHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut out = [0u8; HEADER_SIZE];
        out[0..4].copy_from_slice(&self.version.to_le_bytes());
        out[4..36].copy_from_slice(self.prev.as_bytes());
        out[36..68].copy_from_slice(self.merkle_root.as_bytes());
        out[68..72].copy_from_slice(&self.time.to_le_bytes());
        out[72..76].copy_from_slice(&self.bits.to_le_bytes());
        out[76..80].copy_from_slice(&self.nonce.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8; HEADER_SIZE]) -> Self {
        Self::deserialize(bytes).expect("80 bytes always decode")
    }

    pub fn hash(&self) -> Hash256 {
        sha256d(&self.to_bytes())
    }
}

impl Encodable for BlockHeader {
    fn consensus_encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bytes());
    }
}

impl Decodable for BlockHeader {
    fn consensus_decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(BlockHeader {
            version: r.i32()?,
            prev: r.hash()?,
            merkle_root: r.hash()?,
            time: r.u32()?,
            bits: r.u32()?,
            nonce: r.u32()?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct OutPoint {
    pub txid: Hash256,
    pub vout: u32,
}

impl OutPoint {
    /// The previous-output reference carried by a coinbase input.
    pub const NULL: OutPoint = OutPoint { txid: Hash256::ZERO, vout: u32::MAX };

    pub fn new(txid: Hash256, vout: u32) -> Self {
        OutPoint { txid, vout }
    }

    pub fn is_null(&self) -> bool {
        *self == Self::NULL
    }
}

impl fmt::Display for OutPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxIn {
    pub previous_output: OutPoint,
    pub script_sig: Vec<u8>,
    pub sequence: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TxOut {
    pub value: u64,
    pub script_pubkey: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Transaction {
    pub version: i32,
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    pub lock_time: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxSyntaxError {
    #[error("transaction has no inputs")]
    NoInputs,
    #[error("transaction has no outputs")]
    NoOutputs,
    #[error("output {0} exceeds the money supply")]
    ValueOutOfRange(usize),
}

impl Transaction {
    pub fn txid(&self) -> Hash256 {
        sha256d(&self.serialize())
    }

    pub fn is_coinbase(&self) -> bool {
        self.inputs.len() == 1 && self.inputs[0].previous_output.is_null()
    }

    /// Structural checks only; scripts and spent outputs are never examined.
    pub fn check_syntax(&self) -> Result<(), TxSyntaxError> {
        if self.inputs.is_empty() {
            return Err(TxSyntaxError::NoInputs);
        }
        if self.outputs.is_empty() {
            return Err(TxSyntaxError::NoOutputs);
        }
        if let Some(i) = self.outputs.iter().position(|o| o.value > MAX_MONEY) {
            return Err(TxSyntaxError::ValueOutOfRange(i));
        }
        Ok(())
    }

    /// A coinbase paying `value` to `script_pubkey`. `tag` goes into the
    /// coinbase script so that otherwise identical coinbases get distinct ids.
    pub fn coinbase(tag: &[u8], value: u64, script_pubkey: Vec<u8>) -> Self {
        Transaction {
            version: 1,
            inputs: vec![TxIn {
                previous_output: OutPoint::NULL,
                script_sig: tag.to_vec(),
                sequence: u32::MAX,
            }],
            outputs: vec![TxOut { value, script_pubkey }],
            lock_time: 0,
        }
    }
}

impl Encodable for Transaction {
    fn consensus_encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.version.to_le_bytes());
        write_compact_size(out, self.inputs.len() as u64);
        for input in &self.inputs {
            out.extend_from_slice(input.previous_output.txid.as_bytes());
            out.extend_from_slice(&input.previous_output.vout.to_le_bytes());
            write_var_bytes(out, &input.script_sig);
            out.extend_from_slice(&input.sequence.to_le_bytes());
        }
        write_compact_size(out, self.outputs.len() as u64);
        for output in &self.outputs {
            out.extend_from_slice(&output.value.to_le_bytes());
            write_var_bytes(out, &output.script_pubkey);
        }
        out.extend_from_slice(&self.lock_time.to_le_bytes());
    }
}

impl Decodable for Transaction {
    fn consensus_decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let version = r.i32()?;
        let n_in = r.length()?;
        if n_in == 0 {
            // a zero input count is the segwit marker; witness encoding is not supported
            return Err(DecodeError::Invalid("transaction without inputs"));
        }
        let mut inputs = Vec::with_capacity(n_in.min(1024));
        for _ in 0..n_in {
            inputs.push(TxIn {
                previous_output: OutPoint { txid: r.hash()?, vout: r.u32()? },
                script_sig: r.var_bytes()?,
                sequence: r.u32()?,
            });
        }
        let n_out = r.length()?;
        let mut outputs = Vec::with_capacity(n_out.min(1024));
        for _ in 0..n_out {
            outputs.push(TxOut { value: r.u64()?, script_pubkey: r.var_bytes()? });
        }
        Ok(Transaction { version, inputs, outputs, lock_time: r.u32()? })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }

    pub fn txids(&self) -> Vec<Hash256> {
        self.transactions.iter().map(Transaction::txid).collect()
    }

    pub fn compute_merkle_root(&self) -> Option<Hash256> {
        merkle_root(&self.txids())
    }

    /// Serialized size in bytes.
    pub fn size(&self) -> usize {
        let mut n = HEADER_SIZE + compact_size_len(self.transactions.len() as u64);
        for tx in &self.transactions {
            n += tx.serialize().len();
        }
        n
    }
}

impl Encodable for Block {
    fn consensus_encode(&self, out: &mut Vec<u8>) {
        self.header.consensus_encode(out);
        write_compact_size(out, self.transactions.len() as u64);
        for tx in &self.transactions {
            tx.consensus_encode(out);
        }
    }
}

impl Decodable for Block {
    fn consensus_decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = BlockHeader::consensus_decode(r)?;
        let n = r.length()?;
        let mut transactions = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            transactions.push(Transaction::consensus_decode(r)?);
        }
        Ok(Block { header, transactions })
    }
}

fn compact_size_len(n: u64) -> usize {
    match n {
        0..=0xfc => 1,
        0xfd..=0xffff => 3,
        0x1_0000..=0xffff_ffff => 5,
        _ => 9,
    }
}

/// Bitcoin merkle root: pairwise double-SHA256, duplicating the last
/// element of odd-length levels. `None` for an empty list.
pub fn merkle_root(leaves: &[Hash256]) -> Option<Hash256> {
    if leaves.is_empty() {
        return None;
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(pair[0].as_bytes());
                buf[32..].copy_from_slice(right.as_bytes());
                sha256d(&buf)
            })
            .collect();
    }
    Some(level[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_header_is_80_zero_bytes() {
        assert_eq!(BlockHeader::default().to_bytes(), [0u8; 80]);
    }

    #[test]
    fn time_and_nonce_offsets() {
        let h = BlockHeader { time: 1, nonce: 2, ..Default::default() };
        let bytes = h.to_bytes();
        let differing: Vec<usize> = (0..80).filter(|&i| bytes[i] != 0).collect();
        assert_eq!(differing, vec![68, 76]);
        assert_eq!(bytes[68], 1);
        assert_eq!(bytes[76], 2);
    }

    #[test]
    fn nonce_changes_hash() {
        let a = BlockHeader::default();
        let b = BlockHeader { nonce: 1, ..a };
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.hash());
    }

    #[test]
    fn single_leaf_merkle_is_leaf() {
        let tx = Transaction::coinbase(b"x", 50, vec![0x51]);
        assert_eq!(merkle_root(&[tx.txid()]), Some(tx.txid()));
        assert_eq!(merkle_root(&[]), None);
    }

    #[test]
    fn odd_level_duplicates_last() {
        let a = sha256d(b"a");
        let b = sha256d(b"b");
        let c = sha256d(b"c");
        let pair = |x: Hash256, y: Hash256| {
            let mut buf = x.as_bytes().to_vec();
            buf.extend_from_slice(y.as_bytes());
            sha256d(&buf)
        };
        let expected = pair(pair(a, b), pair(c, c));
        assert_eq!(merkle_root(&[a, b, c]), Some(expected));
    }

    #[test]
    fn block_size_matches_serialization() {
        let block = Block {
            header: BlockHeader::default(),
            transactions: vec![Transaction::coinbase(b"t", 1, vec![0u8; 300])],
        };
        assert_eq!(block.size(), block.serialize().len());
    }

    #[test]
    fn syntax_checks() {
        let mut tx = Transaction::coinbase(b"t", MAX_MONEY + 1, vec![]);
        assert_eq!(tx.check_syntax(), Err(TxSyntaxError::ValueOutOfRange(0)));
        tx.outputs.clear();
        assert_eq!(tx.check_syntax(), Err(TxSyntaxError::NoOutputs));
    }
}
