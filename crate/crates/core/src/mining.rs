//! Block construction helpers for easy (regtest-style) targets.

use crate::block::{Block, BlockHeader, Transaction};
use crate::pow::grind;

/// Builds a block on top of `parent` with a valid proof of work.
///
/// The merkle root is computed from `transactions`; the nonce is ground
/// starting from zero, so the result is a pure function of the inputs.
pub fn mine_block(parent: &BlockHeader, time: u32, bits: u32, transactions: Vec<Transaction>) -> Block {
    let merkle_root = crate::block::merkle_root(&transactions.iter().map(Transaction::txid).collect::<Vec<_>>())
        .expect("a block carries at least a coinbase");
    let mut header = BlockHeader {
        version: 0x2000_0000,
        prev: parent.hash(),
        merkle_root,
        time,
        bits,
        nonce: 0,
    };
    grind(&mut header).expect("parent bits are valid");
    Block { header, transactions }
}

/// A child block holding a single coinbase tagged with `salt`, ten minutes
/// after its parent and at the parent's difficulty. Distinct salts give
/// distinct siblings.
pub fn child_block(parent: &BlockHeader, salt: u64) -> Block {
    let coinbase = Transaction::coinbase(&salt.to_le_bytes(), 50 * 100_000_000, vec![0x51]);
    mine_block(parent, parent.time + 600, parent.bits, vec![coinbase])
}

pub fn child_header(parent: &BlockHeader, salt: u64) -> BlockHeader {
    child_block(parent, salt).header
}
