//! Header and block validity checks.
//!
//! Headers must point at a known parent, carry the expected difficulty
//! target, satisfy it, and have a timestamp above the median of the
//! previous eleven blocks and at most two hours ahead of the local clock.
//! Blocks additionally need a consistent merkle root and an available
//! parent body. Transaction scripts and spent outputs are never checked.

use num_bigint::BigUint;
use thiserror::Error;

use crate::block::{Block, BlockHeader, TxSyntaxError};
use crate::hash::Hash256;
use crate::network::NetworkKind;
use crate::pow::{compress_target, expand_compact, hash_to_uint, CompactError};
use crate::tree::{BlockTree, TreeNode};

/// Number of ancestors whose median time bounds a new timestamp from below.
pub const MEDIAN_TIME_SPAN: usize = 11;
/// Maximum seconds a timestamp may run ahead of the local clock.
pub const MAX_FUTURE_DRIFT: u32 = 2 * 60 * 60;
pub const RETARGET_INTERVAL: u32 = 2016;
pub const TARGET_TIMESPAN: u32 = 14 * 24 * 60 * 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeaderViolation {
    #[error("malformed header: {0}")]
    Malformed(CompactError),
    #[error("orphan header: parent {0} is unknown")]
    Orphan(Hash256),
    #[error("wrong difficulty bits {found:#010x}, expected {expected:#010x}")]
    BadDifficulty { expected: u32, found: u32 },
    #[error("header hash exceeds its target")]
    ProofOfWork,
    #[error("timestamp {time} not above median time past {median}")]
    TimeTooOld { time: u32, median: u32 },
    #[error("timestamp {time} more than two hours ahead of {now}")]
    TimeTooNew { time: u32, now: u32 },
    #[error("ancestor header {0} not available for validation")]
    MissingAncestor(Hash256),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockViolation {
    #[error(transparent)]
    Header(#[from] HeaderViolation),
    #[error("block has no transactions")]
    Empty,
    #[error("first transaction is not a coinbase")]
    MissingCoinbase,
    #[error("transaction {0} is an extra coinbase")]
    ExtraCoinbase(usize),
    #[error("transaction {index}: {error}")]
    Transaction { index: usize, error: TxSyntaxError },
    #[error("merkle root mismatch")]
    MerkleMismatch,
    #[error("header does not match block")]
    HeaderMismatch,
    #[error("parent block body {0} is not available")]
    ParentBodyUnavailable(Hash256),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationPolicy {
    pub pow_limit_bits: u32,
    /// Recompute the target every `retarget_interval` blocks; otherwise the
    /// target is held at `pow_limit_bits`.
    pub retarget: bool,
    pub retarget_interval: u32,
    pub target_timespan: u32,
}

impl ValidationPolicy {
    pub fn for_network(network: NetworkKind) -> Self {
        ValidationPolicy {
            pow_limit_bits: network.pow_limit_bits(),
            retarget: network.retargets(),
            retarget_interval: RETARGET_INTERVAL,
            target_timespan: TARGET_TIMESPAN,
        }
    }

    /// A fixed target for every height.
    pub fn constant(bits: u32) -> Self {
        ValidationPolicy {
            pow_limit_bits: bits,
            retarget: false,
            retarget_interval: RETARGET_INTERVAL,
            target_timespan: TARGET_TIMESPAN,
        }
    }

    /// Bits a child of `parent` must carry.
    pub fn expected_bits(&self, tree: &BlockTree, parent: &TreeNode) -> Result<u32, HeaderViolation> {
        if !self.retarget {
            return Ok(self.pow_limit_bits);
        }
        let height = parent.height() + 1;
        if !height.is_multiple_of(self.retarget_interval) {
            return Ok(parent.bits());
        }
        let first_height = height - self.retarget_interval;
        let first = tree
            .ancestors(parent.hash())
            .find(|n| n.height() == first_height)
            .ok_or(HeaderViolation::MissingAncestor(parent.hash()))?;
        let time_of = |n: &TreeNode| n.header().map(|h| h.time).ok_or(HeaderViolation::MissingAncestor(n.hash()));
        let span = time_of(parent)?.saturating_sub(time_of(first)?);
        let span = span.clamp(self.target_timespan / 4, self.target_timespan * 4);
        let limit = expand_compact(self.pow_limit_bits).map_err(HeaderViolation::Malformed)?;
        let old = expand_compact(parent.bits()).map_err(HeaderViolation::Malformed)?;
        let mut target: BigUint = old * span / self.target_timespan;
        if target > limit {
            target = limit;
        }
        Ok(compress_target(&target))
    }
}

/// Median of the timestamps of `parent` and up to ten of its ancestors.
pub fn median_time_past(tree: &BlockTree, parent: &Hash256) -> Result<u32, HeaderViolation> {
    let mut times = Vec::with_capacity(MEDIAN_TIME_SPAN);
    for node in tree.ancestors(*parent).take(MEDIAN_TIME_SPAN) {
        let header = node.header().ok_or(HeaderViolation::MissingAncestor(node.hash()))?;
        times.push(header.time);
    }
    times.sort_unstable();
    Ok(times[times.len() / 2])
}

pub fn validate_header(
    header: &BlockHeader,
    tree: &BlockTree,
    policy: &ValidationPolicy,
    now: u32,
) -> Result<(), HeaderViolation> {
    let target = expand_compact(header.bits).map_err(HeaderViolation::Malformed)?;
    let parent = tree.get(&header.prev).ok_or(HeaderViolation::Orphan(header.prev))?;
    let expected = policy.expected_bits(tree, parent)?;
    if header.bits != expected {
        return Err(HeaderViolation::BadDifficulty { expected, found: header.bits });
    }
    if hash_to_uint(&header.hash()) > target {
        return Err(HeaderViolation::ProofOfWork);
    }
    let median = median_time_past(tree, &header.prev)?;
    if header.time <= median {
        return Err(HeaderViolation::TimeTooOld { time: header.time, median });
    }
    if header.time > now.saturating_add(MAX_FUTURE_DRIFT) {
        return Err(HeaderViolation::TimeTooNew { time: header.time, now });
    }
    Ok(())
}

/// Structure-only checks: coinbase placement, transaction syntax and the
/// merkle commitment.
pub fn check_block_structure(block: &Block) -> Result<(), BlockViolation> {
    let first = block.transactions.first().ok_or(BlockViolation::Empty)?;
    if !first.is_coinbase() {
        return Err(BlockViolation::MissingCoinbase);
    }
    for (index, tx) in block.transactions.iter().enumerate() {
        if index > 0 && tx.is_coinbase() {
            return Err(BlockViolation::ExtraCoinbase(index));
        }
        tx.check_syntax().map_err(|error| BlockViolation::Transaction { index, error })?;
    }
    if block.compute_merkle_root() != Some(block.header.merkle_root) {
        return Err(BlockViolation::MerkleMismatch);
    }
    Ok(())
}

/// Full block validation against `tree`.
///
/// When `anchor` is given the parent's body must be present in the tree or
/// the parent must be the anchor itself; `None` skips that requirement.
pub fn validate_block(
    block: &Block,
    tree: &BlockTree,
    policy: &ValidationPolicy,
    now: u32,
    anchor: Option<&Hash256>,
) -> Result<(), BlockViolation> {
    validate_header(&block.header, tree, policy, now)?;
    check_block_structure(block)?;
    if let Some(anchor) = anchor {
        let prev = &block.header.prev;
        let available = prev == anchor || tree.get(prev).is_some_and(TreeNode::has_block);
        if !available {
            return Err(BlockViolation::ParentBodyUnavailable(*prev));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::block::Transaction;
    use crate::mining::{child_block, child_header, mine_block};
    use crate::pow::{grind, WorkPolicy};

    fn setup() -> (BlockTree, BlockHeader, ValidationPolicy) {
        let g = NetworkKind::Regtest.genesis_header();
        let tree = BlockTree::new(g, WorkPolicy::Target).unwrap();
        (tree, g, ValidationPolicy::for_network(NetworkKind::Regtest))
    }

    const NOW: u32 = 2_000_000_000;

    #[test]
    fn happy_path() {
        let (tree, g, policy) = setup();
        assert_eq!(validate_header(&child_header(&g, 1), &tree, &policy, NOW), Ok(()));
    }

    #[test]
    fn orphan() {
        let (tree, g, policy) = setup();
        let a = child_header(&g, 1);
        let b = child_header(&a, 1);
        assert_eq!(validate_header(&b, &tree, &policy, NOW), Err(HeaderViolation::Orphan(a.hash())));
    }

    #[test]
    fn pow_failure() {
        let (tree, g, policy) = setup();
        let mut h = child_header(&g, 1);
        // step the nonce until the hash lands above the regtest target
        let target = expand_compact(h.bits).unwrap();
        while hash_to_uint(&h.hash()) <= target {
            h.nonce += 1;
        }
        assert_eq!(validate_header(&h, &tree, &policy, NOW), Err(HeaderViolation::ProofOfWork));
    }

    #[test]
    fn wrong_bits() {
        let (tree, g, policy) = setup();
        let mut h = child_header(&g, 1);
        h.bits = 0x207ffffe;
        grind(&mut h).unwrap();
        assert_eq!(
            validate_header(&h, &tree, &policy, NOW),
            Err(HeaderViolation::BadDifficulty { expected: 0x207fffff, found: 0x207ffffe })
        );
    }

    #[test]
    fn malformed_bits() {
        let (tree, g, policy) = setup();
        let mut h = child_header(&g, 1);
        h.bits = 0x04923456;
        assert!(matches!(validate_header(&h, &tree, &policy, NOW), Err(HeaderViolation::Malformed(_))));
    }

    #[test]
    fn timestamp_bounds() {
        let (tree, g, policy) = setup();
        let mut old = child_header(&g, 1);
        old.time = g.time;
        grind(&mut old).unwrap();
        assert!(matches!(validate_header(&old, &tree, &policy, NOW), Err(HeaderViolation::TimeTooOld { .. })));

        let h = child_header(&g, 1);
        let now = h.time - MAX_FUTURE_DRIFT;
        assert_eq!(validate_header(&h, &tree, &policy, now), Ok(()));
        assert!(matches!(
            validate_header(&h, &tree, &policy, now - 1),
            Err(HeaderViolation::TimeTooNew { .. })
        ));
    }

    #[test]
    fn median_of_eleven() {
        let (mut tree, g, _) = setup();
        let mut tip = g;
        let mut times = vec![g.time];
        for i in 0..15u32 {
            // non-monotone times that stay above each running median
            let t = g.time + 1000 + (i * 7919) % 5000;
            let b = mine_block(&tip, t, tip.bits, vec![Transaction::coinbase(&i.to_le_bytes(), 1, vec![])]);
            tree.insert_header(b.header).unwrap();
            times.push(t);
            tip = b.header;
        }
        let mut last11: Vec<u32> = times[times.len() - 11..].to_vec();
        last11.sort_unstable();
        assert_eq!(median_time_past(&tree, &tip.hash()).unwrap(), last11[5]);
    }

    #[test]
    fn merkle_mismatch_and_body_checks() {
        let (mut tree, g, policy) = setup();
        let a = child_block(&g, 1);
        assert_eq!(validate_block(&a, &tree, &policy, NOW, Some(&g.hash())), Ok(()));

        let mut bad = a.clone();
        bad.transactions[0].outputs[0].value += 1;
        assert_eq!(validate_block(&bad, &tree, &policy, NOW, Some(&g.hash())), Err(BlockViolation::MerkleMismatch));

        tree.insert_header(a.header).unwrap();
        let b = child_block(&a.header, 1);
        // parent header known but body absent and parent is not the anchor
        assert_eq!(
            validate_block(&b, &tree, &policy, NOW, Some(&g.hash())),
            Err(BlockViolation::ParentBodyUnavailable(a.hash()))
        );
        assert_eq!(validate_block(&b, &tree, &policy, NOW, None), Ok(()));
        tree.set_block(a).unwrap();
        assert_eq!(validate_block(&b, &tree, &policy, NOW, Some(&g.hash())), Ok(()));
    }

    #[test]
    fn unknown_spend_is_accepted() {
        let (tree, g, policy) = setup();
        let coinbase = Transaction::coinbase(b"cb", 50, vec![0x51]);
        let mut spend = Transaction::coinbase(b"", 10, vec![0x51]);
        spend.inputs[0].previous_output = crate::block::OutPoint::new(crate::hash::sha256d(b"nowhere"), 3);
        let block = mine_block(&g, g.time + 600, g.bits, vec![coinbase, spend]);
        assert_eq!(validate_block(&block, &tree, &policy, NOW, Some(&g.hash())), Ok(()));
    }

    #[test]
    fn structure_errors() {
        let (_, g, _) = setup();
        let mut block = child_block(&g, 1);
        block.transactions.push(block.transactions[0].clone());
        assert_eq!(check_block_structure(&block), Err(BlockViolation::ExtraCoinbase(1)));
        block.transactions.clear();
        assert_eq!(check_block_structure(&block), Err(BlockViolation::Empty));
    }

    #[test]
    fn retarget_adjusts_at_interval() {
        // an easy limit with retargeting enabled and a short interval
        let limit = 0x207fffff;
        let policy = ValidationPolicy {
            pow_limit_bits: limit,
            retarget: true,
            retarget_interval: 8,
            target_timespan: 8 * 600,
        };
        let mut start = NetworkKind::Regtest.genesis_header();
        start.bits = 0x1f7fffff;
        grind(&mut start).unwrap();
        let mut tree = BlockTree::new(start, WorkPolicy::Target).unwrap();
        let mut tip = start;
        for i in 0..7u32 {
            // blocks twice as fast as the target spacing
            let b = mine_block(&tip, tip.time + 300, tip.bits, vec![Transaction::coinbase(&i.to_le_bytes(), 1, vec![])]);
            assert_eq!(validate_header(&b.header, &tree, &policy, NOW), Ok(()));
            tree.insert_header(b.header).unwrap();
            tip = b.header;
        }
        let parent = tree.node(&tip.hash()).unwrap();
        let expected = policy.expected_bits(&tree, parent).unwrap();
        // 7 gaps of 300 s over a 4800 s timespan: target scales by 2100/4800
        let old = expand_compact(0x1f7fffff).unwrap();
        let want = compress_target(&(old * 2100u32 / 4800u32));
        assert_eq!(expected, want);
        assert!(expand_compact(expected).unwrap() < expand_compact(0x1f7fffff).unwrap());
    }
}
