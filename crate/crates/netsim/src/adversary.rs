use std::collections::HashMap;

use bitsync_core::{Block, BlockHeader, Hash256, Transaction};

/// The attacker's private chain: a base block on the honest chain and the
/// fork blocks mined on top of it, of which the first `released` are
/// public.
#[derive(Debug, Clone, Default)]
pub struct AdversaryState {
    pub base: Option<(BlockHeader, u32)>,
    pub fork: Vec<Block>,
    pub released: usize,
    pub corrupting_tx: Option<Transaction>,
    /// Every fork block ever mined, including abandoned forks.
    pub archive: HashMap<Hash256, Block>,
    pub mined: u64,
    /// Blocks thrown away because they would have broken the hash-rate
    /// bound.
    pub discarded: u64,
    pub restarts: u64,
}

impl AdversaryState {
    pub fn is_active(&self) -> bool {
        self.base.is_some()
    }

    pub fn restart(&mut self, base: BlockHeader, height: u32) {
        if self.base.is_some() {
            self.restarts += 1;
        }
        self.base = Some((base, height));
        self.fork.clear();
        self.released = 0;
    }

    pub fn tip_height(&self) -> Option<u32> {
        self.base.as_ref().map(|(_, h)| h + self.fork.len() as u32)
    }

    pub fn next_height(&self) -> Option<u32> {
        self.tip_height().map(|h| h + 1)
    }

    pub fn base_hash(&self) -> Option<Hash256> {
        self.base.as_ref().map(|(h, _)| h.hash())
    }

    /// Header the next fork block builds on.
    pub fn parent_header(&self) -> Option<&BlockHeader> {
        self.fork.last().map(|b| &b.header).or(self.base.as_ref().map(|(h, _)| h))
    }

    pub fn push(&mut self, block: Block) {
        self.archive.insert(block.hash(), block.clone());
        self.fork.push(block);
        self.mined += 1;
    }

    /// Marks every mined block public and returns the newly released ones.
    pub fn release_all(&mut self) -> &[Block] {
        let start = self.released;
        self.released = self.fork.len();
        &self.fork[start..]
    }

    pub fn released_blocks(&self) -> &[Block] {
        &self.fork[..self.released]
    }

    pub fn fork_index(&self, hash: &Hash256) -> Option<usize> {
        self.fork.iter().position(|b| b.hash() == *hash)
    }

    /// Whether a fork block at `new_height` respects the hash-rate bound:
    /// it must stay below `honest_height + c_star`, or carry less total
    /// work than the honest chain. Difficulty is constant in the
    /// simulator, so total work is proportional to height and the second
    /// clause is implied by the first.
    pub fn within_budget(new_height: u32, honest_height: u32, c_star: u64) -> bool {
        let less_work = new_height < honest_height;
        u64::from(new_height) < u64::from(honest_height) + c_star || less_work
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_boundary() {
        assert!(AdversaryState::within_budget(12, 10, 3));
        assert!(!AdversaryState::within_budget(13, 10, 3));
        assert!(AdversaryState::within_budget(5, 10, 1));
    }

    #[test]
    fn release_is_incremental() {
        use bitsync_core::mining::child_block;
        use bitsync_core::NetworkKind;
        let g = NetworkKind::Regtest.genesis_header();
        let mut adv = AdversaryState::default();
        adv.restart(g, 0);
        assert_eq!(adv.parent_header(), Some(&g));
        let a = child_block(&g, 1);
        adv.push(a.clone());
        assert_eq!(adv.release_all().len(), 1);
        adv.push(child_block(&a.header, 2));
        assert_eq!(adv.release_all().len(), 1);
        assert_eq!(adv.released_blocks().len(), 2);
        assert_eq!(adv.tip_height(), Some(2));
        assert_eq!(adv.fork_index(&a.hash()), Some(0));
    }
}
