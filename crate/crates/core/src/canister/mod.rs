//! The replicated Bitcoin state machine.
//!
//! The canister keeps the UTXO set up to its anchor, every header it has
//! validated, and full blocks above the anchor. Adapter responses grow the
//! tree; a block at the height right above the anchor becomes the new anchor
//! once it is difficulty-based δ-stable relative to the current anchor's
//! work. Reads combine the UTXO set with the unstable blocks of the
//! selected chain.

mod api;
mod snapshot;
mod utxo;

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

use crate::adapter::{GetSuccessorsRequest, GetSuccessorsResponse};
use crate::block::{Block, BlockHeader};
use crate::hash::Hash256;
use crate::network::NetworkKind;
use crate::pow::WorkPolicy;
use crate::stability::{self, ByWork};
use crate::tree::{BlockTree, TreeError};
use crate::validation::{validate_block, validate_header, BlockViolation, HeaderViolation, ValidationPolicy};

pub use api::{ApiError, PageToken, UtxosFilter, UtxosPage};
pub use snapshot::SnapshotError;
pub use utxo::{utxo_key, BlockApplied, Utxo, UtxoKey, UtxoSet};

pub const DEFAULT_DELTA: u64 = 144;
pub const DEFAULT_TAU: u32 = 2;
pub const DEFAULT_PAGE_SIZE: usize = 1000;

/// Which test moves the anchor forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AnchorRule {
    /// Depth and separation from every rival, both in multiples of the
    /// anchor's work.
    #[default]
    FullStability,
    /// Depth alone.
    DepthOnly,
}

impl std::str::FromStr for AnchorRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(AnchorRule::FullStability),
            "depth-only" => Ok(AnchorRule::DepthOnly),
            _ => Err(format!("unknown anchor rule `{s}` (expected full or depth-only)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanisterConfig {
    pub network: NetworkKind,
    pub delta: u64,
    pub tau: u32,
    pub page_size: usize,
    pub anchor_rule: AnchorRule,
    pub validation: ValidationPolicy,
    pub work_policy: WorkPolicy,
}

impl CanisterConfig {
    pub fn for_network(network: NetworkKind) -> Self {
        CanisterConfig {
            network,
            delta: DEFAULT_DELTA,
            tau: DEFAULT_TAU,
            page_size: DEFAULT_PAGE_SIZE,
            anchor_rule: AnchorRule::default(),
            validation: ValidationPolicy::for_network(network),
            work_policy: WorkPolicy::Target,
        }
    }

    pub fn check(&self) -> Result<(), CanisterError> {
        if self.delta == 0 {
            return Err(CanisterError::Config("delta must be positive".into()));
        }
        if self.page_size == 0 {
            return Err(CanisterError::Config("page size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanisterError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Why an item of a response was not applied.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error(transparent)]
    Block(#[from] BlockViolation),
    #[error("header does not match the block")]
    HeaderMismatch,
    #[error("header {hash} at height {height} would fork at or below the anchor height {anchor_height}")]
    BelowAnchor { hash: Hash256, height: u32, anchor_height: u32 },
}

impl From<HeaderViolation> for Rejection {
    fn from(v: HeaderViolation) -> Self {
        Rejection::Block(BlockViolation::Header(v))
    }
}

/// Summary of one processed response.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ResponseReport {
    pub blocks_accepted: usize,
    pub headers_accepted: usize,
    pub rejected: Vec<(Hash256, Rejection)>,
    /// New anchors in the order they were adopted.
    pub anchors: Vec<Hash256>,
    pub missing_spends: usize,
}

/// Problems that the canister cannot repair by itself.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Headers seen that would fork at or below the anchor height.
    pub below_anchor_forks: Vec<Hash256>,
    /// Inputs spending outpoints absent from the UTXO set.
    pub missing_spends: usize,
}

#[derive(Debug, Clone)]
pub struct CanisterState {
    config: CanisterConfig,
    utxos: UtxoSet,
    tree: BlockTree,
    anchor: Hash256,
    outbound: VecDeque<Vec<u8>>,
    synced: bool,
    /// Blocks (by header hash) that contained each transaction.
    tx_blocks: HashMap<Hash256, Vec<Hash256>>,
    diagnostics: Diagnostics,
}

impl CanisterState {
    /// A canister whose anchor is `genesis`. The genesis outputs are not
    /// added to the UTXO set, matching Bitcoin where they are unspendable.
    pub fn new(config: CanisterConfig, genesis: BlockHeader) -> Result<Self, CanisterError> {
        config.check()?;
        let tree = BlockTree::new(genesis, config.work_policy)?;
        Ok(CanisterState {
            config,
            utxos: UtxoSet::default(),
            anchor: tree.root(),
            tree,
            outbound: VecDeque::new(),
            synced: true,
            tx_blocks: HashMap::new(),
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn config(&self) -> &CanisterConfig {
        &self.config
    }

    pub fn utxos(&self) -> &UtxoSet {
        &self.utxos
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn anchor(&self) -> Hash256 {
        self.anchor
    }

    pub fn anchor_height(&self) -> u32 {
        self.tree.height(&self.anchor).expect("anchor lies on the tree")
    }

    pub fn anchor_header(&self) -> BlockHeader {
        *self.tree.header(&self.anchor).expect("canister keeps all headers")
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn outbound_len(&self) -> usize {
        self.outbound.len()
    }

    /// Hashes of the headers whose blocks are held.
    pub fn held_blocks(&self) -> impl Iterator<Item = Hash256> + '_ {
        let anchor_height = self.anchor_height();
        (anchor_height + 1..=self.tree.max_height())
            .flat_map(move |h| self.tree.at_height(h))
            .filter(|h| self.tree.block(h).is_some())
            .copied()
    }

    /// Highest height with a held block, or the anchor height if none.
    pub fn max_block_height(&self) -> u32 {
        let anchor_height = self.anchor_height();
        (anchor_height + 1..=self.tree.max_height())
            .rev()
            .find(|h| self.tree.at_height(*h).any(|x| self.tree.block(x).is_some()))
            .unwrap_or(anchor_height)
    }

    pub fn build_request(&mut self) -> GetSuccessorsRequest {
        GetSuccessorsRequest {
            anchor: self.anchor_header(),
            processed: self.held_blocks().collect(),
            transactions: self.outbound.drain(..).collect(),
        }
    }

    /// Applies an adapter response. Each block and header is validated on
    /// its own; a bad item is reported and skipped. `now` is in
    /// milliseconds.
    pub fn handle_response(&mut self, resp: &GetSuccessorsResponse, now: u64) -> ResponseReport {
        let mut report = ResponseReport::default();
        let now_secs = crate::adapter::secs(now);
        for (block, header) in &resp.blocks {
            let hash = header.hash();
            match self.accept_block(block, header, now_secs) {
                Ok(()) => {
                    report.blocks_accepted += 1;
                    self.advance_anchor(&mut report);
                }
                Err(e) => report.rejected.push((hash, e)),
            }
        }
        for header in &resp.next_headers {
            let hash = header.hash();
            if self.tree.contains(&hash) {
                continue;
            }
            match self.accept_header(header, now_secs) {
                Ok(()) => report.headers_accepted += 1,
                Err(e) => report.rejected.push((hash, e)),
            }
        }
        self.refresh_synced();
        report
    }

    fn check_above_anchor(&mut self, header: &BlockHeader) -> Result<(), Rejection> {
        let anchor_height = self.anchor_height();
        if let Some(parent_height) = self.tree.height(&header.prev) {
            if parent_height < anchor_height || (parent_height == anchor_height && header.prev != self.anchor) {
                let hash = header.hash();
                if !self.diagnostics.below_anchor_forks.contains(&hash) {
                    log::warn!("header {hash} forks below the anchor; state reset required if it wins");
                    self.diagnostics.below_anchor_forks.push(hash);
                }
                return Err(Rejection::BelowAnchor { hash, height: parent_height + 1, anchor_height });
            }
        }
        Ok(())
    }

    fn accept_header(&mut self, header: &BlockHeader, now_secs: u32) -> Result<(), Rejection> {
        self.check_above_anchor(header)?;
        validate_header(header, &self.tree, &self.config.validation, now_secs)?;
        self.tree.insert_header(*header).expect("validated header has a parent");
        Ok(())
    }

    fn accept_block(&mut self, block: &Block, header: &BlockHeader, now_secs: u32) -> Result<(), Rejection> {
        if block.header != *header {
            return Err(Rejection::HeaderMismatch);
        }
        let hash = header.hash();
        if self.tree.contains(&hash) {
            if self.tree.height(&hash).is_some_and(|h| h <= self.anchor_height()) {
                // already part of the stable chain
                return Ok(());
            }
            crate::validation::check_block_structure(block)?;
            let prev = &header.prev;
            if *prev != self.anchor && self.tree.block(prev).is_none() {
                return Err(BlockViolation::ParentBodyUnavailable(*prev).into());
            }
        } else {
            self.check_above_anchor(header)?;
            validate_block(block, &self.tree, &self.config.validation, now_secs, Some(&self.anchor))?;
        }
        if self.tree.block(&hash).is_some() {
            return Ok(());
        }
        self.tree.insert_block(block.clone()).expect("validated block has a parent");
        for tx in &block.transactions {
            self.tx_blocks.entry(tx.txid()).or_default().push(hash);
        }
        Ok(())
    }

    fn anchor_candidate(&self) -> Option<Hash256> {
        let node = self.tree.node(&self.anchor).expect("anchor lies on the tree");
        let mut best: Option<(&crate::Work, Hash256)> = None;
        for child in node.children() {
            if self.tree.block(child).is_none() {
                continue;
            }
            let depth = self.tree.node(child).expect("child present").work_depth();
            // children are in ascending hash order, so ties keep the first
            if best.is_none_or(|(d, _)| depth > d) {
                best = Some((depth, *child));
            }
        }
        best.map(|(_, h)| h)
    }

    fn is_anchor_ready(&self, candidate: &Hash256) -> bool {
        let reference = self.tree.node(&self.anchor).expect("anchor lies on the tree").work().clone();
        let threshold = stability::DepthCost::scaled(&reference, self.config.delta);
        match self.config.anchor_rule {
            AnchorRule::FullStability => stability::is_stable::<ByWork>(&self.tree, candidate, &threshold),
            AnchorRule::DepthOnly => stability::has_depth::<ByWork>(&self.tree, candidate, &threshold),
        }
        .expect("candidate lies on the tree")
    }

    fn advance_anchor(&mut self, report: &mut ResponseReport) {
        while let Some(next) = self.anchor_candidate() {
            if !self.is_anchor_ready(&next) {
                break;
            }
            let old = self.anchor;
            let siblings: Vec<Hash256> = self
                .tree
                .node(&old)
                .expect("anchor lies on the tree")
                .children()
                .iter()
                .filter(|c| **c != next)
                .copied()
                .collect();
            for sibling in siblings {
                self.tree.remove_subtree(sibling).expect("sibling present");
            }
            let height = self.tree.height(&next).expect("candidate present");
            let block = self.tree.take_block(&next).expect("candidate has a body");
            let applied = self.utxos.process_block(&block, height);
            self.diagnostics.missing_spends += applied.missing_spends;
            report.missing_spends += applied.missing_spends;
            self.anchor = next;
            report.anchors.push(next);
            log::debug!("anchor advanced to {next} at height {height}");
        }
    }

    fn refresh_synced(&mut self) {
        self.synced = self.tree.max_height() - self.max_block_height() <= self.config.tau;
    }

    /// Blocks currently in the tree that include `txid`.
    pub fn blocks_with_tx(&self, txid: &Hash256) -> Vec<Hash256> {
        self.tx_blocks
            .get(txid)
            .map(|v| v.iter().filter(|h| self.tree.contains(h)).copied().collect())
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests;
