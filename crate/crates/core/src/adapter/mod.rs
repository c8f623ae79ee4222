//! The SPV-like endpoint between Bitcoin peers and the canister.
//!
//! The adapter validates and stores every header its peers announce,
//! keeping all valid forks, and fetches block bodies on demand. When the
//! canister sends its anchor and the set of blocks it already holds, the
//! adapter walks its header tree breadth-first from the anchor and returns
//! the next blocks the canister can attach, plus the headers of blocks it
//! cannot (yet) provide.

mod messages;
mod peers;
mod tx_cache;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};

use rand::Rng;
use thiserror::Error;

use crate::block::{Block, BlockHeader, Transaction};
use crate::encode::Decodable;
use crate::hash::Hash256;
use crate::network::NetworkKind;
use crate::pow::WorkPolicy;
use crate::tree::{BlockTree, Inserted, TreeError};
use crate::validation::{check_block_structure, validate_header, BlockViolation, HeaderViolation, ValidationPolicy};

pub use messages::{InvItem, WireMessage};
pub use peers::{AddressSource, DiscoveryReport, PeerConn, PeerId, PeerSet};
pub use tx_cache::{CachedTx, TxCache};

/// Default number of outbound peer connections.
pub const DEFAULT_CONNECTIONS: usize = 5;
pub const MAX_HEADERS: usize = 100;
pub const MAX_RESPONSE_BYTES: usize = 2 * 1024 * 1024;
/// Ten minutes, in milliseconds of simulated time.
pub const TX_EXPIRY_MS: u64 = 10 * 60 * 1000;
/// Largest headers message accepted from a peer.
pub const MAX_HEADERS_PER_MESSAGE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterConfig {
    pub network: NetworkKind,
    /// Target number of outbound connections (ℓ).
    pub connections: usize,
    /// Address pool refill thresholds (t_l, t_u).
    pub addr_low: usize,
    pub addr_high: usize,
    /// Pre-configured peers, used instead of discovery on regtest.
    pub fixed_peers: Vec<PeerId>,
    pub max_headers: usize,
    pub max_size_bytes: usize,
    pub tx_expiry_ms: u64,
    /// From this anchor height on, a response carries at most one block.
    pub checkpoint_height: u32,
    /// How long a block request may stay unanswered before it is re-sent.
    pub fetch_timeout_ms: u64,
    pub validation: ValidationPolicy,
    pub work_policy: WorkPolicy,
}

impl AdapterConfig {
    pub fn for_network(network: NetworkKind) -> Self {
        let (addr_low, addr_high) = network.address_thresholds();
        AdapterConfig {
            network,
            connections: DEFAULT_CONNECTIONS,
            addr_low,
            addr_high,
            fixed_peers: Vec::new(),
            max_headers: MAX_HEADERS,
            max_size_bytes: MAX_RESPONSE_BYTES,
            tx_expiry_ms: TX_EXPIRY_MS,
            checkpoint_height: u32::MAX,
            fetch_timeout_ms: 10_000,
            validation: ValidationPolicy::for_network(network),
            work_policy: WorkPolicy::Target,
        }
    }

    pub fn check(&self) -> Result<(), AdapterError> {
        if self.addr_low > self.addr_high {
            return Err(AdapterError::Config(format!(
                "address thresholds out of order: {} > {}",
                self.addr_low, self.addr_high
            )));
        }
        if self.connections == 0 {
            return Err(AdapterError::Config("at least one connection is required".into()));
        }
        if self.max_headers == 0 {
            return Err(AdapterError::Config("max_headers must be positive".into()));
        }
        Ok(())
    }

    /// Block cap for a response given the requester's anchor height.
    pub fn max_blocks_at_height(&self, anchor_height: u32) -> usize {
        if anchor_height >= self.checkpoint_height {
            1
        } else {
            usize::MAX
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("anchor {0} is not in the header tree")]
    UnknownAnchor(Hash256),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// What the canister already has: its anchor, the blocks it holds above
/// the anchor, and transactions to broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GetSuccessorsRequest {
    pub anchor: BlockHeader,
    pub processed: BTreeSet<Hash256>,
    pub transactions: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GetSuccessorsResponse {
    pub blocks: Vec<(Block, BlockHeader)>,
    pub next_headers: Vec<BlockHeader>,
}

impl GetSuccessorsResponse {
    pub fn block_bytes(&self) -> usize {
        self.blocks.iter().map(|(b, _)| b.size()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeerMessageOutcome {
    pub headers_accepted: usize,
    pub blocks_stored: usize,
    pub penalized: bool,
}

#[derive(Debug, Clone)]
pub struct AdapterState {
    config: AdapterConfig,
    header_tree: BlockTree,
    block_store: HashMap<Hash256, Block>,
    peers: PeerSet,
    tx_cache: TxCache,
    announced_by: HashMap<Hash256, PeerId>,
    in_flight: BTreeMap<Hash256, (PeerId, u64)>,
    outbox: Vec<(PeerId, WireMessage)>,
    round_robin: usize,
    penalized: Vec<PeerId>,
    dropped_transactions: usize,
}

impl AdapterState {
    pub fn new(config: AdapterConfig, genesis: BlockHeader) -> Result<Self, AdapterError> {
        config.check()?;
        let header_tree = BlockTree::new(genesis, config.work_policy)?;
        Ok(AdapterState {
            config,
            header_tree,
            block_store: HashMap::new(),
            peers: PeerSet::default(),
            tx_cache: TxCache::default(),
            announced_by: HashMap::new(),
            in_flight: BTreeMap::new(),
            outbox: Vec::new(),
            round_robin: 0,
            penalized: Vec::new(),
            dropped_transactions: 0,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn header_tree(&self) -> &BlockTree {
        &self.header_tree
    }

    pub fn block(&self, hash: &Hash256) -> Option<&Block> {
        self.block_store.get(hash)
    }

    pub fn block_count(&self) -> usize {
        self.block_store.len()
    }

    pub fn peers(&self) -> &PeerSet {
        &self.peers
    }

    pub fn tx_cache(&self) -> &TxCache {
        &self.tx_cache
    }

    pub fn penalized(&self) -> &[PeerId] {
        &self.penalized
    }

    pub fn in_flight(&self) -> impl Iterator<Item = (&Hash256, &PeerId)> + '_ {
        self.in_flight.iter().map(|(h, (p, _))| (h, p))
    }

    /// Serialized transactions in requests that failed to parse.
    pub fn dropped_transactions(&self) -> usize {
        self.dropped_transactions
    }

    pub fn needs_connections(&self) -> bool {
        self.peers.connection_count() < self.config.connections
    }

    /// Grows the address pool and fills open connection slots. On regtest
    /// with pre-configured peers those are used and the pool is left alone.
    pub fn discover_peers<S, R>(&mut self, source: &mut S, rng: &mut R, now: u64) -> DiscoveryReport
    where
        S: AddressSource + ?Sized,
        R: Rng + ?Sized,
    {
        if self.config.network == NetworkKind::Regtest && !self.config.fixed_peers.is_empty() {
            let mut report = DiscoveryReport::default();
            for peer in self.config.fixed_peers.clone() {
                if !self.peers.is_connected(&peer) {
                    self.peers.connect(peer, now);
                    report.connected += 1;
                }
            }
            return report;
        }
        let cfg = &self.config;
        self.peers.discover(source, rng, cfg.addr_low, cfg.addr_high, cfg.connections, now)
    }

    pub fn connect_peer(&mut self, peer: PeerId, now: u64) {
        self.peers.connect(peer, now);
    }

    pub fn drop_peer(&mut self, peer: &PeerId) -> bool {
        let dropped = self.peers.disconnect(peer);
        if dropped {
            self.in_flight.retain(|_, (p, _)| p != peer);
        }
        dropped
    }

    pub fn add_addresses(&mut self, addrs: impl IntoIterator<Item = PeerId>) {
        self.peers.add_addresses(addrs);
    }

    /// Validates `header` and adds it to the header tree. Competing forks
    /// are all retained; re-adding a known header is a no-op.
    pub fn accept_header(&mut self, header: BlockHeader, now: u64) -> Result<Inserted, HeaderViolation> {
        if self.header_tree.contains(&header.hash()) {
            return Ok(Inserted::AlreadyPresent);
        }
        validate_header(&header, &self.header_tree, &self.config.validation, secs(now))?;
        Ok(self.header_tree.insert_header(header).expect("validated header has a parent"))
    }

    /// Stores a block body whose header is already known. Unknown headers
    /// are ignored and reported as `Ok(false)`.
    pub fn store_block(&mut self, block: Block) -> Result<bool, BlockViolation> {
        let hash = block.hash();
        if !self.header_tree.contains(&hash) {
            return Ok(false);
        }
        check_block_structure(&block)?;
        self.in_flight.remove(&hash);
        self.block_store.insert(hash, block);
        Ok(true)
    }

    /// Answers a successor request.
    ///
    /// Walks the header tree breadth-first from the anchor, siblings in
    /// ascending hash order. A header is returned with its block when the
    /// requester does not hold it yet but holds (or is about to receive)
    /// its parent; the anchor itself counts as held. Blocks stop being
    /// added once the payload reaches the size limit (the block crossing it
    /// is kept) or the per-response block cap is hit. Headers neither held
    /// by the requester nor returned with a body go to `next_headers`, up
    /// to the header limit. Missing bodies are requested from peers.
    pub fn handle_request(&mut self, req: &GetSuccessorsRequest, now: u64) -> Result<GetSuccessorsResponse, AdapterError> {
        let anchor = req.anchor.hash();
        let anchor_height = self.header_tree.height(&anchor).ok_or(AdapterError::UnknownAnchor(anchor))?;

        for raw in &req.transactions {
            match Transaction::deserialize(raw) {
                Ok(tx) => {
                    self.tx_cache.add(tx, now);
                }
                Err(_) => self.dropped_transactions += 1,
            }
        }

        let max_blocks = self.config.max_blocks_at_height(anchor_height);
        let mut response = GetSuccessorsResponse::default();
        let mut included: HashSet<Hash256> = HashSet::new();
        let mut size = 0usize;
        let mut to_fetch = Vec::new();
        let mut queue = VecDeque::from([anchor]);

        while response.next_headers.len() < self.config.max_headers {
            let Some(cur) = queue.pop_front() else { break };
            let node = self.header_tree.node(&cur).expect("queued from tree");
            queue.extend(node.children().iter().copied());
            if cur == anchor {
                continue;
            }
            let held = req.processed.contains(&cur);
            let prev = node.prev().expect("non-root");
            let parent_ready = prev == anchor || req.processed.contains(&prev) || included.contains(&prev);
            if !held && parent_ready {
                match self.block_store.get(&cur) {
                    Some(block) => {
                        if size < self.config.max_size_bytes && response.blocks.len() < max_blocks {
                            size += block.size();
                            let header = *node.header().expect("adapter trees keep headers");
                            response.blocks.push((block.clone(), header));
                            included.insert(cur);
                        }
                    }
                    None => to_fetch.push(cur),
                }
            }
            if !held && !included.contains(&cur) {
                response.next_headers.push(*node.header().expect("adapter trees keep headers"));
            }
        }

        for hash in to_fetch {
            self.schedule_fetch(hash, now);
        }
        Ok(response)
    }

    fn schedule_fetch(&mut self, hash: Hash256, now: u64) {
        if let Some((_, sent)) = self.in_flight.get(&hash) {
            if now.saturating_sub(*sent) < self.config.fetch_timeout_ms {
                return;
            }
        }
        let peer = match self.announced_by.get(&hash) {
            Some(p) if self.peers.is_connected(p) => *p,
            _ => {
                let connected: Vec<PeerId> = self.peers.connected().copied().collect();
                if connected.is_empty() {
                    return;
                }
                self.round_robin = (self.round_robin + 1) % connected.len();
                connected[self.round_robin]
            }
        };
        self.in_flight.insert(hash, (peer, now));
        self.outbox.push((peer, WireMessage::GetData(vec![InvItem::Block(hash)])));
    }

    /// Expires and re-advertises cached transactions.
    pub fn tick_tx_cache(&mut self, now: u64) {
        let peers = self.peers.connected_set();
        for (peer, txid) in self.tx_cache.tick(now, self.config.tx_expiry_ms, &peers) {
            self.outbox.push((peer, WireMessage::Inv(vec![InvItem::Tx(txid)])));
        }
    }

    /// Locator of the highest known header (smallest hash on ties), newest
    /// first, with exponentially growing gaps, ending at the root.
    pub fn locator(&self) -> Vec<Hash256> {
        let tree = &self.header_tree;
        let tip = *tree.at_height(tree.max_height()).next().expect("non-empty height");
        let mut out = Vec::new();
        let mut step = 1usize;
        let mut cursor = tree.ancestors(tip).peekable();
        let mut idx = 0usize;
        let mut next_idx = 0usize;
        while let Some(node) = cursor.next() {
            if idx == next_idx || cursor.peek().is_none() {
                out.push(node.hash());
                if out.len() >= 10 {
                    step *= 2;
                }
                next_idx = idx + step;
            }
            idx += 1;
        }
        out
    }

    fn penalize(&mut self, peer: PeerId) {
        if self.drop_peer(&peer) {
            self.penalized.push(peer);
        }
    }

    /// Processes one message from a connected peer and returns the
    /// messages to send in reply (including any queued block requests).
    pub fn on_peer_message(&mut self, from: PeerId, msg: WireMessage, now: u64) -> (PeerMessageOutcome, Vec<(PeerId, WireMessage)>) {
        let mut outcome = PeerMessageOutcome::default();
        if !self.peers.is_connected(&from) {
            return (outcome, self.take_outbox());
        }
        match msg {
            WireMessage::Headers(headers) => {
                if headers.len() > MAX_HEADERS_PER_MESSAGE {
                    self.penalize(from);
                    outcome.penalized = true;
                    return (outcome, self.take_outbox());
                }
                let mut orphaned = false;
                for header in headers {
                    let hash = header.hash();
                    match self.accept_header(header, now) {
                        Ok(Inserted::New) => {
                            outcome.headers_accepted += 1;
                            self.announced_by.insert(hash, from);
                            self.peers.note_announcement(&from);
                        }
                        Ok(Inserted::AlreadyPresent) => {}
                        Err(HeaderViolation::Orphan(_)) => orphaned = true,
                        // a header from the future may become valid later
                        Err(HeaderViolation::TimeTooNew { .. }) => {}
                        Err(_) => {
                            self.penalize(from);
                            outcome.penalized = true;
                            break;
                        }
                    }
                }
                if orphaned && !outcome.penalized {
                    let locator = self.locator();
                    self.outbox.push((from, WireMessage::GetHeaders(locator)));
                }
            }
            WireMessage::Inv(items) => {
                let unknown_block = items
                    .iter()
                    .any(|i| matches!(i, InvItem::Block(h) if !self.header_tree.contains(h)));
                for item in &items {
                    if let InvItem::Tx(txid) = item {
                        // the peer already has it
                        self.tx_cache.mark_delivered(txid, from);
                    }
                }
                if unknown_block {
                    let locator = self.locator();
                    self.outbox.push((from, WireMessage::GetHeaders(locator)));
                }
            }
            WireMessage::Block(block) => match self.store_block(block) {
                Ok(stored) => outcome.blocks_stored += usize::from(stored),
                Err(_) => {
                    self.penalize(from);
                    outcome.penalized = true;
                }
            },
            WireMessage::GetData(items) => {
                for item in items {
                    if let InvItem::Tx(txid) = item {
                        if let Some(tx) = self.tx_cache.mark_delivered(&txid, from) {
                            let tx = tx.clone();
                            self.outbox.push((from, WireMessage::Tx(tx)));
                        }
                    }
                }
            }
            WireMessage::Addr(addrs) => self.peers.add_addresses(addrs),
            WireMessage::GetHeaders(_) | WireMessage::Tx(_) => {}
        }
        (outcome, self.take_outbox())
    }

    pub fn take_outbox(&mut self) -> Vec<(PeerId, WireMessage)> {
        std::mem::take(&mut self.outbox)
    }
}

/// Simulated milliseconds to header-time seconds.
pub fn secs(ms: u64) -> u32 {
    u32::try_from(ms / 1000).unwrap_or(u32::MAX)
}
