//! Discrete-event world: honest and adversarial miners, Bitcoin peers, one
//! adapter per subnet node, and a canister fed once per round by a
//! uniformly drawn block maker.

use std::collections::{BTreeMap, HashMap, HashSet};

use bitsync_core::adapter::{AdapterConfig, AdapterState, AddressSource, GetSuccessorsResponse, InvItem, PeerId, WireMessage};
use bitsync_core::canister::{CanisterConfig, CanisterState, Rejection};
use bitsync_core::mining::mine_block;
use bitsync_core::{
    sha256d, Address, Block, BlockHeader, BlockTree, Hash256, NetworkKind, OutPoint, Transaction, TxIn, TxOut, WorkPolicy,
};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::adversary::AdversaryState;
use crate::observe::ObservationLog;
use crate::params::{ParamError, SimParams, Strategy};

pub const NETWORK: NetworkKind = NetworkKind::Regtest;
const COIN: u64 = 100_000_000;
const MAX_HEADERS_REPLY: usize = 2000;
/// Address pool thresholds for simulated adapters. Regtest defaults to a
/// single address, which would make discovery degenerate.
const ADDR_THRESHOLDS: (usize, usize) = (100, 1000);

fn adapter_config(ell: usize) -> AdapterConfig {
    AdapterConfig {
        connections: ell,
        addr_low: ADDR_THRESHOLDS.0,
        addr_high: ADDR_THRESHOLDS.1,
        ..AdapterConfig::for_network(NETWORK)
    }
}

/// Absolute time (ms) of simulation time zero: one hour after the regtest
/// genesis timestamp.
pub fn epoch_ms() -> u64 {
    (u64::from(NETWORK.genesis_header().time) + 3600) * 1000
}

#[derive(Debug, Clone)]
enum Event {
    HonestMine,
    AdversaryMine,
    Round,
    AdapterTick(usize),
    ToAdapter { adapter: usize, from: PeerId, msg: WireMessage },
    ToPeer { peer: PeerId, adapter: usize, msg: WireMessage },
    DowntimeStart,
    DowntimeEnd,
}

/// Addresses drawn uniformly from the simulated Bitcoin population.
#[derive(Debug, Clone, Copy)]
pub struct PopulationSource {
    pub population: usize,
}

impl AddressSource for PopulationSource {
    fn fetch_addresses<R: Rng + ?Sized>(&mut self, rng: &mut R, max: usize) -> Vec<PeerId> {
        let k = max.min(self.population);
        index::sample(rng, self.population, k).into_iter().map(|i| PeerId(i as u32)).collect()
    }
}

/// Peer ids for `n` adapters, each drawn through the adapter's own
/// discovery from a population of `population` nodes.
pub fn sample_adapter_peers<R: Rng + ?Sized>(rng: &mut R, n: usize, ell: usize, population: usize) -> Vec<Vec<PeerId>> {
    let genesis = NETWORK.genesis_header();
    (0..n)
        .map(|_| {
            let mut adapter = AdapterState::new(adapter_config(ell), genesis)
                .expect("valid adapter config");
            adapter.discover_peers(&mut PopulationSource { population }, rng, 0);
            adapter.peers().connected().copied().collect()
        })
        .collect()
}

/// The honest miners' view: every honest block with the first-seen
/// longest chain as tip.
#[derive(Debug, Clone)]
struct HonestChain {
    tree: BlockTree,
    tip: Hash256,
    /// Tip changes as (simulation time, new tip).
    tips: Vec<(u64, Hash256)>,
}

impl HonestChain {
    fn new(genesis: BlockHeader) -> Self {
        let tree = BlockTree::new(genesis, WorkPolicy::Target).expect("genesis");
        let tip = tree.root();
        HonestChain { tree, tip, tips: vec![(0, tip)] }
    }

    fn height(&self) -> u32 {
        self.tree.height(&self.tip).expect("tip in tree")
    }

    fn tip_as_of(&self, t: u64) -> Hash256 {
        self.tips.iter().rev().find(|(at, _)| *at <= t).map_or(self.tips[0].1, |(_, h)| *h)
    }

    fn add(&mut self, block: Block, now: u64) {
        let hash = block.hash();
        self.tree.insert_block(block).expect("honest blocks extend the honest tree");
        if self.tree.height(&hash) > Some(self.height()) {
            self.tip = hash;
            self.tips.push((now, hash));
        }
    }

    fn on_best_chain(&self, hash: &Hash256) -> bool {
        self.tree.height(hash).is_some_and(|h| self.tree.ancestor_at(self.tip, h) == Some(*hash))
    }

    /// Headers strictly above `from` up to `to`, oldest first.
    fn path(&self, from_height: u32, to: Hash256) -> Vec<BlockHeader> {
        let mut out: Vec<BlockHeader> = self
            .tree
            .ancestors(to)
            .take_while(|n| n.height() > from_height)
            .map(|n| *n.header().expect("honest tree keeps headers"))
            .collect();
        out.reverse();
        out
    }

    fn headers_after_locator(&self, locator: &[Hash256]) -> Vec<BlockHeader> {
        let Some(start) = locator.iter().find(|h| self.on_best_chain(h)) else { return Vec::new() };
        let mut headers = self.path(self.tree.height(start).expect("on chain"), self.tip);
        headers.truncate(MAX_HEADERS_REPLY);
        headers
    }
}

/// Counters accumulated over a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub rounds: u64,
    pub downtime_rounds: u64,
    pub malicious_rounds: u64,
    pub blocks_ingested: u64,
    pub headers_ingested: u64,
    pub anchor_advances: u64,
    pub reorgs: u64,
    pub rejected_items: u64,
    pub deep_forks: u64,
    pub unsynced_rounds: u64,
    pub penalized_peers: u64,
    pub honest_blocks: u64,
    pub releases: u64,
    /// Largest confirmation count the canister reported for the
    /// corrupting transaction while synced.
    pub max_reported_confirmations: Option<u64>,
    /// Whether each of the first `c_star` rounds after the downtime had a
    /// malicious block maker.
    pub post_downtime_makers: Vec<bool>,
    /// Largest confirmation count for the corrupting transaction reported
    /// before the first honest round after the downtime.
    pub confirmations_before_honest_round: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    params: SimParams,
    seed: u64,
    clock: u64,
    seq: u64,
    queue: BTreeMap<(u64, u64), Event>,
    rng: ChaCha8Rng,
    honest: HonestChain,
    adversary: AdversaryState,
    adapters: Vec<AdapterState>,
    canister: CanisterState,
    corrupted: usize,
    in_downtime: bool,
    downtime_over: bool,
    honest_round_after_downtime: bool,
    scripts: Vec<Vec<u8>>,
    spendable: Vec<(OutPoint, u64)>,
    mempool: Vec<Transaction>,
    mempool_ids: HashSet<Hash256>,
    salt: u64,
    log: ObservationLog,
    metrics: Metrics,
    canister_tip: Hash256,
    was_synced: bool,
}

fn p2wpkh(tag: u8, i: usize) -> Vec<u8> {
    let mut script = vec![0x00, 20];
    script.extend_from_slice(&(i as u64).to_le_bytes());
    script.extend_from_slice(&[tag; 12]);
    script
}

fn adversary_script() -> Vec<u8> {
    p2wpkh(0xad, 0)
}

fn short(h: &Hash256) -> String {
    h.to_string()[..16].to_string()
}

impl SimWorld {
    pub fn new(params: SimParams, seed: u64) -> Result<Self, ParamError> {
        params.validate()?;
        let genesis = NETWORK.genesis_header();
        let config = AdapterConfig { checkpoint_height: params.checkpoint_height, ..adapter_config(params.ell) };
        let adapters = (0..params.n)
            .map(|_| AdapterState::new(config.clone(), genesis))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ParamError(e.to_string()))?;
        let canister_config = CanisterConfig {
            delta: params.delta,
            tau: params.tau,
            page_size: params.page_size,
            ..CanisterConfig::for_network(NETWORK)
        };
        let canister = CanisterState::new(canister_config, genesis).map_err(|e| ParamError(e.to_string()))?;
        let honest = HonestChain::new(genesis);
        let mut adversary = AdversaryState::default();
        if params.strategy != Strategy::None {
            adversary.corrupting_tx = Some(Transaction {
                version: 2,
                inputs: vec![TxIn {
                    previous_output: OutPoint::new(sha256d(&seed.to_le_bytes()), 0),
                    script_sig: b"corrupting".to_vec(),
                    sequence: u32::MAX,
                }],
                outputs: vec![TxOut { value: COIN, script_pubkey: adversary_script() }],
                lock_time: 0,
            });
        }
        let mut world = SimWorld {
            corrupted: params.corrupted_count(),
            scripts: (0..params.addresses).map(|i| p2wpkh(0x5a, i)).collect(),
            canister_tip: canister.anchor(),
            was_synced: canister.is_synced(),
            params,
            seed,
            clock: 0,
            seq: 0,
            queue: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            honest,
            adversary,
            adapters,
            canister,
            in_downtime: false,
            downtime_over: false,
            honest_round_after_downtime: false,
            spendable: Vec::new(),
            mempool: Vec::new(),
            mempool_ids: HashSet::new(),
            salt: 0,
            log: ObservationLog::default(),
            metrics: Metrics::default(),
        };
        world.start();
        Ok(world)
    }

    fn start(&mut self) {
        for i in 0..self.adapters.len() {
            self.refill_connections(i);
            let peers: Vec<String> = self.adapters[i].peers().connected().map(|p| p.to_string()).collect();
            self.log.push(0, "connect", format!("adapter{i}"), peers.join(" "));
            let tick = self.rng.gen_range(0..self.params.adapter_tick_ms);
            self.schedule(tick, Event::AdapterTick(i));
        }
        if self.params.strategy == Strategy::WithholdAndRelease {
            let tip = self.honest_tip_header();
            self.adversary.restart(tip, 0);
        }
        self.schedule_honest_mine();
        self.schedule_adversary_mine();
        self.schedule(self.params.round_interval_ms, Event::Round);
        if let Some((start, end)) = self.params.downtime {
            self.schedule_downtime(start, end);
        }
    }

    /// Adds a canister downtime window in simulation time.
    pub fn schedule_downtime(&mut self, start: u64, end: u64) {
        self.schedule_at(start.max(self.clock), Event::DowntimeStart);
        self.schedule_at(end.max(self.clock), Event::DowntimeEnd);
    }

    fn schedule(&mut self, delay: u64, event: Event) {
        self.schedule_at(self.clock + delay, event);
    }

    fn schedule_at(&mut self, at: u64, event: Event) {
        self.seq += 1;
        self.queue.insert((at, self.seq), event);
    }

    fn latency(&mut self) -> u64 {
        self.rng.gen_range(self.params.latency_min_ms..=self.params.latency_max_ms)
    }

    fn exp_delay(&mut self, mean_ms: f64) -> u64 {
        let exp = Exp::new(1.0 / mean_ms).expect("positive rate");
        exp.sample(&mut self.rng).ceil().max(1.0) as u64
    }

    fn schedule_honest_mine(&mut self) {
        let mean = self.params.honest_block_interval_ms as f64 / (1.0 - self.params.adversary_hash_fraction);
        let d = self.exp_delay(mean);
        self.schedule(d, Event::HonestMine);
    }

    fn schedule_adversary_mine(&mut self) {
        let alpha = self.params.adversary_hash_fraction;
        if alpha <= 0.0 || self.params.strategy == Strategy::None {
            return;
        }
        let d = self.exp_delay(self.params.honest_block_interval_ms as f64 / alpha);
        self.schedule(d, Event::AdversaryMine);
    }

    /// Absolute time in ms, as seen by adapters and the canister.
    pub fn now_ms(&self) -> u64 {
        epoch_ms() + self.clock
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn canister(&self) -> &CanisterState {
        &self.canister
    }

    pub fn canister_mut(&mut self) -> &mut CanisterState {
        &mut self.canister
    }

    pub fn adapters(&self) -> &[AdapterState] {
        &self.adapters
    }

    pub fn adversary(&self) -> &AdversaryState {
        &self.adversary
    }

    pub fn log(&self) -> &ObservationLog {
        &self.log
    }

    pub fn metrics(&self) -> &Metrics {
        &self.metrics
    }

    pub fn honest_height(&self) -> u32 {
        self.honest.height()
    }

    pub fn honest_tip(&self) -> Hash256 {
        self.honest.tip
    }

    fn honest_tip_header(&self) -> BlockHeader {
        *self.honest.tree.header(&self.honest.tip).expect("tip header")
    }

    pub fn is_honest_block(&self, hash: &Hash256) -> bool {
        self.honest.tree.contains(hash)
    }

    /// Any block ever mined in this world, honest or adversarial.
    pub fn block(&self, hash: &Hash256) -> Option<&Block> {
        self.honest.tree.block(hash).or_else(|| self.adversary.archive.get(hash))
    }

    pub fn corrupting_txid(&self) -> Option<Hash256> {
        self.adversary.corrupting_tx.as_ref().map(Transaction::txid)
    }

    /// Address string of the `i`-th simulated wallet.
    pub fn address(&self, i: usize) -> Option<String> {
        self.scripts.get(i).map(|s| Address::from_script(s).encode(NETWORK))
    }

    pub fn address_count(&self) -> usize {
        self.scripts.len()
    }

    /// Adapters whose every peer is corrupted.
    pub fn eclipsed_adapters(&self) -> Vec<usize> {
        (0..self.adapters.len())
            .filter(|&i| {
                let peers = self.adapters[i].peers();
                peers.connection_count() > 0 && peers.connected().all(|p| (p.0 as usize) < self.corrupted)
            })
            .collect()
    }

    fn is_corrupted(&self, peer: &PeerId) -> bool {
        (peer.0 as usize) < self.corrupted
    }

    /// Processes the next event. Returns `false` once the queue is empty or
    /// the next event lies beyond `until`.
    pub fn step_until(&mut self, until: u64) -> bool {
        let Some((&(at, seq), _)) = self.queue.first_key_value() else { return false };
        if at > until {
            return false;
        }
        let event = self.queue.remove(&(at, seq)).expect("present");
        self.clock = at;
        self.dispatch(event);
        true
    }

    pub fn step(&mut self) -> bool {
        self.step_until(u64::MAX)
    }

    /// Runs every event up to simulation time `t` and sets the clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.step_until(t) {}
        self.clock = self.clock.max(t);
    }

    /// Runs for the configured duration.
    pub fn run(&mut self) -> &Metrics {
        self.run_until(self.params.duration_ms);
        &self.metrics
    }

    fn dispatch(&mut self, event: Event) {
        match event {
            Event::HonestMine => {
                self.honest_mine();
                self.schedule_honest_mine();
            }
            Event::AdversaryMine => {
                self.adversary_mine();
                self.schedule_adversary_mine();
            }
            Event::Round => {
                self.round();
                self.schedule(self.params.round_interval_ms, Event::Round);
            }
            Event::AdapterTick(i) => {
                self.adapter_tick(i);
                self.schedule(self.params.adapter_tick_ms, Event::AdapterTick(i));
            }
            Event::ToAdapter { adapter, from, msg } => self.deliver_to_adapter(adapter, from, msg),
            Event::ToPeer { peer, adapter, msg } => {
                let replies = if self.is_corrupted(&peer) {
                    self.corrupted_reply(msg)
                } else {
                    self.honest_reply(msg)
                };
                for reply in replies {
                    let d = self.latency();
                    self.schedule(d, Event::ToAdapter { adapter, from: peer, msg: reply });
                }
            }
            Event::DowntimeStart => self.downtime_start(),
            Event::DowntimeEnd => {
                if self.in_downtime {
                    self.in_downtime = false;
                    self.downtime_over = true;
                    self.log.push(self.clock, "downtime_end", "canister", "");
                }
            }
        }
    }

    fn downtime_start(&mut self) {
        if self.in_downtime {
            return;
        }
        self.in_downtime = true;
        let tip = self.canister_body_tip();
        let height = self.canister.tree().height(&tip).expect("tip in tree");
        self.log.push(self.clock, "downtime_start", "canister", format!("tip={} height={height}", short(&tip)));
        if self.params.strategy == Strategy::FeedDuringDowntime {
            let header = *self.canister.tree().header(&tip).expect("canister keeps headers above the anchor");
            self.adversary.restart(header, height);
        }
    }

    /// Last block of the canister's current chain that it holds a body for
    /// (or the anchor).
    pub fn canister_body_tip(&self) -> Hash256 {
        *self.canister.considered_chain(None).last().expect("chain starts at the anchor")
    }

    fn refill_connections(&mut self, i: usize) {
        if self.adapters[i].needs_connections() {
            let mut source = PopulationSource { population: self.params.population };
            let now = self.now_ms();
            self.adapters[i].discover_peers(&mut source, &mut self.rng, now);
            let peers: Vec<PeerId> = self.adapters[i].peers().connected().copied().collect();
            let locator = self.adapters[i].locator();
            for p in peers {
                let d = self.latency();
                self.schedule(d, Event::ToPeer { peer: p, adapter: i, msg: WireMessage::GetHeaders(locator.clone()) });
            }
        }
    }

    fn route(&mut self, adapter: usize, outbox: Vec<(PeerId, WireMessage)>) {
        for (peer, msg) in outbox {
            let d = self.latency();
            self.schedule(d, Event::ToPeer { peer, adapter, msg });
        }
    }

    fn adapter_tick(&mut self, i: usize) {
        let now = self.now_ms();
        self.adapters[i].tick_tx_cache(now);
        let outbox = self.adapters[i].take_outbox();
        self.route(i, outbox);
        self.refill_connections(i);
    }

    fn deliver_to_adapter(&mut self, i: usize, from: PeerId, msg: WireMessage) {
        let now = self.now_ms();
        let (outcome, outbox) = self.adapters[i].on_peer_message(from, msg, now);
        self.route(i, outbox);
        if outcome.penalized {
            self.metrics.penalized_peers += 1;
            self.log.push(self.clock, "penalize", format!("adapter{i}"), from.to_string());
            self.refill_connections(i);
        }
    }

    fn honest_reply(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        match msg {
            WireMessage::GetHeaders(locator) => {
                let headers = self.honest.headers_after_locator(&locator);
                if headers.is_empty() {
                    Vec::new()
                } else {
                    vec![WireMessage::Headers(headers)]
                }
            }
            WireMessage::GetData(items) => items
                .iter()
                .filter_map(|item| match item {
                    InvItem::Block(h) => self.honest.tree.block(h).cloned().map(WireMessage::Block),
                    InvItem::Tx(_) => None,
                })
                .collect(),
            WireMessage::Inv(items) => {
                let wanted: Vec<InvItem> = items
                    .into_iter()
                    .filter(|i| matches!(i, InvItem::Tx(h) if !self.mempool_ids.contains(h)))
                    .collect();
                if wanted.is_empty() {
                    Vec::new()
                } else {
                    vec![WireMessage::GetData(wanted)]
                }
            }
            WireMessage::Tx(tx) => {
                if tx.check_syntax().is_ok() && self.mempool_ids.insert(tx.txid()) {
                    self.log.push(self.clock, "mempool", short(&tx.txid()), "");
                    self.mempool.push(tx);
                }
                Vec::new()
            }
            WireMessage::Headers(_) | WireMessage::Block(_) | WireMessage::Addr(_) => Vec::new(),
        }
    }

    /// Headers of the adversary's public chain (the honest chain up to the
    /// fork base, then the released fork) after the first locator entry on
    /// it.
    fn adversary_headers_after(&self, locator: &[Hash256]) -> Vec<BlockHeader> {
        let Some((base, base_height)) = &self.adversary.base else { return Vec::new() };
        let released = self.adversary.released_blocks();
        if released.is_empty() {
            return Vec::new();
        }
        let base_hash = base.hash();
        for h in locator {
            if let Some(i) = released.iter().position(|b| b.hash() == *h) {
                return released[i + 1..].iter().map(|b| b.header).collect();
            }
            let on_base_path = self
                .honest
                .tree
                .height(h)
                .is_some_and(|height| height <= *base_height && self.honest.tree.ancestor_at(base_hash, height) == Some(*h));
            if on_base_path {
                let mut out = self.honest.path(self.honest.tree.height(h).expect("known"), base_hash);
                out.extend(released.iter().map(|b| b.header));
                out.truncate(MAX_HEADERS_REPLY);
                return out;
            }
        }
        Vec::new()
    }

    fn corrupted_reply(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        match msg {
            WireMessage::GetHeaders(locator) => {
                let headers = self.adversary_headers_after(&locator);
                if headers.is_empty() {
                    Vec::new()
                } else {
                    vec![WireMessage::Headers(headers)]
                }
            }
            WireMessage::GetData(items) => {
                let base = self.adversary.base.as_ref().map(|(h, height)| (h.hash(), *height));
                items
                    .iter()
                    .filter_map(|item| {
                        let InvItem::Block(h) = item else { return None };
                        if let Some(b) = self.adversary.released_blocks().iter().find(|b| b.hash() == *h) {
                            return Some(WireMessage::Block(b.clone()));
                        }
                        let (base_hash, base_height) = base?;
                        let height = self.honest.tree.height(h)?;
                        (height <= base_height && self.honest.tree.ancestor_at(base_hash, height) == Some(*h))
                            .then(|| WireMessage::Block(self.honest.tree.block(h).expect("honest bodies kept").clone()))
                    })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    fn next_salt(&mut self) -> u64 {
        self.salt += 1;
        self.salt
    }

    fn honest_transactions(&mut self, coinbase_tag: u64) -> Vec<Transaction> {
        let payee = self.rng.gen_range(0..self.scripts.len());
        let mut txs = vec![Transaction::coinbase(
            &[b"honest".as_slice(), &coinbase_tag.to_le_bytes()].concat(),
            50 * COIN,
            self.scripts[payee].clone(),
        )];
        for _ in 0..self.params.txs_per_block {
            if self.spendable.is_empty() {
                break;
            }
            let pick = self.rng.gen_range(0..self.spendable.len());
            let (outpoint, value) = self.spendable.swap_remove(pick);
            let a = self.rng.gen_range(0..self.scripts.len());
            let b = self.rng.gen_range(0..self.scripts.len());
            let first = value / 2;
            txs.push(Transaction {
                version: 2,
                inputs: vec![TxIn { previous_output: outpoint, script_sig: Vec::new(), sequence: u32::MAX }],
                outputs: vec![
                    TxOut { value: first, script_pubkey: self.scripts[a].clone() },
                    TxOut { value: value - first, script_pubkey: self.scripts[b].clone() },
                ],
                lock_time: 0,
            });
        }
        for tx in self.mempool.drain(..) {
            txs.push(tx);
        }
        txs
    }

    fn block_time(&self, parent: &BlockHeader) -> u32 {
        let now = u32::try_from(self.now_ms() / 1000).unwrap_or(u32::MAX);
        now.max(parent.time + 1)
    }

    fn honest_mine(&mut self) {
        let parent_hash = self.honest.tip_as_of(self.clock.saturating_sub(self.params.propagation_delay_ms));
        let parent = *self.honest.tree.header(&parent_hash).expect("tip header");
        self.mine_honest_on(parent);
        self.adversary_react();
    }

    fn mine_honest_on(&mut self, parent: BlockHeader) -> Hash256 {
        let salt = self.next_salt();
        let txs = self.honest_transactions(salt);
        let block = mine_block(&parent, self.block_time(&parent), parent.bits, txs);
        let hash = block.hash();
        for tx in &block.transactions {
            let txid = tx.txid();
            for (vout, out) in tx.outputs.iter().enumerate() {
                self.spendable.push((OutPoint::new(txid, vout as u32), out.value));
            }
        }
        let header = block.header;
        self.honest.add(block, self.clock);
        self.metrics.honest_blocks += 1;
        let height = self.honest.tree.height(&hash).expect("inserted");
        self.log.push(self.clock, "mine_honest", short(&hash), format!("height={height}"));
        self.announce(|w, p| !w.is_corrupted(p), vec![header]);
        hash
    }

    /// Has the honest miners extend the block `depth` below their tip with
    /// `len` blocks, as a competing honest miner would.
    pub fn inject_honest_fork(&mut self, depth: u32, len: u32) -> Result<Vec<Hash256>, String> {
        let height = self.honest.height();
        if depth > height {
            return Err(format!("fork depth {depth} exceeds the honest height {height}"));
        }
        let base = self.honest.tree.ancestor_at(self.honest.tip, height - depth).expect("on chain");
        let mut parent = *self.honest.tree.header(&base).expect("header");
        let mut hashes = Vec::new();
        for _ in 0..len {
            let h = self.mine_honest_on(parent);
            parent = *self.honest.tree.header(&h).expect("inserted");
            hashes.push(h);
        }
        self.adversary_react();
        Ok(hashes)
    }

    /// Sends `headers` to every adapter from each connected peer selected
    /// by `pick`.
    fn announce(&mut self, pick: impl Fn(&Self, &PeerId) -> bool, headers: Vec<BlockHeader>) {
        for i in 0..self.adapters.len() {
            let peers: Vec<PeerId> = self.adapters[i].peers().connected().copied().filter(|p| pick(self, p)).collect();
            for p in peers {
                let d = self.latency();
                self.schedule(d, Event::ToAdapter { adapter: i, from: p, msg: WireMessage::Headers(headers.clone()) });
            }
        }
    }

    /// Honest height visible to the canister: the highest honest block in
    /// its tree.
    pub fn canister_honest_height(&self) -> u32 {
        let tree = self.canister.tree();
        (tree.min_height()..=tree.max_height())
            .rev()
            .find(|&h| tree.at_height(h).any(|x| self.honest.tree.contains(x)))
            .unwrap_or(0)
    }

    /// Honest height the adversary's fork is measured against.
    pub fn budget_reference(&self) -> u32 {
        match self.params.strategy {
            Strategy::WithholdAndRelease => self.honest.height().min(self.canister_honest_height()),
            Strategy::FeedDuringDowntime | Strategy::None => self.honest.height(),
        }
    }

    fn adversary_mine(&mut self) {
        if !self.adversary.is_active() {
            return;
        }
        let next = self.adversary.next_height().expect("active");
        if self.params.budget_enforced {
            let reference = self.budget_reference();
            if !AdversaryState::within_budget(next, reference, self.params.c_star) {
                self.adversary.discarded += 1;
                self.log.push(self.clock, "budget_discard", format!("height={next}"), format!("reference={reference}"));
                return;
            }
        }
        let parent = *self.adversary.parent_header().expect("active");
        let salt = self.next_salt();
        let mut txs = vec![Transaction::coinbase(
            &[b"adversary".as_slice(), &salt.to_le_bytes()].concat(),
            50 * COIN,
            adversary_script(),
        )];
        if self.adversary.fork.is_empty() {
            txs.extend(self.adversary.corrupting_tx.clone());
        }
        let block = mine_block(&parent, self.block_time(&parent), parent.bits, txs);
        let hash = block.hash();
        self.adversary.push(block);
        if self.params.budget_enforced {
            assert!(
                AdversaryState::within_budget(next, self.budget_reference(), self.params.c_star),
                "adversary fork at height {next} broke the hash-rate bound"
            );
        }
        self.log.push(self.clock, "mine_adversary", short(&hash), format!("height={next}"));
        self.adversary_react();
    }

    /// Gives up on a hopeless fork and publishes one that has overtaken the
    /// honest chain.
    fn adversary_react(&mut self) {
        if self.params.strategy != Strategy::WithholdAndRelease {
            return;
        }
        let honest = self.honest.height();
        let tip = self.adversary.tip_height().expect("withholding adversary is always active");
        if u64::from(honest) >= u64::from(tip) + self.params.give_up_lead {
            let header = self.honest_tip_header();
            self.adversary.restart(header, honest);
            self.log.push(self.clock, "adversary_restart", short(&header.hash()), format!("height={honest}"));
            return;
        }
        if tip > honest && self.adversary.released < self.adversary.fork.len() {
            let headers: Vec<BlockHeader> = self.adversary.release_all().iter().map(|b| b.header).collect();
            self.metrics.releases += 1;
            self.log.push(self.clock, "release", format!("blocks={}", headers.len()), format!("tip_height={tip}"));
            self.announce(|w, p| w.is_corrupted(p), headers);
        }
    }

    /// One block from the adversary's fork the canister does not hold yet.
    fn malicious_response(&self) -> GetSuccessorsResponse {
        let candidates: &[Block] = match self.params.strategy {
            Strategy::WithholdAndRelease => self.adversary.released_blocks(),
            Strategy::FeedDuringDowntime => &self.adversary.fork,
            Strategy::None => &[],
        };
        let tree = self.canister.tree();
        // only blocks the canister could attach
        let next = candidates.iter().find(|b| tree.block(&b.hash()).is_none() && (tree.block(&b.header.prev).is_some() || b.header.prev == self.canister.anchor()));
        match next {
            Some(b) => GetSuccessorsResponse { blocks: vec![(b.clone(), b.header)], next_headers: Vec::new() },
            None => GetSuccessorsResponse::default(),
        }
    }

    fn round(&mut self) {
        self.metrics.rounds += 1;
        if self.in_downtime {
            self.metrics.downtime_rounds += 1;
            return;
        }
        let maker = self.rng.gen_range(0..self.params.n);
        let malicious = maker < self.params.f;
        let now = self.now_ms();
        let request = self.canister.build_request();
        let response = if malicious {
            self.metrics.malicious_rounds += 1;
            self.malicious_response()
        } else {
            let resp = self.adapters[maker].handle_request(&request, now).unwrap_or_default();
            let outbox = self.adapters[maker].take_outbox();
            self.route(maker, outbox);
            resp
        };
        let report = self.canister.handle_response(&response, now);
        self.metrics.blocks_ingested += report.blocks_accepted as u64;
        self.metrics.headers_ingested += report.headers_accepted as u64;
        if report.blocks_accepted + report.headers_accepted > 0 {
            self.log.push(
                self.clock,
                "round",
                format!("node{maker}"),
                format!(
                    "maker={} blocks={} headers={}",
                    if malicious { "malicious" } else { "honest" },
                    report.blocks_accepted,
                    report.headers_accepted
                ),
            );
        }
        for (hash, why) in &report.rejected {
            self.metrics.rejected_items += 1;
            let event = if matches!(why, Rejection::BelowAnchor { .. }) {
                self.metrics.deep_forks += 1;
                "deep_fork"
            } else {
                "reject"
            };
            self.log.push(self.clock, event, short(hash), why.to_string());
        }
        for a in &report.anchors {
            self.metrics.anchor_advances += 1;
            let h = self.canister.tree().height(a).unwrap_or_default();
            self.log.push(self.clock, "anchor", short(a), format!("height={h}"));
        }
        self.track_tip();
        self.track_sync();
        self.track_confirmations(malicious);
    }

    fn track_tip(&mut self) {
        let chain = self.canister.considered_chain(None);
        let tip = *chain.last().expect("non-empty");
        let old = self.canister_tip;
        if tip != old {
            let old_above_anchor = self.canister.tree().height(&old).is_none_or(|h| h >= self.canister.anchor_height());
            if old_above_anchor && !chain.contains(&old) {
                self.metrics.reorgs += 1;
                self.log.push(self.clock, "reorg", short(&old), format!("new_tip={}", short(&tip)));
            }
            self.canister_tip = tip;
        }
    }

    fn track_sync(&mut self) {
        let synced = self.canister.is_synced();
        if !synced {
            self.metrics.unsynced_rounds += 1;
        }
        if synced != self.was_synced {
            self.log.push(self.clock, if synced { "synced" } else { "unsynced" }, "canister", "");
            self.was_synced = synced;
        }
    }

    fn track_confirmations(&mut self, malicious: bool) {
        if self.downtime_over && self.metrics.post_downtime_makers.len() < self.params.c_star as usize {
            self.metrics.post_downtime_makers.push(malicious);
        }
        if self.downtime_over && !malicious {
            self.honest_round_after_downtime = true;
        }
        let Some(txid) = self.corrupting_txid() else { return };
        let Ok(conf) = self.canister.reported_confirmations(&txid) else { return };
        if self.downtime_over && !self.honest_round_after_downtime {
            let best = &mut self.metrics.confirmations_before_honest_round;
            *best = Some(best.map_or(conf, |b| b.max(conf)));
        }
        let best = self.metrics.max_reported_confirmations;
        if best.is_none_or(|b| conf > b) {
            self.metrics.max_reported_confirmations = Some(conf);
            self.log.push(self.clock, "confirmations", short(&txid), format!("reported={conf}"));
        }
    }

    /// Named quantities for scenario assertions.
    pub fn metric(&self, name: &str) -> Option<f64> {
        let m = &self.metrics;
        let v = match name {
            "rounds" => m.rounds as f64,
            "downtime_rounds" => m.downtime_rounds as f64,
            "malicious_rounds" => m.malicious_rounds as f64,
            "blocks_ingested" => m.blocks_ingested as f64,
            "headers_ingested" => m.headers_ingested as f64,
            "anchor_advances" => m.anchor_advances as f64,
            "reorgs" => m.reorgs as f64,
            "rejected_items" => m.rejected_items as f64,
            "deep_forks" => m.deep_forks as f64,
            "unsynced_rounds" => m.unsynced_rounds as f64,
            "penalized_peers" => m.penalized_peers as f64,
            "honest_blocks" => m.honest_blocks as f64,
            "releases" => m.releases as f64,
            "max_reported_confirmations" => m.max_reported_confirmations.unwrap_or(0) as f64,
            "adversary_blocks" => self.adversary.mined as f64,
            "adversary_discarded" => self.adversary.discarded as f64,
            "adversary_restarts" => self.adversary.restarts as f64,
            "anchor_height" => f64::from(self.canister.anchor_height()),
            "honest_height" => f64::from(self.honest.height()),
            "canister_tip_height" => f64::from(self.canister.tree().height(&self.canister_body_tip()).unwrap_or(0)),
            "synced" => f64::from(u8::from(self.canister.is_synced())),
            "utxos" => self.canister.utxos().len() as f64,
            "eclipsed_adapters" => self.eclipsed_adapters().len() as f64,
            "delta" => self.params.delta as f64,
            "c_star" => self.params.c_star as f64,
            "tau" => f64::from(self.params.tau),
            "anchor_is_honest" => f64::from(u8::from(self.is_honest_block(&self.canister.anchor()))),
            _ => return None,
        };
        Some(v)
    }

    pub const METRIC_NAMES: &'static [&'static str] = &[
        "rounds",
        "downtime_rounds",
        "malicious_rounds",
        "blocks_ingested",
        "headers_ingested",
        "anchor_advances",
        "reorgs",
        "rejected_items",
        "deep_forks",
        "unsynced_rounds",
        "penalized_peers",
        "honest_blocks",
        "releases",
        "max_reported_confirmations",
        "adversary_blocks",
        "adversary_discarded",
        "adversary_restarts",
        "anchor_height",
        "honest_height",
        "canister_tip_height",
        "synced",
        "utxos",
        "eclipsed_adapters",
        "delta",
        "c_star",
        "tau",
        "anchor_is_honest",
    ];
}

/// Outcome of repeated fork-attack runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForkAttackSummary {
    /// Largest reported confirmation count of the corrupting transaction in
    /// each run (0 when never reported).
    pub per_run: Vec<u64>,
    pub max: u64,
    /// Runs in which the count reached `c_star`.
    pub runs_reaching_c_star: usize,
}

/// Runs `trials` independent worlds (seeds `seed`, `seed + 1`, ...) and
/// collects the confirmations reported for the corrupting transaction.
pub fn run_fork_attack(params: &SimParams, trials: u64, seed: u64) -> Result<ForkAttackSummary, ParamError> {
    params.validate()?;
    if params.strategy == Strategy::None {
        return Err(ParamError("a fork attack needs an adversary strategy".into()));
    }
    let per_run: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut world = SimWorld::new(params.clone(), seed.wrapping_add(i)).expect("validated");
            world.run().max_reported_confirmations.unwrap_or(0)
        })
        .collect();
    let max = per_run.iter().copied().max().unwrap_or(0);
    let runs_reaching_c_star = per_run.iter().filter(|&&c| c >= params.c_star).count();
    Ok(ForkAttackSummary { per_run, max, runs_reaching_c_star })
}

/// UTXOs by outpoint as (value, script, height), for comparison against
/// independent replays.
pub fn canister_utxos(canister: &CanisterState) -> HashMap<OutPoint, (u64, Vec<u8>, u32)> {
    canister
        .utxos()
        .by_outpoint()
        .iter()
        .map(|(op, (out, h))| (*op, (out.value, out.script_pubkey.clone(), *h)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SimParams {
        SimParams { duration_ms: 3 * 3600 * 1000, population: 500, ..SimParams::default() }
    }

    #[test]
    fn honest_world_advances_anchor() {
        let mut w = SimWorld::new(quick(), 1).unwrap();
        w.run();
        assert!(w.honest_height() >= 5, "{}", w.honest_height());
        let expected = w.honest_height().saturating_sub(w.params().delta as u32 - 1);
        assert!(w.canister().anchor_height() + 2 >= expected, "anchor {} honest {}", w.canister().anchor_height(), w.honest_height());
        assert!(w.is_honest_block(&w.canister().anchor()));
        assert!(w.canister().is_synced());
    }

    #[test]
    fn same_seed_same_log() {
        let p = SimParams { adversary_hash_fraction: 0.3, strategy: Strategy::WithholdAndRelease, ..quick() };
        let mut a = SimWorld::new(p.clone(), 7).unwrap();
        let mut b = SimWorld::new(p, 7).unwrap();
        a.run();
        b.run();
        assert_eq!(a.log(), b.log());
        assert_eq!(a.metrics(), b.metrics());
    }

    #[test]
    fn adapter_peer_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let peers = sample_adapter_peers(&mut rng, 4, 5, 50);
        assert_eq!(peers.len(), 4);
        for p in peers {
            let set: HashSet<PeerId> = p.iter().copied().collect();
            assert_eq!(set.len(), 5);
            assert!(p.iter().all(|x| (x.0 as usize) < 50));
        }
    }
}
