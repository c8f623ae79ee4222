//! Address pool and outbound connection management.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub u32);

impl fmt::Display for PeerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "peer{}", self.0)
    }
}

/// Where new candidate addresses come from: DNS seeds and address gossip
/// in a real deployment, the simulated population in tests.
pub trait AddressSource {
    /// Up to `max` addresses, possibly overlapping with ones already known.
    fn fetch_addresses<R: Rng + ?Sized>(&mut self, rng: &mut R, max: usize) -> Vec<PeerId>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerConn {
    pub connected_at: u64,
    /// Block hashes this peer has announced.
    pub announced: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PeerSet {
    connected: BTreeMap<PeerId, PeerConn>,
    addr_pool: BTreeSet<PeerId>,
    /// Every connection attempt in order, for tracing.
    attempts: Vec<PeerId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiscoveryReport {
    pub fetched: usize,
    pub connected: usize,
}

impl PeerSet {
    pub fn connected(&self) -> impl Iterator<Item = &PeerId> + '_ {
        self.connected.keys()
    }

    pub fn connected_set(&self) -> BTreeSet<PeerId> {
        self.connected.keys().copied().collect()
    }

    pub fn is_connected(&self, peer: &PeerId) -> bool {
        self.connected.contains_key(peer)
    }

    pub fn connection_count(&self) -> usize {
        self.connected.len()
    }

    pub fn pool(&self) -> &BTreeSet<PeerId> {
        &self.addr_pool
    }

    pub fn attempts(&self) -> &[PeerId] {
        &self.attempts
    }

    pub fn add_addresses(&mut self, addrs: impl IntoIterator<Item = PeerId>) {
        for a in addrs {
            if !self.connected.contains_key(&a) {
                self.addr_pool.insert(a);
            }
        }
    }

    pub fn connect(&mut self, peer: PeerId, now: u64) {
        self.addr_pool.remove(&peer);
        self.attempts.push(peer);
        self.connected.insert(peer, PeerConn { connected_at: now, announced: 0 });
    }

    pub fn disconnect(&mut self, peer: &PeerId) -> bool {
        self.connected.remove(peer).is_some()
    }

    pub fn note_announcement(&mut self, peer: &PeerId) {
        if let Some(conn) = self.connected.get_mut(peer) {
            conn.announced += 1;
        }
    }

    /// Refills the pool towards `high` when it has fallen below `low`, then
    /// opens connections to uniformly chosen pool addresses until `target`
    /// connections are up or the pool is empty.
    pub fn discover<S, R>(&mut self, source: &mut S, rng: &mut R, low: usize, high: usize, target: usize, now: u64) -> DiscoveryReport
    where
        S: AddressSource + ?Sized,
        R: Rng + ?Sized,
    {
        let mut report = DiscoveryReport::default();
        if self.addr_pool.len() < low {
            while self.addr_pool.len() < high {
                let before = self.addr_pool.len();
                let batch = source.fetch_addresses(rng, high - before);
                self.add_addresses(batch);
                let gained = self.addr_pool.len() - before;
                report.fetched += gained;
                if gained == 0 {
                    break;
                }
            }
        }
        while self.connected.len() < target && !self.addr_pool.is_empty() {
            let candidates: Vec<PeerId> = self.addr_pool.iter().copied().collect();
            let pick = *candidates.choose(rng).expect("pool not empty");
            self.connect(pick, now);
            report.connected += 1;
        }
        report
    }
}
