use std::collections::BTreeSet;

use crate::block::Transaction;
use crate::hash::Hash256;

use super::peers::PeerId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedTx {
    pub tx: Transaction,
    pub txid: Hash256,
    pub inserted_at: u64,
    pub advertised_to: BTreeSet<PeerId>,
    pub delivered_to: BTreeSet<PeerId>,
}

/// Outbound transactions waiting to be handed to peers.
///
/// An entry leaves the cache once every connected peer has it or once it is
/// older than the expiry, whichever comes first.
#[derive(Debug, Clone, Default)]
pub struct TxCache {
    entries: Vec<CachedTx>,
}

impl TxCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CachedTx] {
        &self.entries
    }

    pub fn get(&self, txid: &Hash256) -> Option<&CachedTx> {
        self.entries.iter().find(|e| e.txid == *txid)
    }

    /// Adds `tx` unless an entry with the same txid is already cached.
    pub fn add(&mut self, tx: Transaction, now: u64) -> bool {
        let txid = tx.txid();
        if self.get(&txid).is_some() {
            return false;
        }
        self.entries.push(CachedTx {
            tx,
            txid,
            inserted_at: now,
            advertised_to: BTreeSet::new(),
            delivered_to: BTreeSet::new(),
        });
        true
    }

    /// Records that `peer` holds the transaction. Returns it if cached.
    pub fn mark_delivered(&mut self, txid: &Hash256, peer: PeerId) -> Option<&Transaction> {
        let entry = self.entries.iter_mut().find(|e| e.txid == *txid)?;
        entry.delivered_to.insert(peer);
        Some(&entry.tx)
    }

    /// Drops expired and fully delivered entries, then returns the
    /// `(peer, txid)` advertisements still owed to connected peers.
    pub fn tick(&mut self, now: u64, expiry: u64, peers: &BTreeSet<PeerId>) -> Vec<(PeerId, Hash256)> {
        self.entries.retain(|e| {
            let expired = now.saturating_sub(e.inserted_at) > expiry;
            let everywhere = !peers.is_empty() && peers.is_subset(&e.delivered_to);
            !(expired || everywhere)
        });
        let mut adverts = Vec::new();
        for entry in &mut self.entries {
            for peer in peers {
                if !entry.delivered_to.contains(peer) && entry.advertised_to.insert(*peer) {
                    adverts.push((*peer, entry.txid));
                }
            }
        }
        adverts
    }
}
