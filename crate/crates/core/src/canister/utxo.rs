use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::address::Address;
use crate::block::{Block, OutPoint, TxOut};
use crate::hash::Hash256;

/// Ordering of UTXOs within an address: newest height first, then txid and
/// output index.
pub type UtxoKey = (Reverse<u32>, Hash256, u32);

pub fn utxo_key(outpoint: &OutPoint, height: u32) -> UtxoKey {
    (Reverse(height), outpoint.txid, outpoint.vout)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utxo {
    pub outpoint: OutPoint,
    pub value: u64,
    pub height: u32,
}

impl Utxo {
    pub fn key(&self) -> UtxoKey {
        utxo_key(&self.outpoint, self.height)
    }
}

/// The materialized UTXO set with an address index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UtxoSet {
    by_outpoint: HashMap<OutPoint, (TxOut, u32)>,
    by_address: HashMap<Address, BTreeSet<UtxoKey>>,
}

/// Outcome of applying one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockApplied {
    pub spent: usize,
    pub created: usize,
    /// Inputs referring to outpoints that were not in the set.
    pub missing_spends: usize,
}

impl UtxoSet {
    pub fn len(&self) -> usize {
        self.by_outpoint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_outpoint.is_empty()
    }

    pub fn get(&self, outpoint: &OutPoint) -> Option<&(TxOut, u32)> {
        self.by_outpoint.get(outpoint)
    }

    pub fn by_outpoint(&self) -> &HashMap<OutPoint, (TxOut, u32)> {
        &self.by_outpoint
    }

    /// Entries sorted by outpoint, for stable output.
    pub fn sorted(&self) -> BTreeMap<OutPoint, (TxOut, u32)> {
        self.by_outpoint.iter().map(|(k, v)| (*k, v.clone())).collect()
    }

    pub fn address_keys(&self, address: &Address) -> impl Iterator<Item = &UtxoKey> + '_ {
        self.by_address.get(address).into_iter().flatten()
    }

    pub fn address_utxos(&self, address: &Address) -> Vec<Utxo> {
        self.address_keys(address)
            .map(|&(Reverse(height), txid, vout)| {
                let outpoint = OutPoint::new(txid, vout);
                let (out, _) = &self.by_outpoint[&outpoint];
                Utxo { outpoint, value: out.value, height }
            })
            .collect()
    }

    pub fn insert(&mut self, outpoint: OutPoint, out: TxOut, height: u32) {
        self.remove(&outpoint);
        let address = Address::from_script(&out.script_pubkey);
        self.by_address.entry(address).or_default().insert(utxo_key(&outpoint, height));
        self.by_outpoint.insert(outpoint, (out, height));
    }

    pub fn remove(&mut self, outpoint: &OutPoint) -> Option<(TxOut, u32)> {
        let (out, height) = self.by_outpoint.remove(outpoint)?;
        let address = Address::from_script(&out.script_pubkey);
        if let Some(set) = self.by_address.get_mut(&address) {
            set.remove(&utxo_key(outpoint, height));
            if set.is_empty() {
                self.by_address.remove(&address);
            }
        }
        Some((out, height))
    }

    /// Spends every non-coinbase input and adds every output at `height`.
    /// Transactions are not validated; unknown inputs are only counted.
    pub fn process_block(&mut self, block: &Block, height: u32) -> BlockApplied {
        let mut applied = BlockApplied::default();
        for tx in &block.transactions {
            if !tx.is_coinbase() {
                for input in &tx.inputs {
                    match self.remove(&input.previous_output) {
                        Some(_) => applied.spent += 1,
                        None => {
                            log::debug!("spend of unknown outpoint {}", input.previous_output);
                            applied.missing_spends += 1;
                        }
                    }
                }
            }
            let txid = tx.txid();
            for (vout, out) in tx.outputs.iter().enumerate() {
                self.insert(OutPoint::new(txid, vout as u32), out.clone(), height);
                applied.created += 1;
            }
        }
        applied
    }

    /// Checks that both indexes describe the same entries.
    pub fn is_consistent(&self) -> bool {
        let indexed: usize = self.by_address.values().map(BTreeSet::len).sum();
        indexed == self.by_outpoint.len()
            && self.by_outpoint.iter().all(|(op, (out, h))| {
                self.by_address
                    .get(&Address::from_script(&out.script_pubkey))
                    .is_some_and(|s| s.contains(&utxo_key(op, *h)))
            })
    }
}
