use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::address::{Address, AddressError};
use crate::block::{OutPoint, Transaction, TxSyntaxError};
use crate::encode::{Decodable, DecodeError};
use crate::hash::Hash256;
use crate::network::NetworkKind;
use crate::stability::{self, chain_from, ByConfirmations};

use super::utxo::{Utxo, UtxoKey};
use super::CanisterState;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("canister is not synced")]
    NotSynced,
    #[error("request is for {found}, canister serves {expected}")]
    WrongNetwork { expected: NetworkKind, found: NetworkKind },
    #[error("min_confirmations {requested} exceeds the stability threshold {delta}")]
    TooManyConfirmations { requested: u64, delta: u64 },
    #[error("min_confirmations must be positive")]
    ZeroConfirmations,
    #[error("invalid address: {0}")]
    Address(#[from] AddressError),
    #[error("invalid page token")]
    BadPageToken,
    #[error("malformed transaction: {0}")]
    Malformed(#[from] DecodeError),
    #[error("invalid transaction: {0}")]
    InvalidTransaction(#[from] TxSyntaxError),
}

/// Continuation point of a paged `get_utxos` call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageToken(pub String);

impl fmt::Display for PageToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UtxosFilter {
    MinConfirmations(u64),
    Page(PageToken),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtxosPage {
    pub utxos: Vec<Utxo>,
    pub tip_hash: Hash256,
    pub tip_height: u32,
    pub next_page: Option<PageToken>,
}

/// The token carries the confirmation filter (0 for none) and the key of
/// the last returned entry.
fn encode_token(min_conf: u64, last: &UtxoKey) -> PageToken {
    let (Reverse(height), txid, vout) = last;
    let mut bytes = Vec::with_capacity(48);
    bytes.extend_from_slice(&min_conf.to_be_bytes());
    bytes.extend_from_slice(&height.to_be_bytes());
    bytes.extend_from_slice(txid.as_bytes());
    bytes.extend_from_slice(&vout.to_be_bytes());
    PageToken(hex::encode(bytes))
}

fn decode_token(token: &PageToken) -> Result<(u64, UtxoKey), ApiError> {
    let bytes = hex::decode(&token.0).map_err(|_| ApiError::BadPageToken)?;
    if bytes.len() != 48 {
        return Err(ApiError::BadPageToken);
    }
    let min_conf = u64::from_be_bytes(bytes[0..8].try_into().expect("8 bytes"));
    let height = u32::from_be_bytes(bytes[8..12].try_into().expect("4 bytes"));
    let txid = Hash256::from_bytes(bytes[12..44].try_into().expect("32 bytes"));
    let vout = u32::from_be_bytes(bytes[44..48].try_into().expect("4 bytes"));
    Ok((min_conf, (Reverse(height), txid, vout)))
}

impl CanisterState {
    fn check_request(&self, network: NetworkKind) -> Result<(), ApiError> {
        if network != self.config.network {
            return Err(ApiError::WrongNetwork { expected: self.config.network, found: network });
        }
        if !self.synced {
            return Err(ApiError::NotSynced);
        }
        Ok(())
    }

    fn check_confirmations(&self, min_conf: u64) -> Result<(), ApiError> {
        if min_conf == 0 {
            return Err(ApiError::ZeroConfirmations);
        }
        if min_conf > self.config.delta {
            return Err(ApiError::TooManyConfirmations { requested: min_conf, delta: self.config.delta });
        }
        Ok(())
    }

    /// The anchor followed by the held blocks of the current chain, cut at
    /// the first block without a body and, with a confirmation filter, at
    /// the first block that is not confirmation-stable at that level.
    pub fn considered_chain(&self, min_conf: Option<u64>) -> Vec<Hash256> {
        let mut chain = chain_from(&self.tree, self.anchor);
        let cut = chain
            .iter()
            .skip(1)
            .position(|h| {
                self.tree.block(h).is_none()
                    || min_conf.is_some_and(|c| {
                        !stability::is_stable::<ByConfirmations>(&self.tree, h, &c).expect("chain node present")
                    })
            })
            .map_or(chain.len(), |p| p + 1);
        chain.truncate(cut);
        chain
    }

    /// All UTXOs of `address` on the considered chain, in page order.
    fn collect_utxos(&self, address: &Address, chain: &[Hash256]) -> BTreeMap<UtxoKey, Utxo> {
        let mut found: BTreeMap<UtxoKey, Utxo> = BTreeMap::new();
        let mut keys: HashMap<OutPoint, UtxoKey> = HashMap::new();
        for utxo in self.utxos.address_utxos(address) {
            keys.insert(utxo.outpoint, utxo.key());
            found.insert(utxo.key(), utxo);
        }
        for hash in &chain[1..] {
            let block = self.tree.block(hash).expect("considered blocks have bodies");
            let height = self.tree.height(hash).expect("chain node present");
            for tx in &block.transactions {
                if !tx.is_coinbase() {
                    for input in &tx.inputs {
                        if let Some(key) = keys.remove(&input.previous_output) {
                            found.remove(&key);
                        }
                    }
                }
                let txid = tx.txid();
                for (vout, out) in tx.outputs.iter().enumerate() {
                    if Address::from_script(&out.script_pubkey) != *address {
                        continue;
                    }
                    let utxo = Utxo { outpoint: OutPoint::new(txid, vout as u32), value: out.value, height };
                    if let Some(old) = keys.insert(utxo.outpoint, utxo.key()) {
                        found.remove(&old);
                    }
                    found.insert(utxo.key(), utxo);
                }
            }
        }
        found
    }

    fn resolve_address(&self, address: &str) -> Result<Address, ApiError> {
        Ok(Address::parse(address, self.config.network)?)
    }

    pub fn get_utxos(&self, address: &str, network: NetworkKind, filter: Option<UtxosFilter>) -> Result<UtxosPage, ApiError> {
        self.check_request(network)?;
        let address = self.resolve_address(address)?;
        let (min_conf, after) = match filter {
            None => (0, None),
            Some(UtxosFilter::MinConfirmations(c)) => {
                self.check_confirmations(c)?;
                (c, None)
            }
            Some(UtxosFilter::Page(token)) => {
                let (c, key) = decode_token(&token)?;
                if c != 0 {
                    self.check_confirmations(c)?;
                }
                (c, Some(key))
            }
        };
        let chain = self.considered_chain((min_conf > 0).then_some(min_conf));
        let all = self.collect_utxos(&address, &chain);
        let mut remaining: Box<dyn Iterator<Item = (&UtxoKey, &Utxo)>> = match &after {
            Some(key) => Box::new(all.range((std::ops::Bound::Excluded(key), std::ops::Bound::Unbounded))),
            None => Box::new(all.iter()),
        };
        let utxos: Vec<Utxo> = remaining.by_ref().take(self.config.page_size).map(|(_, u)| u.clone()).collect();
        let next_page = match (remaining.next(), utxos.last()) {
            (Some(_), Some(last)) => Some(encode_token(min_conf, &last.key())),
            _ => None,
        };
        let tip = *chain.last().expect("chain starts at the anchor");
        Ok(UtxosPage {
            utxos,
            tip_hash: tip,
            tip_height: self.tree.height(&tip).expect("chain node present"),
            next_page,
        })
    }

    pub fn get_balance(&self, address: &str, network: NetworkKind, min_confirmations: Option<u64>) -> Result<u64, ApiError> {
        self.check_request(network)?;
        let address = self.resolve_address(address)?;
        if let Some(c) = min_confirmations {
            self.check_confirmations(c)?;
        }
        let chain = self.considered_chain(min_confirmations);
        Ok(self.collect_utxos(&address, &chain).values().map(|u| u.value).sum())
    }

    /// Queues a syntactically valid transaction for the next request.
    pub fn send_transaction(&mut self, tx_bytes: &[u8], network: NetworkKind) -> Result<Hash256, ApiError> {
        self.check_request(network)?;
        let tx = Transaction::deserialize(tx_bytes)?;
        tx.check_syntax()?;
        self.outbound.push_back(tx_bytes.to_vec());
        Ok(tx.txid())
    }

    /// Confirmations the API reports for `txid`: the largest confirmation
    /// stability among the blocks containing it, or 0 when none is
    /// positive.
    pub fn reported_confirmations(&self, txid: &Hash256) -> Result<u64, ApiError> {
        if !self.synced {
            return Err(ApiError::NotSynced);
        }
        let best = self
            .blocks_with_tx(txid)
            .iter()
            .map(|h| stability::confirmations(&self.tree, h).expect("indexed block present"))
            .max()
            .unwrap_or(0);
        Ok(best.max(0) as u64)
    }
}
