//! Line-oriented text snapshots of a canister.
//!
//! ```text
//! bitsync-canister-snapshot 1
//! network regtest
//! delta 6
//! tau 2
//! page_size 1000
//! anchor_rule full
//! work_policy target
//! anchor <hash>
//! [tree]
//! <one BlockTree::dump line per header>
//! [utxos]
//! <txid> <vout> <height> <value> <script hex or ->
//! [blocks]
//! <block hex>
//! [outbound]
//! <transaction hex>
//! ```
//!
//! The validation policy is not stored; it is rebuilt from the network.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write;

use thiserror::Error;

use crate::block::{Block, OutPoint, TxOut};
use crate::encode::{Decodable, Encodable};
use crate::hash::Hash256;
use crate::network::NetworkKind;
use crate::pow::WorkPolicy;
use crate::tree::{BlockTree, DumpError};
use crate::validation::ValidationPolicy;

use super::{AnchorRule, CanisterConfig, CanisterState, Diagnostics, UtxoSet};

const MAGIC: &str = "bitsync-canister-snapshot";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SnapshotError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("tree section: {0}")]
    Tree(#[from] DumpError),
    #[error("missing field `{0}`")]
    Missing(&'static str),
    #[error("inconsistent snapshot: {0}")]
    Inconsistent(String),
}

fn rule_name(rule: AnchorRule) -> &'static str {
    match rule {
        AnchorRule::FullStability => "full",
        AnchorRule::DepthOnly => "depth-only",
    }
}

impl CanisterState {
    pub fn dump_snapshot(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {VERSION}");
        let _ = writeln!(out, "network {}", c.network);
        let _ = writeln!(out, "delta {}", c.delta);
        let _ = writeln!(out, "tau {}", c.tau);
        let _ = writeln!(out, "page_size {}", c.page_size);
        let _ = writeln!(out, "anchor_rule {}", rule_name(c.anchor_rule));
        let policy = match c.work_policy {
            WorkPolicy::Target => "target",
            WorkPolicy::Hash => "hash",
        };
        let _ = writeln!(out, "work_policy {policy}");
        let _ = writeln!(out, "anchor {}", self.anchor);
        out.push_str("[tree]\n");
        out.push_str(&self.tree.dump());
        out.push_str("[utxos]\n");
        for (op, (txout, height)) in self.utxos.sorted() {
            let script = if txout.script_pubkey.is_empty() { "-".to_string() } else { hex::encode(&txout.script_pubkey) };
            let _ = writeln!(out, "{} {} {} {} {}", op.txid, op.vout, height, txout.value, script);
        }
        out.push_str("[blocks]\n");
        for hash in self.held_blocks() {
            let block = self.tree.block(&hash).expect("held");
            let _ = writeln!(out, "{}", hex::encode(block.serialize()));
        }
        out.push_str("[outbound]\n");
        for tx in &self.outbound {
            let _ = writeln!(out, "{}", hex::encode(tx));
        }
        out
    }

    pub fn load_snapshot(text: &str) -> Result<Self, SnapshotError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let err = |line: usize, msg: String| SnapshotError::Line { line, msg };

        let (line, first) = lines.next().ok_or(SnapshotError::Missing("header line"))?;
        let version = first
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| err(line, "not a canister snapshot".into()))?;
        if version != VERSION.to_string() {
            return Err(err(line, format!("unsupported snapshot version `{version}`")));
        }

        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        let mut section = "";
        let mut tree_text = String::new();
        let mut utxo_lines = Vec::new();
        let mut block_lines = Vec::new();
        let mut outbound_lines = Vec::new();
        for (line, raw) in lines {
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            if raw.starts_with('[') {
                section = match raw {
                    "[tree]" | "[utxos]" | "[blocks]" | "[outbound]" => raw,
                    _ => return Err(err(line, format!("unknown section {raw}"))),
                };
                continue;
            }
            match section {
                "" => {
                    let (k, v) = raw.split_once(' ').ok_or_else(|| err(line, "expected `key value`".into()))?;
                    fields.insert(k, (line, v.trim()));
                }
                "[tree]" => {
                    tree_text.push_str(raw);
                    tree_text.push('\n');
                }
                "[utxos]" => utxo_lines.push((line, raw)),
                "[blocks]" => block_lines.push((line, raw)),
                _ => outbound_lines.push((line, raw)),
            }
        }

        fn field<'a>(fields: &HashMap<&str, (usize, &'a str)>, name: &'static str) -> Result<(usize, &'a str), SnapshotError> {
            fields.get(name).copied().ok_or(SnapshotError::Missing(name))
        }
        fn parsed<T: std::str::FromStr>(fields: &HashMap<&str, (usize, &str)>, name: &'static str) -> Result<T, SnapshotError>
        where
            T::Err: std::fmt::Display,
        {
            let (line, v) = field(fields, name)?;
            v.parse().map_err(|e: T::Err| SnapshotError::Line { line, msg: format!("{name}: {e}") })
        }

        let network: NetworkKind = parsed(&fields, "network")?;
        let anchor_rule: AnchorRule = parsed(&fields, "anchor_rule")?;
        let work_policy = match field(&fields, "work_policy")? {
            (_, "target") => WorkPolicy::Target,
            (_, "hash") => WorkPolicy::Hash,
            (line, other) => return Err(err(line, format!("unknown work policy `{other}`"))),
        };
        let config = CanisterConfig {
            network,
            delta: parsed(&fields, "delta")?,
            tau: parsed(&fields, "tau")?,
            page_size: parsed(&fields, "page_size")?,
            anchor_rule,
            validation: ValidationPolicy::for_network(network),
            work_policy,
        };
        config.check().map_err(|e| SnapshotError::Inconsistent(e.to_string()))?;
        let anchor: Hash256 = parsed(&fields, "anchor")?;

        let mut tree = BlockTree::load(&tree_text, work_policy)?;
        let anchor_height = tree
            .height(&anchor)
            .ok_or_else(|| SnapshotError::Inconsistent(format!("anchor {anchor} not in tree")))?;

        let mut utxos = UtxoSet::default();
        for (line, raw) in utxo_lines {
            let cols: Vec<&str> = raw.split_whitespace().collect();
            if cols.len() != 5 {
                return Err(err(line, format!("expected 5 utxo columns, found {}", cols.len())));
            }
            let txid: Hash256 = cols[0].parse().map_err(|e| err(line, format!("txid: {e}")))?;
            let vout: u32 = cols[1].parse().map_err(|e| err(line, format!("vout: {e}")))?;
            let height: u32 = cols[2].parse().map_err(|e| err(line, format!("height: {e}")))?;
            let value: u64 = cols[3].parse().map_err(|e| err(line, format!("value: {e}")))?;
            let script = match cols[4] {
                "-" => Vec::new(),
                h => hex::decode(h).map_err(|e| err(line, format!("script: {e}")))?,
            };
            if height > anchor_height {
                return Err(err(line, format!("utxo height {height} above anchor height {anchor_height}")));
            }
            utxos.insert(OutPoint::new(txid, vout), TxOut { value, script_pubkey: script }, height);
        }

        let mut tx_blocks: HashMap<Hash256, Vec<Hash256>> = HashMap::new();
        for (line, raw) in block_lines {
            let block = Block::from_hex(raw).map_err(|e| err(line, format!("block: {e}")))?;
            let hash = block.hash();
            match tree.height(&hash) {
                Some(h) if h > anchor_height => {}
                Some(_) => return Err(err(line, "block at or below the anchor".into())),
                None => return Err(err(line, format!("block {hash} has no header in the tree"))),
            }
            for tx in &block.transactions {
                tx_blocks.entry(tx.txid()).or_default().push(hash);
            }
            tree.set_block(block).map_err(|e| err(line, e.to_string()))?;
        }

        let mut outbound = VecDeque::new();
        for (line, raw) in outbound_lines {
            outbound.push_back(hex::decode(raw).map_err(|e| err(line, format!("transaction: {e}")))?);
        }

        let mut state = CanisterState {
            config,
            utxos,
            tree,
            anchor,
            outbound,
            synced: true,
            tx_blocks,
            diagnostics: Diagnostics::default(),
        };
        state.refresh_synced();
        Ok(state)
    }
}
