use std::fmt;

use crate::block::{Block, BlockHeader, Transaction};
use crate::hash::Hash256;

use super::peers::PeerId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InvItem {
    Block(Hash256),
    Tx(Hash256),
}

/// Simulated P2P messages exchanged between adapters and Bitcoin peers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Inv(Vec<InvItem>),
    Headers(Vec<BlockHeader>),
    /// Block locator, newest first.
    GetHeaders(Vec<Hash256>),
    Block(Block),
    GetData(Vec<InvItem>),
    Tx(Transaction),
    Addr(Vec<PeerId>),
}

impl WireMessage {
    pub fn tag(&self) -> &'static str {
        match self {
            WireMessage::Inv(_) => "inv",
            WireMessage::Headers(_) => "headers",
            WireMessage::GetHeaders(_) => "getheaders",
            WireMessage::Block(_) => "block",
            WireMessage::GetData(_) => "getdata",
            WireMessage::Tx(_) => "tx",
            WireMessage::Addr(_) => "addr",
        }
    }
}

fn short(h: &Hash256) -> String {
    h.to_string()[..16].to_string()
}

/// One-line trace form: the tag followed by a compact summary.
impl fmt::Display for WireMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())?;
        match self {
            WireMessage::Inv(items) | WireMessage::GetData(items) => {
                for item in items {
                    match item {
                        InvItem::Block(h) => write!(f, " block:{}", short(h))?,
                        InvItem::Tx(h) => write!(f, " tx:{}", short(h))?,
                    }
                }
                Ok(())
            }
            WireMessage::Headers(hs) => {
                write!(f, " n={}", hs.len())?;
                if let (Some(first), Some(last)) = (hs.first(), hs.last()) {
                    write!(f, " first={} last={}", short(&first.hash()), short(&last.hash()))?;
                }
                Ok(())
            }
            WireMessage::GetHeaders(locator) => match locator.first() {
                Some(tip) => write!(f, " tip={} len={}", short(tip), locator.len()),
                None => write!(f, " len=0"),
            },
            WireMessage::Block(b) => write!(f, " {} txs={}", short(&b.hash()), b.transactions.len()),
            WireMessage::Tx(tx) => write!(f, " {}", short(&tx.txid())),
            WireMessage::Addr(addrs) => write!(f, " n={}", addrs.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::NetworkKind;

    #[test]
    fn trace_lines() {
        let g = NetworkKind::Mainnet.genesis_header();
        let msg = WireMessage::Headers(vec![g]);
        assert_eq!(msg.to_string(), "headers n=1 first=000000000019d668 last=000000000019d668");
        assert_eq!(WireMessage::Addr(vec![PeerId(1), PeerId(2)]).to_string(), "addr n=2");
        assert_eq!(WireMessage::GetData(vec![InvItem::Block(g.hash())]).to_string(), "getdata block:000000000019d668");
    }
}
