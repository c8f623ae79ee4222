use std::fmt;
use std::str::FromStr;

use crate::block::BlockHeader;
use crate::hash::Hash256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetworkKind {
    Mainnet,
    Testnet,
    Regtest,
}

const GENESIS_MERKLE_ROOT: &str = "4a5e1e4baab89f3a32518a88c31bc87f618f76673e2cc77ab2127b7afdeda33b";

impl NetworkKind {
    pub const ALL: [NetworkKind; 3] = [NetworkKind::Mainnet, NetworkKind::Testnet, NetworkKind::Regtest];

    /// Easiest target permitted on the network.
    pub fn pow_limit_bits(self) -> u32 {
        match self {
            NetworkKind::Mainnet | NetworkKind::Testnet => 0x1d00ffff,
            NetworkKind::Regtest => 0x207fffff,
        }
    }

    /// Whether the target is recomputed every retarget interval.
    pub fn retargets(self) -> bool {
        !matches!(self, NetworkKind::Regtest)
    }

    /// Default address-pool thresholds `(low, high)` of the adapter.
    pub fn address_thresholds(self) -> (usize, usize) {
        match self {
            NetworkKind::Mainnet => (500, 2000),
            NetworkKind::Testnet => (100, 1000),
            NetworkKind::Regtest => (1, 1),
        }
    }

    pub fn genesis_header(self) -> BlockHeader {
        let merkle_root = Hash256::from_display_hex(GENESIS_MERKLE_ROOT).expect("valid constant");
        let (time, nonce) = match self {
            NetworkKind::Mainnet => (1_231_006_505, 2_083_236_893),
            NetworkKind::Testnet => (1_296_688_602, 414_098_458),
            NetworkKind::Regtest => (1_296_688_602, 2),
        };
        BlockHeader {
            version: 1,
            prev: Hash256::ZERO,
            merkle_root,
            time,
            bits: self.pow_limit_bits(),
            nonce,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::Mainnet => "mainnet",
            NetworkKind::Testnet => "testnet",
            NetworkKind::Regtest => "regtest",
        }
    }
}

impl fmt::Display for NetworkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown network `{0}`")]
pub struct UnknownNetwork(pub String);

impl FromStr for NetworkKind {
    type Err = UnknownNetwork;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mainnet" | "bitcoin" => Ok(NetworkKind::Mainnet),
            "testnet" => Ok(NetworkKind::Testnet),
            "regtest" => Ok(NetworkKind::Regtest),
            _ => Err(UnknownNetwork(s.to_string())),
        }
    }
}
