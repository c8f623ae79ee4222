//! Address extraction from locking scripts.
//!
//! P2PKH, P2SH and P2WPKH scripts map to their standard address forms.
//! Every other script is indexed under its double-SHA256, rendered as
//! `script:<hex>`, so that all outputs are reachable through the index.

use std::fmt;

use bech32::{hrp, segwit, Hrp};
use thiserror::Error;

use crate::hash::{sha256d, Hash256};
use crate::network::NetworkKind;

const OP_0: u8 = 0x00;
const OP_DUP: u8 = 0x76;
const OP_HASH160: u8 = 0xa9;
const OP_EQUAL: u8 = 0x87;
const OP_EQUALVERIFY: u8 = 0x88;
const OP_CHECKSIG: u8 = 0xac;

const SCRIPT_PREFIX: &str = "script:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Address {
    P2pkh([u8; 20]),
    P2sh([u8; 20]),
    P2wpkh([u8; 20]),
    /// Any non-standard script, keyed by the script's double-SHA256.
    Script(Hash256),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("invalid base58 address: {0}")]
    Base58(String),
    #[error("invalid bech32 address: {0}")]
    Bech32(String),
    #[error("address belongs to another network")]
    WrongNetwork,
    #[error("unsupported address payload")]
    Unsupported,
}

fn hash20(bytes: &[u8]) -> [u8; 20] {
    bytes.try_into().expect("20-byte slice")
}

fn base58_versions(network: NetworkKind) -> (u8, u8) {
    match network {
        NetworkKind::Mainnet => (0x00, 0x05),
        NetworkKind::Testnet | NetworkKind::Regtest => (0x6f, 0xc4),
    }
}

fn bech32_hrp(network: NetworkKind) -> Hrp {
    match network {
        NetworkKind::Mainnet => hrp::BC,
        NetworkKind::Testnet => hrp::TB,
        NetworkKind::Regtest => hrp::BCRT,
    }
}

impl Address {
    pub fn from_script(script: &[u8]) -> Address {
        match script {
            [OP_DUP, OP_HASH160, 20, h @ .., OP_EQUALVERIFY, OP_CHECKSIG] if h.len() == 20 => Address::P2pkh(hash20(h)),
            [OP_HASH160, 20, h @ .., OP_EQUAL] if h.len() == 20 => Address::P2sh(hash20(h)),
            [OP_0, 20, h @ ..] if h.len() == 20 => Address::P2wpkh(hash20(h)),
            _ => Address::Script(sha256d(script)),
        }
    }

    /// The canonical locking script, when the address determines one.
    pub fn script_pubkey(&self) -> Option<Vec<u8>> {
        let script = match self {
            Address::P2pkh(h) => [&[OP_DUP, OP_HASH160, 20][..], h, &[OP_EQUALVERIFY, OP_CHECKSIG]].concat(),
            Address::P2sh(h) => [&[OP_HASH160, 20][..], h, &[OP_EQUAL]].concat(),
            Address::P2wpkh(h) => [&[OP_0, 20][..], h].concat(),
            Address::Script(_) => return None,
        };
        Some(script)
    }

    pub fn encode(&self, network: NetworkKind) -> String {
        let (pkh, sh) = base58_versions(network);
        match self {
            Address::P2pkh(h) => bs58::encode(h).with_check_version(pkh).into_string(),
            Address::P2sh(h) => bs58::encode(h).with_check_version(sh).into_string(),
            Address::P2wpkh(h) => segwit::encode(bech32_hrp(network), segwit::VERSION_0, h).expect("20-byte program"),
            Address::Script(h) => format!("{SCRIPT_PREFIX}{h}"),
        }
    }

    pub fn parse(s: &str, network: NetworkKind) -> Result<Address, AddressError> {
        if let Some(hex) = s.strip_prefix(SCRIPT_PREFIX) {
            return hex
                .parse::<Hash256>()
                .map(Address::Script)
                .map_err(|e| AddressError::Base58(e.to_string()));
        }
        let lower = s.to_ascii_lowercase();
        if lower.starts_with("bc1") || lower.starts_with("tb1") || lower.starts_with("bcrt1") {
            let (hrp, version, program) = segwit::decode(s).map_err(|e| AddressError::Bech32(e.to_string()))?;
            if hrp != bech32_hrp(network) {
                return Err(AddressError::WrongNetwork);
            }
            if version != segwit::VERSION_0 || program.len() != 20 {
                return Err(AddressError::Unsupported);
            }
            return Ok(Address::P2wpkh(hash20(&program)));
        }
        let bytes = bs58::decode(s)
            .with_check(None)
            .into_vec()
            .map_err(|e| AddressError::Base58(e.to_string()))?;
        if bytes.len() != 21 {
            return Err(AddressError::Unsupported);
        }
        let (pkh, sh) = base58_versions(network);
        match bytes[0] {
            v if v == pkh => Ok(Address::P2pkh(hash20(&bytes[1..]))),
            v if v == sh => Ok(Address::P2sh(hash20(&bytes[1..]))),
            _ => Err(AddressError::WrongNetwork),
        }
    }
}

/// Display without network context: kind and payload in hex.
impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Address::P2pkh(h) => write!(f, "p2pkh:{}", hex::encode(h)),
            Address::P2sh(h) => write!(f, "p2sh:{}", hex::encode(h)),
            Address::P2wpkh(h) => write!(f, "p2wpkh:{}", hex::encode(h)),
            Address::Script(h) => write!(f, "{SCRIPT_PREFIX}{h}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(s: &str) -> [u8; 20] {
        hex::decode(s).unwrap().try_into().unwrap()
    }

    #[test]
    fn genesis_p2pkh() {
        let a = Address::P2pkh(h("62e907b15cbf27d5425399ebf6f0fb50ebb88f18"));
        assert_eq!(a.encode(NetworkKind::Mainnet), "1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa");
        assert_eq!(Address::parse("1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa", NetworkKind::Mainnet), Ok(a));
        assert_eq!(
            Address::parse("1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa", NetworkKind::Testnet),
            Err(AddressError::WrongNetwork)
        );
    }

    #[test]
    fn bip173_p2wpkh() {
        let a = Address::P2wpkh(h("751e76e8199196d454941c45d1b3a323f1433bd6"));
        assert_eq!(a.encode(NetworkKind::Mainnet), "bc1qw508d6qejxtdg4y5r3zarvary0c5xw7kv8f3t4");
        assert_eq!(Address::parse("BC1QW508D6QEJXTDG4Y5R3ZARVARY0C5XW7KV8F3T4", NetworkKind::Mainnet), Ok(a));
    }

    #[test]
    fn script_templates_round_trip() {
        let payload = h("00112233445566778899aabbccddeeff00112233");
        for a in [Address::P2pkh(payload), Address::P2sh(payload), Address::P2wpkh(payload)] {
            let script = a.script_pubkey().unwrap();
            assert_eq!(Address::from_script(&script), a);
            for net in NetworkKind::ALL {
                assert_eq!(Address::parse(&a.encode(net), net), Ok(a));
            }
        }
    }

    #[test]
    fn opaque_scripts_hash() {
        let script = [0x51u8];
        let a = Address::from_script(&script);
        assert_eq!(a, Address::Script(sha256d(&script)));
        assert_eq!(Address::parse(&a.encode(NetworkKind::Regtest), NetworkKind::Regtest), Ok(a));
        // truncated P2PKH template is not P2PKH
        assert!(matches!(Address::from_script(&[OP_DUP, OP_HASH160, 20, 1, 2]), Address::Script(_)));
    }
}
