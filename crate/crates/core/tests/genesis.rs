use bitsync_core::{Block, BlockHeader, Decodable, Encodable, NetworkKind, Transaction};
use sha2::{Digest, Sha256};

const MAINNET_HEADER: &str = "0100000000000000000000000000000000000000000000000000000000000000000000003ba3edfd7a7b12b27ac72c3e67768f617fc81bc3888a51323a9fb8aa4b1e5e4a29ab5f49ffff001d1dac2b7c";
const COINBASE: &str = "01000000010000000000000000000000000000000000000000000000000000000000000000ffffffff4d04ffff001d0104455468652054696d65732030332f4a616e2f32303039204368616e63656c6c6f72206f6e206272696e6b206f66207365636f6e64206261696c6f757420666f722062616e6b73ffffffff0100f2052a01000000434104678afdb0fe5548271967f1a67130b7105cd6a828e03909a67962e0ea1f61deb649f6bc3f4cef38c4f35504e51ec112de5c384df7ba0b8d578a4c702b6bf11d5fac00000000";

/// Double SHA-256 shown in the usual byte-reversed form.
fn display_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::digest(Sha256::digest(bytes)).to_vec();
    h.reverse();
    hex::encode(h)
}

#[test]
fn mainnet_genesis_header() {
    let raw = hex::decode(MAINNET_HEADER).unwrap();
    let header = BlockHeader::deserialize(&raw).unwrap();
    assert_eq!(header, NetworkKind::Mainnet.genesis_header());
    assert_eq!(header.serialize(), raw);
    assert_eq!(header.hash().to_string(), display_hash(&raw));
    assert_eq!(header.hash().to_string(), "000000000019d6689c085ae165831e934ff763ae46a2a6c172b3f1b60a8ce26f");
}

#[test]
fn genesis_coinbase_and_block() {
    let raw_tx = hex::decode(COINBASE).unwrap();
    let tx = Transaction::deserialize(&raw_tx).unwrap();
    assert!(tx.is_coinbase());
    assert_eq!(tx.outputs[0].value, 50 * 100_000_000);
    assert_eq!(tx.txid().to_string(), display_hash(&raw_tx));
    assert_eq!(tx.txid().to_string(), "4a5e1e4baab89f3a32518a88c31bc87f618f76673e2cc77ab2127b7afdeda33b");

    let mut raw_block = hex::decode(MAINNET_HEADER).unwrap();
    raw_block.push(1);
    raw_block.extend_from_slice(&raw_tx);
    let block = Block::deserialize(&raw_block).unwrap();
    assert_eq!(block.compute_merkle_root(), Some(block.header.merkle_root));
    assert_eq!(block.serialize(), raw_block);
    assert_eq!(block.size(), raw_block.len());
}

#[test]
fn testnet_and_regtest_genesis() {
    assert_eq!(
        NetworkKind::Testnet.genesis_header().hash().to_string(),
        "000000000933ea01ad0ee984209779baaec3ced90fa3f408719526f8d77f4943"
    );
    assert_eq!(
        NetworkKind::Regtest.genesis_header().hash().to_string(),
        "0f9188f13cb7b2c71f2a335e3a4fc328bf5beb436012afca590b1a11466e2206"
    );
}

#[test]
fn trailing_bytes_rejected() {
    let mut raw = hex::decode(MAINNET_HEADER).unwrap();
    raw.push(0);
    assert!(BlockHeader::deserialize(&raw).is_err());
    assert!(Transaction::deserialize(&hex::decode(&COINBASE[..100]).unwrap()).is_err());
}
