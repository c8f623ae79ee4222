use bitsync_core::{Block, BlockHeader, Decodable, Encodable, Hash256, OutPoint, Transaction, TxIn, TxOut};
use proptest::prelude::*;

fn hash() -> impl Strategy<Value = Hash256> {
    any::<[u8; 32]>().prop_map(Hash256::from_bytes)
}

fn header() -> impl Strategy<Value = BlockHeader> {
    (any::<i32>(), hash(), hash(), any::<u32>(), any::<u32>(), any::<u32>())
        .prop_map(|(version, prev, merkle_root, time, bits, nonce)| BlockHeader { version, prev, merkle_root, time, bits, nonce })
}

fn tx() -> impl Strategy<Value = Transaction> {
    let input = (hash(), any::<u32>(), prop::collection::vec(any::<u8>(), 0..300), any::<u32>()).prop_map(|(txid, vout, script_sig, sequence)| TxIn {
        previous_output: OutPoint::new(txid, vout),
        script_sig,
        sequence,
    });
    let output = (any::<u64>(), prop::collection::vec(any::<u8>(), 0..300)).prop_map(|(value, script_pubkey)| TxOut { value, script_pubkey });
    (any::<i32>(), prop::collection::vec(input, 1..4), prop::collection::vec(output, 0..4), any::<u32>())
        .prop_map(|(version, inputs, outputs, lock_time)| Transaction { version, inputs, outputs, lock_time })
}

proptest! {
    #[test]
    fn header_round_trip(h in header()) {
        let bytes = h.serialize();
        prop_assert_eq!(bytes.len(), 80);
        prop_assert_eq!(BlockHeader::deserialize(&bytes).unwrap(), h);
        prop_assert_eq!(BlockHeader::from_bytes(&h.to_bytes()), h);
    }

    #[test]
    fn transaction_round_trip(t in tx()) {
        let bytes = t.serialize();
        prop_assert_eq!(Transaction::deserialize(&bytes).unwrap(), t);
    }

    #[test]
    fn block_round_trip(h in header(), txs in prop::collection::vec(tx(), 0..5)) {
        let block = Block { header: h, transactions: txs };
        let bytes = block.serialize();
        prop_assert_eq!(bytes.len(), block.size());
        prop_assert_eq!(Block::deserialize(&bytes).unwrap(), block);
    }

    #[test]
    fn truncation_is_an_error(t in tx(), cut in 1usize..40) {
        let bytes = t.serialize();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(Transaction::deserialize(&bytes[..keep]).is_err());
    }
}
