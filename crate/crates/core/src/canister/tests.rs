use super::*;
use crate::address::Address;
use crate::block::{OutPoint, Transaction, TxIn, TxOut};
use crate::encode::Encodable;
use crate::mining::{child_block, mine_block};

const NOW: u64 = 2_000_000_000_000;
const NET: NetworkKind = NetworkKind::Regtest;

fn canister(delta: u64) -> (CanisterState, BlockHeader) {
    let mut config = CanisterConfig::for_network(NET);
    config.delta = delta;
    let g = NET.genesis_header();
    (CanisterState::new(config, g).unwrap(), g)
}

fn feed(c: &mut CanisterState, blocks: &[&Block]) -> ResponseReport {
    let resp = GetSuccessorsResponse {
        blocks: blocks.iter().map(|b| ((*b).clone(), b.header)).collect(),
        next_headers: vec![],
    };
    c.handle_response(&resp, NOW)
}

fn addr(i: u8) -> Address {
    Address::P2pkh([i; 20])
}

fn pay(i: u8, value: u64) -> TxOut {
    TxOut { value, script_pubkey: addr(i).script_pubkey().unwrap() }
}

fn coinbase(tag: u64, outputs: Vec<TxOut>) -> Transaction {
    let mut tx = Transaction::coinbase(&tag.to_le_bytes(), 0, vec![]);
    tx.outputs = outputs;
    tx
}

fn spend(prev: OutPoint, outputs: Vec<TxOut>) -> Transaction {
    Transaction {
        version: 2,
        inputs: vec![TxIn { previous_output: prev, script_sig: vec![1], sequence: u32::MAX }],
        outputs,
        lock_time: 0,
    }
}

fn block_with(parent: &BlockHeader, txs: Vec<Transaction>) -> Block {
    mine_block(parent, parent.time + 600, parent.bits, txs)
}

fn linear(parent: &BlockHeader, n: usize, salt: u64) -> Vec<Block> {
    let mut out: Vec<Block> = Vec::new();
    let mut p = *parent;
    for i in 0..n {
        let b = child_block(&p, salt * 1000 + i as u64);
        p = b.header;
        out.push(b);
    }
    out
}

#[test]
fn fresh_request() {
    let (mut c, g) = canister(6);
    let req = c.build_request();
    assert_eq!(req.anchor, g);
    assert!(req.processed.is_empty());
    assert!(req.transactions.is_empty());
}

#[test]
fn request_lists_held_blocks() {
    let (mut c, g) = canister(6);
    let blocks = linear(&g, 2, 1);
    feed(&mut c, &[&blocks[0], &blocks[1]]);
    let req = c.build_request();
    assert_eq!(req.processed, blocks.iter().map(Block::hash).collect());
}

#[test]
fn anchor_advances_past_contested_fork() {
    let (mut c, g) = canister(2);
    let a = linear(&g, 3, 1);
    let b1 = child_block(&g, 99);
    feed(&mut c, &[&a[0], &b1, &a[1]]);
    assert_eq!(c.anchor(), g.hash());
    let report = feed(&mut c, &[&a[2]]);
    assert_eq!(report.anchors, vec![a[0].hash(), a[1].hash()]);
    assert_eq!(c.anchor(), a[1].hash());
    assert!(!c.tree().contains(&b1.hash()));
    // the anchor's body is consumed into the UTXO set
    assert!(c.tree().block(&a[1].hash()).is_none());
    assert_eq!(c.utxos().len(), 2);
    assert_eq!(c.held_blocks().collect::<Vec<_>>(), vec![a[2].hash()]);
}

#[test]
fn depth_only_rule_ignores_rivals() {
    let (mut c, g) = canister(2);
    c.config.anchor_rule = AnchorRule::DepthOnly;
    let a = linear(&g, 2, 1);
    let b = linear(&g, 1, 2);
    feed(&mut c, &[&a[0], &b[0], &a[1]]);
    assert_eq!(c.anchor(), a[0].hash());

    let (mut full, _) = canister(2);
    feed(&mut full, &[&a[0], &b[0], &a[1]]);
    assert_eq!(full.anchor(), g.hash());
}

#[test]
fn bad_merkle_root_is_skipped() {
    let (mut c, g) = canister(6);
    let good = linear(&g, 2, 1);
    let mut bad = child_block(&g, 50);
    bad.transactions.push(spend(OutPoint::new(Hash256::ZERO, 5), vec![pay(1, 1)]));
    let report = feed(&mut c, &[&bad, &good[0], &good[1]]);
    assert_eq!(report.blocks_accepted, 2);
    assert_eq!(report.rejected.len(), 1);
    assert!(matches!(report.rejected[0].1, Rejection::Block(BlockViolation::MerkleMismatch)));
}

#[test]
fn blocks_need_parent_bodies() {
    let (mut c, g) = canister(6);
    let blocks = linear(&g, 2, 1);
    let resp = GetSuccessorsResponse { blocks: vec![], next_headers: vec![blocks[0].header] };
    c.handle_response(&resp, NOW);
    let report = feed(&mut c, &[&blocks[1]]);
    assert!(matches!(report.rejected[0].1, Rejection::Block(BlockViolation::ParentBodyUnavailable(_))));
    // the header was already known, so the body may follow later
    let report = feed(&mut c, &[&blocks[0], &blocks[1]]);
    assert_eq!(report.blocks_accepted, 2);
}

#[test]
fn header_gap_controls_sync() {
    let (mut c, g) = canister(6);
    let blocks = linear(&g, 4, 1);
    let headers = |bs: &[Block]| bs.iter().map(|b| b.header).collect::<Vec<_>>();
    c.handle_response(&GetSuccessorsResponse { blocks: vec![], next_headers: headers(&blocks[..2]) }, NOW);
    assert!(c.is_synced());
    c.handle_response(&GetSuccessorsResponse { blocks: vec![], next_headers: headers(&blocks[..3]) }, NOW);
    assert!(!c.is_synced());
    let a = addr(1).encode(NET);
    assert_eq!(c.get_utxos(&a, NET, None), Err(ApiError::NotSynced));
    assert_eq!(c.get_balance(&a, NET, None), Err(ApiError::NotSynced));
    assert_eq!(c.send_transaction(&[], NET), Err(ApiError::NotSynced));
    feed(&mut c, &[&blocks[0]]);
    assert!(c.is_synced());
    assert!(c.get_utxos(&a, NET, None).is_ok());
}

#[test]
fn confirmation_filter_truncates_chain() {
    let (mut c, g) = canister(6);
    let b1 = block_with(&g, vec![coinbase(1, vec![pay(9, 1)])]);
    let b2 = block_with(&b1.header, vec![coinbase(2, vec![pay(9, 1)])]);
    let b3 = block_with(&b2.header, vec![coinbase(3, vec![pay(1, 500)])]);
    let tail = linear(&b3.header, 2, 7);
    feed(&mut c, &[&b1, &b2, &b3, &tail[0], &tail[1]]);
    let a = addr(1).encode(NET);
    let with = |n| c.get_utxos(&a, NET, Some(UtxosFilter::MinConfirmations(n))).unwrap();
    assert_eq!(with(3).utxos.len(), 1);
    assert_eq!(with(3).tip_height, 3);
    assert!(with(4).utxos.is_empty());
    assert_eq!(with(4).tip_height, 2);
    let all = c.get_utxos(&a, NET, None).unwrap();
    assert_eq!(all.tip_hash, tail[1].hash());
    assert_eq!(all.utxos[0].height, 3);
    assert_eq!(c.reported_confirmations(&b3.transactions[0].txid()), Ok(3));
}

#[test]
fn confirmation_limits() {
    let (c, _) = canister(6);
    let a = addr(1).encode(NET);
    assert_eq!(
        c.get_utxos(&a, NET, Some(UtxosFilter::MinConfirmations(7))),
        Err(ApiError::TooManyConfirmations { requested: 7, delta: 6 })
    );
    assert_eq!(c.get_balance(&a, NET, Some(0)), Err(ApiError::ZeroConfirmations));
    assert!(c.get_utxos(&a, NET, Some(UtxosFilter::MinConfirmations(6))).is_ok());
    assert!(matches!(c.get_utxos(&a, NetworkKind::Mainnet, None), Err(ApiError::WrongNetwork { .. })));
}

#[test]
fn absent_address_gives_empty_page() {
    let (c, g) = canister(6);
    let page = c.get_utxos(&addr(3).encode(NET), NET, None).unwrap();
    assert!(page.utxos.is_empty());
    assert_eq!(page.next_page, None);
    assert_eq!((page.tip_hash, page.tip_height), (g.hash(), 0));
}

#[test]
fn pagination_covers_everything_once() {
    let (mut c, g) = canister(2);
    c.config.page_size = 3;
    let mut parent = g;
    let mut blocks = Vec::new();
    for i in 0..4u64 {
        let b = block_with(&parent, vec![coinbase(i, vec![pay(5, 1), pay(5, 2), pay(6, 3)])]);
        parent = b.header;
        blocks.push(b);
    }
    let refs: Vec<&Block> = blocks.iter().collect();
    feed(&mut c, &refs);
    // three blocks are anchored, one remains unstable
    assert_eq!(c.anchor_height(), 3);
    let a = addr(5).encode(NET);
    let full = c.get_utxos(&a, NET, None).unwrap();
    assert_eq!(full.utxos.len(), 3);
    let mut pages = vec![full.clone()];
    while let Some(token) = pages.last().unwrap().next_page.clone() {
        pages.push(c.get_utxos(&a, NET, Some(UtxosFilter::Page(token))).unwrap());
    }
    let joined: Vec<Utxo> = pages.iter().flat_map(|p| p.utxos.clone()).collect();
    assert_eq!(pages.iter().map(|p| p.utxos.len()).collect::<Vec<_>>(), vec![3, 3, 2]);
    assert!(joined.windows(2).all(|w| w[0].key() < w[1].key()));
    assert_eq!(joined.iter().map(|u| u.value).sum::<u64>(), c.get_balance(&a, NET, None).unwrap());
    assert_eq!(
        c.get_utxos(&a, NET, Some(UtxosFilter::Page(PageToken("zz".into())))),
        Err(ApiError::BadPageToken)
    );
}

#[test]
fn unstable_spends_hide_anchored_outputs() {
    let (mut c, g) = canister(1);
    let b1 = block_with(&g, vec![coinbase(1, vec![pay(1, 100)])]);
    let prev = OutPoint::new(b1.transactions[0].txid(), 0);
    let b2 = block_with(&b1.header, vec![coinbase(2, vec![pay(9, 0)]), spend(prev, vec![pay(2, 60), pay(1, 30)])]);
    let report = feed(&mut c, &[&b1]);
    assert!(report.rejected.is_empty(), "{:?}", report.rejected);
    assert_eq!(c.anchor(), b1.hash());
    feed(&mut c, &[&b2]);
    assert_eq!(c.anchor(), b2.hash());
    assert_eq!(c.get_balance(&addr(1).encode(NET), NET, None), Ok(30));
    assert_eq!(c.get_balance(&addr(2).encode(NET), NET, None), Ok(60));

    let (mut d, _) = canister(5);
    feed(&mut d, &[&b1, &b2]);
    assert_eq!(d.anchor(), g.hash());
    assert_eq!(d.get_balance(&addr(1).encode(NET), NET, None), Ok(30));
    assert_eq!(d.get_balance(&addr(1).encode(NET), NET, Some(2)), Ok(100));
}

#[test]
fn losing_fork_leaves_no_trace() {
    let (mut c, g) = canister(3);
    let loser = block_with(&g, vec![coinbase(77, vec![pay(4, 1000)])]);
    let winner = linear(&g, 4, 1);
    feed(&mut c, &[&loser]);
    assert_eq!(c.get_balance(&addr(4).encode(NET), NET, None), Ok(1000));
    let refs: Vec<&Block> = winner.iter().collect();
    feed(&mut c, &refs);
    assert_eq!(c.get_balance(&addr(4).encode(NET), NET, None), Ok(0));
    assert_eq!(c.anchor(), winner[1].hash());
    assert!(c.utxos().by_outpoint().values().all(|(o, _)| o.value != 1000));
}

#[test]
fn forks_below_anchor_are_rejected() {
    let (mut c, g) = canister(1);
    let a = linear(&g, 2, 1);
    feed(&mut c, &[&a[0], &a[1]]);
    assert_eq!(c.anchor(), a[1].hash());
    let late = child_block(&a[0].header, 55);
    let report = feed(&mut c, &[&late]);
    assert!(matches!(report.rejected[0].1, Rejection::BelowAnchor { .. }));
    assert_eq!(c.diagnostics().below_anchor_forks, vec![late.hash()]);
    for h in 0..=c.anchor_height() {
        assert_eq!(c.tree().at_height(h).count(), 1);
    }
}

#[test]
fn send_transaction_queues() {
    let (mut c, _) = canister(6);
    let tx = spend(OutPoint::new(Hash256::from_bytes([3; 32]), 0), vec![pay(1, 5)]);
    let bytes = tx.serialize();
    assert_eq!(c.send_transaction(&bytes, NET), Ok(tx.txid()));
    assert!(matches!(c.send_transaction(&bytes[..bytes.len() - 1], NET), Err(ApiError::Malformed(_))));
    assert!(matches!(c.send_transaction(&bytes, NetworkKind::Testnet), Err(ApiError::WrongNetwork { .. })));
    let req = c.build_request();
    assert_eq!(req.transactions, vec![bytes]);
    assert!(c.build_request().transactions.is_empty());
}

#[test]
fn snapshot_round_trip() {
    let (mut c, g) = canister(2);
    let blocks = linear(&g, 5, 1);
    let refs: Vec<&Block> = blocks.iter().collect();
    feed(&mut c, &refs);
    c.send_transaction(&spend(OutPoint::new(Hash256::ZERO, 1), vec![pay(1, 1)]).serialize(), NET).unwrap();
    let text = c.dump_snapshot();
    let loaded = CanisterState::load_snapshot(&text).unwrap();
    assert_eq!(loaded.dump_snapshot(), text);
    assert_eq!(loaded.utxos(), c.utxos());
    assert_eq!(loaded.anchor(), c.anchor());
    assert_eq!(loaded.held_blocks().collect::<Vec<_>>(), c.held_blocks().collect::<Vec<_>>());

    let broken = text.replacen("delta 2", "delta x", 1);
    assert!(matches!(CanisterState::load_snapshot(&broken), Err(SnapshotError::Line { line: 3, .. })));
    assert!(CanisterState::load_snapshot("hello").is_err());
}
