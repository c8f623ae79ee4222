//! Per-block depth and stability table for a tree dump.

use bitsync_core::stability::{self, current_chain, DepthKind};
use bitsync_core::tree::DumpError;
use bitsync_core::{BlockTree, WorkPolicy};

/// CSV with columns `hash,height,depth,stability,stable,current`, rows
/// ordered by height then hash. `stable` is the δ-stability flag under
/// `kind`; `current` marks blocks on the current chain.
pub fn stability_table(dump: &str, delta: u64, kind: DepthKind) -> Result<String, DumpError> {
    let tree = BlockTree::load(dump, WorkPolicy::Target)?;
    let chain = current_chain(&tree);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["hash", "height", "depth", "stability", "stable", "current"]).expect("in-memory write");
    for hash in tree.iter_hashes() {
        let depth = stability::depth(&tree, hash, kind).expect("hash from tree");
        let score = stability::stability(&tree, hash, kind).expect("hash from tree");
        let stable = stability::is_delta_stable(&tree, hash, delta, kind).expect("hash from tree");
        w.write_record([
            hash.to_string(),
            tree.height(hash).expect("hash from tree").to_string(),
            depth.to_string(),
            score.to_string(),
            u8::from(stable).to_string(),
            if chain.contains(hash) { "*".to_string() } else { String::new() },
        ])
        .expect("in-memory write");
    }
    Ok(String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(c: char) -> String {
        std::iter::repeat_n(c, 64).collect()
    }

    /// g -> a1 -> a2 -> a3 and g -> b1, all at the regtest target.
    fn two_forks() -> String {
        let (g, a1, a2, a3, b1) = (h('0'), h('a'), h('b'), h('c'), h('d'));
        format!("{g} - 0 207fffff 1\n{a1} {g} 1 207fffff 1\n{a2} {a1} 2 207fffff 1\n{a3} {a2} 3 207fffff 1\n{b1} {g} 1 207fffff 1\n")
    }

    fn row(table: &str, hash: &str) -> Vec<String> {
        table.lines().find(|l| l.starts_with(hash)).unwrap().split(',').map(str::to_string).collect()
    }

    #[test]
    fn two_fork_stabilities() {
        let t = stability_table(&two_forks(), 2, DepthKind::Confirmation).unwrap();
        assert_eq!(row(&t, &h('a')), vec![h('a'), "1".into(), "3".into(), "2".into(), "1".into(), "*".into()]);
        assert_eq!(row(&t, &h('d')), vec![h('d'), "1".into(), "1".into(), "-2".into(), "0".into(), String::new()]);
    }

    #[test]
    fn single_block() {
        let t = stability_table(&format!("{} - 0 207fffff 1\n", h('0')), 1, DepthKind::Confirmation).unwrap();
        assert_eq!(row(&t, &h('0'))[3], "1");
    }

    #[test]
    fn work_depths_use_block_work() {
        let t = stability_table(&two_forks(), 2, DepthKind::Work).unwrap();
        // regtest blocks carry work 2
        assert_eq!(row(&t, &h('a'))[2], "6");
        assert_eq!(row(&t, &h('a'))[3], "4");
    }

    #[test]
    fn bad_dumps_rejected() {
        assert!(matches!(stability_table("", 1, DepthKind::Confirmation), Err(DumpError::Empty)));
        let orphan = format!("{} - 0 207fffff 1\n{} {} 5 207fffff 1\n", h('0'), h('a'), h('e'));
        assert!(stability_table(&orphan, 1, DepthKind::Confirmation).is_err());
    }
}
