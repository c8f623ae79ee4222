//! Rooted tree of block headers with memoized depths.
//!
//! Every node caches both its confirmation depth (unit cost per block) and
//! its work depth. Inserting a leaf or removing a subtree refreshes the
//! cached values along the ancestor path only, stopping as soon as an
//! ancestor's depths are unchanged.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::block::{Block, BlockHeader};
use crate::encode::Decodable;
use crate::hash::Hash256;
use crate::pow::{header_work, work_from_hash, work_of, CompactError, WorkPolicy};
use crate::Work;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("block {0} is not in the tree")]
    UnknownNode(Hash256),
    #[error("parent {0} is not in the tree")]
    UnknownParent(Hash256),
    #[error("cannot remove the root")]
    RemoveRoot,
    #[error("block body does not belong to header {0}")]
    BodyMismatch(Hash256),
    #[error(transparent)]
    Compact(#[from] CompactError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DumpError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("empty tree dump")]
    Empty,
    #[error("tree dump has {0} roots")]
    Roots(usize),
    #[error("nodes unreachable from the root (orphaned or cyclic): {0}")]
    Unreachable(usize),
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    hash: Hash256,
    prev: Option<Hash256>,
    height: u32,
    bits: u32,
    header: Option<BlockHeader>,
    block: Option<Block>,
    body_flag: bool,
    children: Vec<Hash256>,
    work: Work,
    conf_depth: u64,
    work_depth: Work,
}

impl TreeNode {
    pub fn hash(&self) -> Hash256 {
        self.hash
    }

    /// `None` only for the root.
    pub fn prev(&self) -> Option<Hash256> {
        self.prev
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Headers are absent only for nodes loaded from a tree dump without them.
    pub fn header(&self) -> Option<&BlockHeader> {
        self.header.as_ref()
    }

    pub fn block(&self) -> Option<&Block> {
        self.block.as_ref()
    }

    pub fn has_block(&self) -> bool {
        self.block.is_some() || self.body_flag
    }

    /// Children in ascending hash order.
    pub fn children(&self) -> &[Hash256] {
        &self.children
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn work(&self) -> &Work {
        &self.work
    }

    pub fn conf_depth(&self) -> u64 {
        self.conf_depth
    }

    pub fn work_depth(&self) -> &Work {
        &self.work_depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Inserted {
    New,
    AlreadyPresent,
}

#[derive(Debug, Clone)]
pub struct BlockTree {
    nodes: HashMap<Hash256, TreeNode>,
    by_height: BTreeMap<u32, BTreeSet<Hash256>>,
    root: Hash256,
    work_policy: WorkPolicy,
}

impl BlockTree {
    pub fn new(genesis: BlockHeader, work_policy: WorkPolicy) -> Result<Self, TreeError> {
        Self::with_root(genesis, 0, work_policy)
    }

    /// A tree rooted at `root` with the given height.
    pub fn with_root(root: BlockHeader, height: u32, work_policy: WorkPolicy) -> Result<Self, TreeError> {
        let hash = root.hash();
        let work = header_work(&root, work_policy)?;
        let mut tree = BlockTree {
            nodes: HashMap::new(),
            by_height: BTreeMap::new(),
            root: hash,
            work_policy,
        };
        tree.put(TreeNode {
            hash,
            prev: None,
            height,
            bits: root.bits,
            header: Some(root),
            block: None,
            body_flag: false,
            children: Vec::new(),
            conf_depth: 1,
            work_depth: work.clone(),
            work,
        });
        Ok(tree)
    }

    fn put(&mut self, node: TreeNode) {
        self.by_height.entry(node.height).or_default().insert(node.hash);
        self.nodes.insert(node.hash, node);
    }

    pub fn work_policy(&self) -> WorkPolicy {
        self.work_policy
    }

    pub fn root(&self) -> Hash256 {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, hash: &Hash256) -> bool {
        self.nodes.contains_key(hash)
    }

    pub fn get(&self, hash: &Hash256) -> Option<&TreeNode> {
        self.nodes.get(hash)
    }

    pub fn node(&self, hash: &Hash256) -> Result<&TreeNode, TreeError> {
        self.nodes.get(hash).ok_or(TreeError::UnknownNode(*hash))
    }

    pub fn height(&self, hash: &Hash256) -> Option<u32> {
        self.nodes.get(hash).map(|n| n.height)
    }

    pub fn header(&self, hash: &Hash256) -> Option<&BlockHeader> {
        self.nodes.get(hash).and_then(|n| n.header.as_ref())
    }

    pub fn block(&self, hash: &Hash256) -> Option<&Block> {
        self.nodes.get(hash).and_then(|n| n.block.as_ref())
    }

    pub fn max_height(&self) -> u32 {
        *self.by_height.keys().next_back().expect("tree always has a root")
    }

    pub fn min_height(&self) -> u32 {
        *self.by_height.keys().next().expect("tree always has a root")
    }

    /// Hashes at `height`, ascending.
    pub fn at_height(&self, height: u32) -> impl Iterator<Item = &Hash256> + '_ {
        self.by_height.get(&height).into_iter().flatten()
    }

    /// All hashes ordered by (height, hash).
    pub fn iter_hashes(&self) -> impl Iterator<Item = &Hash256> + '_ {
        self.by_height.values().flatten()
    }

    /// Walks from `hash` (inclusive) towards the root.
    pub fn ancestors(&self, hash: Hash256) -> impl Iterator<Item = &TreeNode> + '_ {
        let mut next = Some(hash);
        std::iter::from_fn(move || {
            let node = self.nodes.get(&next?)?;
            next = node.prev;
            Some(node)
        })
    }

    /// The ancestor of `hash` at `height`, if `height` is not above it.
    pub fn ancestor_at(&self, hash: Hash256, height: u32) -> Option<Hash256> {
        self.ancestors(hash).find(|n| n.height == height).map(|n| n.hash)
    }

    pub fn insert_header(&mut self, header: BlockHeader) -> Result<Inserted, TreeError> {
        let hash = header.hash();
        if self.nodes.contains_key(&hash) {
            return Ok(Inserted::AlreadyPresent);
        }
        let work = header_work(&header, self.work_policy)?;
        self.insert_raw(hash, header.prev, header.bits, Some(header), work)
    }

    /// Inserts a header together with its body.
    pub fn insert_block(&mut self, block: Block) -> Result<Inserted, TreeError> {
        let hash = block.hash();
        let outcome = self.insert_header(block.header)?;
        self.nodes.get_mut(&hash).expect("just inserted").block = Some(block);
        Ok(outcome)
    }

    fn insert_raw(
        &mut self,
        hash: Hash256,
        prev: Hash256,
        bits: u32,
        header: Option<BlockHeader>,
        work: Work,
    ) -> Result<Inserted, TreeError> {
        let parent = self.nodes.get_mut(&prev).ok_or(TreeError::UnknownParent(prev))?;
        let pos = parent.children.binary_search(&hash).unwrap_or_else(|p| p);
        parent.children.insert(pos, hash);
        let height = parent.height + 1;
        self.put(TreeNode {
            hash,
            prev: Some(prev),
            height,
            bits,
            header,
            block: None,
            body_flag: false,
            children: Vec::new(),
            conf_depth: 1,
            work_depth: work.clone(),
            work,
        });
        self.refresh_from(prev);
        Ok(Inserted::New)
    }

    /// Recomputes cached depths from `start` up to the root, stopping early
    /// once a node's depths do not change.
    fn refresh_from(&mut self, start: Hash256) {
        let mut cursor = Some(start);
        while let Some(hash) = cursor {
            let node = &self.nodes[&hash];
            let (conf, work) = self.depths_from_children(node);
            let node = self.nodes.get_mut(&hash).expect("ancestor present");
            if node.conf_depth == conf && node.work_depth == work {
                break;
            }
            node.conf_depth = conf;
            node.work_depth = work;
            cursor = node.prev;
        }
    }

    fn depths_from_children(&self, node: &TreeNode) -> (u64, Work) {
        let mut best_conf = 0u64;
        let mut best_work: Option<&Work> = None;
        for child in &node.children {
            let c = &self.nodes[child];
            best_conf = best_conf.max(c.conf_depth);
            if best_work.is_none_or(|w| c.work_depth > *w) {
                best_work = Some(&c.work_depth);
            }
        }
        let work = match best_work {
            Some(w) => &node.work + w,
            None => node.work.clone(),
        };
        (1 + best_conf, work)
    }

    /// Attaches a body to an existing header.
    pub fn set_block(&mut self, block: Block) -> Result<(), TreeError> {
        let hash = block.hash();
        let node = self.nodes.get_mut(&hash).ok_or(TreeError::UnknownNode(hash))?;
        node.block = Some(block);
        Ok(())
    }

    pub fn take_block(&mut self, hash: &Hash256) -> Option<Block> {
        let node = self.nodes.get_mut(hash)?;
        node.body_flag = false;
        node.block.take()
    }

    /// Removes `hash` and all its descendants. Returns the removed nodes.
    pub fn remove_subtree(&mut self, hash: Hash256) -> Result<Vec<TreeNode>, TreeError> {
        let node = self.node(&hash)?;
        let parent = node.prev.ok_or(TreeError::RemoveRoot)?;
        let mut removed = Vec::new();
        let mut stack = vec![hash];
        while let Some(h) = stack.pop() {
            let node = self.nodes.remove(&h).expect("descendant present");
            if let Some(set) = self.by_height.get_mut(&node.height) {
                set.remove(&h);
                if set.is_empty() {
                    self.by_height.remove(&node.height);
                }
            }
            stack.extend(node.children.iter().copied());
            removed.push(node);
        }
        let p = self.nodes.get_mut(&parent).expect("parent present");
        p.children.retain(|c| *c != hash);
        self.refresh_from(parent);
        Ok(removed)
    }

    /// Serializes the tree as one line per node ordered by height:
    /// `hash prev height bits has_block [header_hex]`, with `-` as the
    /// root's prev.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for hash in self.iter_hashes() {
            let n = &self.nodes[hash];
            let prev = n.prev.map_or_else(|| "-".to_string(), |p| p.to_string());
            let _ = write!(out, "{} {} {} {:08x} {}", n.hash, prev, n.height, n.bits, u8::from(n.has_block()));
            if let Some(h) = &n.header {
                let _ = write!(out, " {}", hex::encode(h.to_bytes()));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`BlockTree::dump`]. Blank lines and
    /// lines starting with `#` are ignored; node order is free.
    pub fn load(text: &str, work_policy: WorkPolicy) -> Result<Self, DumpError> {
        struct Row {
            hash: Hash256,
            prev: Option<Hash256>,
            height: u32,
            bits: u32,
            has_block: bool,
            header: Option<BlockHeader>,
            line: usize,
        }
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let err = |msg: String| DumpError::Parse { line, msg };
            let cols: Vec<&str> = raw.split_whitespace().collect();
            if cols.len() != 5 && cols.len() != 6 {
                return Err(err(format!("expected 5 or 6 columns, found {}", cols.len())));
            }
            let hash: Hash256 = cols[0].parse().map_err(|e| err(format!("hash: {e}")))?;
            let prev = match cols[1] {
                "-" => None,
                p => Some(p.parse::<Hash256>().map_err(|e| err(format!("prev: {e}")))?),
            };
            let height = cols[2].parse().map_err(|e| err(format!("height: {e}")))?;
            let bits = u32::from_str_radix(cols[3].trim_start_matches("0x"), 16)
                .map_err(|e| err(format!("bits: {e}")))?;
            let has_block = match cols[4] {
                "0" => false,
                "1" => true,
                other => return Err(err(format!("has_block must be 0 or 1, got `{other}`"))),
            };
            let header = match cols.get(5) {
                None => None,
                Some(h) => {
                    let header = BlockHeader::from_hex(h).map_err(|e| err(format!("header: {e}")))?;
                    if header.hash() != hash || prev.is_some_and(|p| p != header.prev) || header.bits != bits {
                        return Err(err("header does not match hash/prev/bits columns".into()));
                    }
                    Some(header)
                }
            };
            rows.push(Row { hash, prev, height, bits, has_block, header, line });
        }
        if rows.is_empty() {
            return Err(DumpError::Empty);
        }
        let roots: Vec<&Row> = rows.iter().filter(|r| r.prev.is_none()).collect();
        if roots.len() != 1 {
            return Err(DumpError::Roots(roots.len()));
        }
        let root = roots[0];
        let work_for = |row: &Row| -> Result<Work, DumpError> {
            let w = match work_policy {
                WorkPolicy::Target => work_of(row.bits),
                WorkPolicy::Hash => work_of(row.bits).map(|_| work_from_hash(&row.hash)),
            };
            w.map_err(|e| DumpError::Parse { line: row.line, msg: e.to_string() })
        };
        let mut tree = BlockTree {
            nodes: HashMap::new(),
            by_height: BTreeMap::new(),
            root: root.hash,
            work_policy,
        };
        let root_work = work_for(root)?;
        tree.put(TreeNode {
            hash: root.hash,
            prev: None,
            height: root.height,
            bits: root.bits,
            header: root.header,
            block: None,
            body_flag: root.has_block,
            children: Vec::new(),
            conf_depth: 1,
            work_depth: root_work.clone(),
            work: root_work,
        });
        let mut by_parent: HashMap<Hash256, Vec<&Row>> = HashMap::new();
        for row in rows.iter().filter(|r| r.prev.is_some()) {
            by_parent.entry(row.prev.unwrap()).or_default().push(row);
        }
        let mut frontier = vec![root.hash];
        let mut placed = 1;
        while let Some(parent) = frontier.pop() {
            let parent_height = tree.nodes[&parent].height;
            for row in by_parent.remove(&parent).unwrap_or_default() {
                if tree.contains(&row.hash) {
                    return Err(DumpError::Parse { line: row.line, msg: "duplicate node".into() });
                }
                if row.height != parent_height + 1 {
                    return Err(DumpError::Parse {
                        line: row.line,
                        msg: format!("height {} does not follow parent height {parent_height}", row.height),
                    });
                }
                let work = work_for(row)?;
                tree.insert_raw(row.hash, parent, row.bits, row.header, work)
                    .expect("parent placed");
                tree.nodes.get_mut(&row.hash).unwrap().body_flag = row.has_block;
                frontier.push(row.hash);
                placed += 1;
            }
        }
        if placed != rows.len() {
            return Err(DumpError::Unreachable(rows.len() - placed));
        }
        Ok(tree)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mining::child_header as child;

    fn genesis() -> BlockHeader {
        crate::NetworkKind::Regtest.genesis_header()
    }

    #[test]
    fn heights_and_depths_on_a_chain() {
        let g = genesis();
        let mut tree = BlockTree::new(g, WorkPolicy::Target).unwrap();
        let a = child(&g, 1);
        let b = child(&a, 1);
        tree.insert_header(a).unwrap();
        tree.insert_header(b).unwrap();
        assert_eq!(tree.height(&b.hash()), Some(2));
        assert_eq!(tree.node(&g.hash()).unwrap().conf_depth(), 3);
        assert_eq!(*tree.node(&g.hash()).unwrap().work_depth(), Work::from(6u32));
        assert_eq!(tree.insert_header(b).unwrap(), Inserted::AlreadyPresent);
        assert_eq!(tree.len(), 3);
    }

    #[test]
    fn unknown_parent_rejected() {
        let g = genesis();
        let mut tree = BlockTree::new(g, WorkPolicy::Target).unwrap();
        let a = child(&g, 1);
        let b = child(&a, 1);
        assert_eq!(tree.insert_header(b), Err(TreeError::UnknownParent(a.hash())));
    }

    #[test]
    fn remove_subtree_refreshes_depths() {
        let g = genesis();
        let mut tree = BlockTree::new(g, WorkPolicy::Target).unwrap();
        let a1 = child(&g, 1);
        let a2 = child(&a1, 1);
        let b1 = child(&g, 2);
        for h in [a1, a2, b1] {
            tree.insert_header(h).unwrap();
        }
        assert_eq!(tree.node(&g.hash()).unwrap().conf_depth(), 3);
        let removed = tree.remove_subtree(a1.hash()).unwrap();
        assert_eq!(removed.len(), 2);
        assert_eq!(tree.node(&g.hash()).unwrap().conf_depth(), 2);
        assert!(tree.at_height(2).next().is_none());
        assert_eq!(tree.max_height(), 1);
        assert_eq!(tree.remove_subtree(g.hash()).unwrap_err(), TreeError::RemoveRoot);
    }

    #[test]
    fn dump_load_round_trip() {
        let g = genesis();
        let mut tree = BlockTree::new(g, WorkPolicy::Target).unwrap();
        let a = child(&g, 1);
        let b = child(&g, 2);
        tree.insert_header(a).unwrap();
        tree.insert_header(b).unwrap();
        let text = tree.dump();
        let loaded = BlockTree::load(&text, WorkPolicy::Target).unwrap();
        assert_eq!(loaded.dump(), text);
        assert_eq!(loaded.node(&g.hash()).unwrap().conf_depth(), 2);
    }

    #[test]
    fn load_without_headers() {
        let text = "\
# g -> a
0000000000000000000000000000000000000000000000000000000000000001 - 0 207fffff 1
0000000000000000000000000000000000000000000000000000000000000002 0000000000000000000000000000000000000000000000000000000000000001 1 207fffff 0
";
        let tree = BlockTree::load(text, WorkPolicy::Target).unwrap();
        assert_eq!(tree.len(), 2);
        assert!(tree.get(&tree.root()).unwrap().has_block());
        assert!(tree.get(&tree.root()).unwrap().header().is_none());
    }

    #[test]
    fn load_errors() {
        assert_eq!(BlockTree::load("", WorkPolicy::Target).unwrap_err(), DumpError::Empty);
        let orphan = "\
0000000000000000000000000000000000000000000000000000000000000001 - 0 207fffff 0
0000000000000000000000000000000000000000000000000000000000000002 0000000000000000000000000000000000000000000000000000000000000009 1 207fffff 0
";
        assert_eq!(BlockTree::load(orphan, WorkPolicy::Target).unwrap_err(), DumpError::Unreachable(1));
        let cyclic = "\
0000000000000000000000000000000000000000000000000000000000000001 0000000000000000000000000000000000000000000000000000000000000002 1 207fffff 0
0000000000000000000000000000000000000000000000000000000000000002 0000000000000000000000000000000000000000000000000000000000000001 1 207fffff 0
";
        assert_eq!(BlockTree::load(cyclic, WorkPolicy::Target).unwrap_err(), DumpError::Roots(0));
        assert!(matches!(
            BlockTree::load("zz - 0 207fffff 0", WorkPolicy::Target),
            Err(DumpError::Parse { line: 1, .. })
        ));
    }
}
