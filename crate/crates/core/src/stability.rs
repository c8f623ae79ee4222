//! Depth functions, δ-stability and current-chain selection.
//!
//! A block `b` is δ-stable when
//!
//! ```text
//! d(b) ≥ δ   and   ∀ b' ≠ b with h(b') = h(b):  d(b) − d(b') ≥ δ
//! ```
//!
//! for a depth `d` that sums a per-block cost along the heaviest path to a
//! leaf. With unit cost this counts confirmations; with per-block work it
//! measures accumulated hash work. The stability score of a block is the
//! largest δ it satisfies, `min(d(b), d(b) − max_{b'} d(b'))`, and can be
//! negative for blocks on losing forks.
//!
//! All arithmetic is exact. Work thresholds relative to a reference block
//! are compared cross-multiplied, never divided.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use num_bigint::{BigInt, BigUint};
use num_traits::Zero;

use crate::hash::Hash256;
use crate::tree::{BlockTree, TreeError, TreeNode};
use crate::Work;

/// Scalar type accumulated by a depth function.
pub trait DepthCost: Clone + Ord + Zero + Add<Output = Self> + fmt::Debug {
    /// Signed counterpart used for stability scores.
    type Signed: Clone + Ord + fmt::Debug + fmt::Display;

    fn to_signed(&self) -> Self::Signed;

    /// `self − other`, which may be negative.
    fn signed_sub(&self, other: &Self) -> Self::Signed;

    fn scaled(&self, factor: u64) -> Self;
}

impl DepthCost for u64 {
    type Signed = i64;

    fn to_signed(&self) -> i64 {
        i64::try_from(*self).expect("depth fits in i64")
    }

    fn signed_sub(&self, other: &u64) -> i64 {
        self.to_signed() - other.to_signed()
    }

    fn scaled(&self, factor: u64) -> u64 {
        self * factor
    }
}

impl DepthCost for BigUint {
    type Signed = BigInt;

    fn to_signed(&self) -> BigInt {
        BigInt::from(self.clone())
    }

    fn signed_sub(&self, other: &BigUint) -> BigInt {
        BigInt::from(self.clone()) - BigInt::from(other.clone())
    }

    fn scaled(&self, factor: u64) -> BigUint {
        self * factor
    }
}

/// Selects the per-block cost of a depth function and reads the cached
/// depth from a tree node.
pub trait DepthMeasure {
    type Cost: DepthCost;

    fn cost(node: &TreeNode) -> Self::Cost;

    fn depth(node: &TreeNode) -> Self::Cost;
}

/// Unit cost per block.
pub struct ByConfirmations;

/// Cost equal to the block's work.
pub struct ByWork;

impl DepthMeasure for ByConfirmations {
    type Cost = u64;

    fn cost(_: &TreeNode) -> u64 {
        1
    }

    fn depth(node: &TreeNode) -> u64 {
        node.conf_depth()
    }
}

impl DepthMeasure for ByWork {
    type Cost = Work;

    fn cost(node: &TreeNode) -> Work {
        node.work().clone()
    }

    fn depth(node: &TreeNode) -> Work {
        node.work_depth().clone()
    }
}

pub fn depth_of<M: DepthMeasure>(tree: &BlockTree, hash: &Hash256) -> Result<M::Cost, TreeError> {
    Ok(M::depth(tree.node(hash)?))
}

/// Largest depth among the other blocks at the same height.
pub fn max_rival_depth<M: DepthMeasure>(tree: &BlockTree, hash: &Hash256) -> Result<Option<M::Cost>, TreeError> {
    let height = tree.node(hash)?.height();
    Ok(tree
        .at_height(height)
        .filter(|h| *h != hash)
        .map(|h| M::depth(tree.node(h).expect("indexed node present")))
        .max())
}

pub fn stability_of<M: DepthMeasure>(tree: &BlockTree, hash: &Hash256) -> Result<<M::Cost as DepthCost>::Signed, TreeError> {
    let own = depth_of::<M>(tree, hash)?;
    let score = match max_rival_depth::<M>(tree, hash)? {
        Some(rival) => own.to_signed().min(own.signed_sub(&rival)),
        None => own.to_signed(),
    };
    Ok(score)
}

/// Both stability conditions against an absolute `threshold` in cost units.
pub fn is_stable<M: DepthMeasure>(tree: &BlockTree, hash: &Hash256, threshold: &M::Cost) -> Result<bool, TreeError> {
    let own = depth_of::<M>(tree, hash)?;
    if own < *threshold {
        return Ok(false);
    }
    Ok(match max_rival_depth::<M>(tree, hash)? {
        Some(rival) => own >= rival + threshold.clone(),
        None => true,
    })
}

/// Only the first condition: `d(b) ≥ threshold`.
pub fn has_depth<M: DepthMeasure>(tree: &BlockTree, hash: &Hash256, threshold: &M::Cost) -> Result<bool, TreeError> {
    Ok(depth_of::<M>(tree, hash)? >= *threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DepthKind {
    Confirmation,
    Work,
}

impl std::str::FromStr for DepthKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "confirmation" | "confirmations" | "conf" => Ok(DepthKind::Confirmation),
            "work" | "difficulty" => Ok(DepthKind::Work),
            _ => Err(format!("unknown depth kind `{s}` (expected confirmation or work)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DepthValue {
    Confirmations(u64),
    Work(Work),
}

impl fmt::Display for DepthValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DepthValue::Confirmations(c) => write!(f, "{c}"),
            DepthValue::Work(w) => write!(f, "{w}"),
        }
    }
}

/// A stability score. Work scores are kept as the exact ratio
/// `delta / reference`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StabilityScore {
    Confirmations(i64),
    Work { delta: BigInt, reference: Work },
}

impl StabilityScore {
    /// Whether the score is at least `delta` (cross-multiplied for work).
    pub fn at_least(&self, delta: u64) -> bool {
        match self {
            StabilityScore::Confirmations(c) => *c >= delta as i64,
            StabilityScore::Work { delta: d, reference } => *d >= BigInt::from(reference * delta),
        }
    }

    /// Integer part of the score, rounding towards negative infinity.
    pub fn floor(&self) -> BigInt {
        match self {
            StabilityScore::Confirmations(c) => BigInt::from(*c),
            StabilityScore::Work { delta, reference } => {
                num_integer::Integer::div_floor(delta, &BigInt::from(reference.clone()))
            }
        }
    }
}

impl fmt::Display for StabilityScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StabilityScore::Confirmations(c) => write!(f, "{c}"),
            StabilityScore::Work { delta, reference } if reference == &Work::from(1u32) => write!(f, "{delta}"),
            StabilityScore::Work { delta, reference } => write!(f, "{delta}/{reference}"),
        }
    }
}

pub fn depth(tree: &BlockTree, node: &Hash256, kind: DepthKind) -> Result<DepthValue, TreeError> {
    Ok(match kind {
        DepthKind::Confirmation => DepthValue::Confirmations(depth_of::<ByConfirmations>(tree, node)?),
        DepthKind::Work => DepthValue::Work(depth_of::<ByWork>(tree, node)?),
    })
}

/// Stability in raw units: blocks for confirmations, work units for work.
pub fn stability(tree: &BlockTree, node: &Hash256, kind: DepthKind) -> Result<StabilityScore, TreeError> {
    match kind {
        DepthKind::Confirmation => Ok(StabilityScore::Confirmations(stability_of::<ByConfirmations>(tree, node)?)),
        DepthKind::Work => difficulty_stability(tree, node, &Work::from(1u32)),
    }
}

/// Work-based stability expressed relative to the work of a reference block.
pub fn difficulty_stability(tree: &BlockTree, node: &Hash256, reference: &Work) -> Result<StabilityScore, TreeError> {
    Ok(StabilityScore::Work {
        delta: stability_of::<ByWork>(tree, node)?,
        reference: reference.clone(),
    })
}

pub fn is_delta_stable(tree: &BlockTree, node: &Hash256, delta: u64, kind: DepthKind) -> Result<bool, TreeError> {
    match kind {
        DepthKind::Confirmation => is_stable::<ByConfirmations>(tree, node, &delta),
        DepthKind::Work => is_stable::<ByWork>(tree, node, &Work::from(delta)),
    }
}

/// Whether `node` is δ-stable under work depth with thresholds measured in
/// multiples of `reference`, i.e. `d_w(b) / w(b*) ≥ δ` for both conditions.
pub fn is_difficulty_stable(tree: &BlockTree, node: &Hash256, delta: u64, reference: &Work) -> Result<bool, TreeError> {
    is_stable::<ByWork>(tree, node, &reference.scaled(delta))
}

/// Confirmation count of a block: its confirmation-based stability.
pub fn confirmations(tree: &BlockTree, node: &Hash256) -> Result<i64, TreeError> {
    stability_of::<ByConfirmations>(tree, node)
}

/// The child with the greatest work depth, ties going to the smallest hash.
pub fn best_child(tree: &BlockTree, hash: &Hash256) -> Option<Hash256> {
    let node = tree.get(hash)?;
    let mut best: Option<&TreeNode> = None;
    for child in node.children() {
        let c = tree.get(child).expect("child present");
        // children are sorted ascending, so only a strictly greater depth wins
        if best.is_none_or(|b| c.work_depth().cmp(b.work_depth()) == Ordering::Greater) {
            best = Some(c);
        }
    }
    best.map(TreeNode::hash)
}

/// Heaviest path from `start` to a leaf, `start` included.
pub fn chain_from(tree: &BlockTree, start: Hash256) -> Vec<Hash256> {
    let mut chain = vec![start];
    let mut cursor = start;
    while let Some(next) = best_child(tree, &cursor) {
        chain.push(next);
        cursor = next;
    }
    chain
}

/// The current chain: root to tip following maximal work depth.
pub fn current_chain(tree: &BlockTree) -> Vec<Hash256> {
    chain_from(tree, tree.root())
}
