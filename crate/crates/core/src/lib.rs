//! Bitcoin chain tracking for a replicated state machine.
//!
//! The crate has two protocol endpoints. The [`adapter`] is an SPV-like
//! node that keeps a header tree of everything its peers announce, fetches
//! blocks and answers successor requests. The [`canister`] is the
//! deterministic state machine: it holds the UTXO set up to a stable
//! anchor, keeps the unstable blocks above it, advances the anchor once a
//! block is sufficiently buried, and serves `get_utxos`, `get_balance` and
//! `send_transaction`.
//!
//! Depth and stability computations in [`stability`] are generic over the
//! depth scalar; [`Confirmations`] and [`Work`] are the two instantiations.

pub mod adapter;
pub mod address;
pub mod block;
pub mod canister;
pub mod encode;
pub mod hash;
pub mod mining;
pub mod network;
pub mod pow;
pub mod stability;
pub mod tree;
pub mod validation;

pub use address::Address;
pub use block::{Block, BlockHeader, OutPoint, Transaction, TxIn, TxOut};
pub use encode::{Decodable, DecodeError, Encodable};
pub use hash::{sha256d, Hash256};
pub use network::NetworkKind;
pub use pow::WorkPolicy;
pub use stability::{DepthKind, StabilityScore};
pub use tree::BlockTree;

/// Accumulated hash work; a 256-bit quantity at desk scale.
pub type Work = num_bigint::BigUint;

/// Confirmation depth: one unit per block.
pub type Confirmations = u64;

/// Signed stability score under confirmation depth.
pub type ConfirmationScore = i64;

/// Signed stability score under work depth.
pub type WorkScore = num_bigint::BigInt;

/// Block height.
pub type Height = u32;

/// Amount in satoshi.
pub type Satoshi = u64;
