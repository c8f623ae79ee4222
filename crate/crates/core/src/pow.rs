//! Compact difficulty targets, proof-of-work checks and block work.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::block::BlockHeader;
use crate::hash::Hash256;
use crate::Work;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CompactError {
    #[error("compact target {0:#010x} has the sign bit set")]
    Negative(u32),
    #[error("compact target {0:#010x} overflows 256 bits")]
    Overflow(u32),
    #[error("compact target {0:#010x} expands to zero")]
    Zero(u32),
}

/// How much work a block contributes to depth computations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WorkPolicy {
    /// Expected work implied by the header's target: `2^256 / (target + 1)`.
    #[default]
    Target,
    /// Work implied by the hash actually achieved: `2^256 / (hash + 1)`.
    Hash,
}

/// Expands compact `bits` to the full 256-bit target.
pub fn expand_compact(bits: u32) -> Result<BigUint, CompactError> {
    let size = bits >> 24;
    let mut word = bits & 0x007f_ffff;
    if word != 0 && bits & 0x0080_0000 != 0 {
        return Err(CompactError::Negative(bits));
    }
    if word != 0 && (size > 34 || (word > 0xff && size > 33) || (word > 0xffff && size > 32)) {
        return Err(CompactError::Overflow(bits));
    }
    let target = if size <= 3 {
        word >>= 8 * (3 - size);
        BigUint::from(word)
    } else {
        BigUint::from(word) << (8 * (size - 3))
    };
    if target.is_zero() {
        return Err(CompactError::Zero(bits));
    }
    Ok(target)
}

/// Compresses a target to compact form, truncating low-order bits the same
/// way `bitcoind` does.
pub fn compress_target(target: &BigUint) -> u32 {
    let mut size = (target.bits() as u32).div_ceil(8);
    let mut compact: u32 = if size <= 3 {
        let low = target.iter_u64_digits().next().unwrap_or(0);
        (low << (8 * (3 - size))) as u32
    } else {
        let shifted: BigUint = target >> (8 * (size - 3));
        shifted.iter_u64_digits().next().unwrap_or(0) as u32
    };
    if compact & 0x0080_0000 != 0 {
        compact >>= 8;
        size += 1;
    }
    compact | (size << 24)
}

/// The header hash read as a little-endian 256-bit integer.
pub fn hash_to_uint(hash: &Hash256) -> BigUint {
    BigUint::from_bytes_le(hash.as_bytes())
}

fn two_pow_256() -> BigUint {
    BigUint::one() << 256u32
}

pub fn work_from_target(target: &BigUint) -> Work {
    two_pow_256() / (target + 1u32)
}

pub fn work_from_hash(hash: &Hash256) -> Work {
    two_pow_256() / (hash_to_uint(hash) + 1u32)
}

/// Expected work for `bits` under the target policy.
pub fn work_of(bits: u32) -> Result<Work, CompactError> {
    Ok(work_from_target(&expand_compact(bits)?))
}

/// Work contributed by `header` under `policy`.
pub fn header_work(header: &BlockHeader, policy: WorkPolicy) -> Result<Work, CompactError> {
    match policy {
        WorkPolicy::Target => work_of(header.bits),
        WorkPolicy::Hash => {
            expand_compact(header.bits)?;
            Ok(work_from_hash(&header.hash()))
        }
    }
}

/// True when the header hash does not exceed the target encoded in its bits.
pub fn check_proof_of_work(header: &BlockHeader) -> Result<bool, CompactError> {
    let target = expand_compact(header.bits)?;
    Ok(hash_to_uint(&header.hash()) <= target)
}

/// Increments the nonce (and, on wrap-around, the time) until the header
/// satisfies its own target. Only practical for easy targets.
pub fn grind(header: &mut BlockHeader) -> Result<(), CompactError> {
    let target = expand_compact(header.bits)?;
    while hash_to_uint(&header.hash()) > target {
        header.nonce = header.nonce.wrapping_add(1);
        if header.nonce == 0 {
            header.time = header.time.wrapping_add(1);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expands_mainnet_limit() {
        let t = expand_compact(0x1d00ffff).unwrap();
        assert_eq!(t, BigUint::from(0xffffu32) << 208u32);
        assert_eq!(compress_target(&t), 0x1d00ffff);
    }

    #[test]
    fn compact_errors() {
        assert_eq!(expand_compact(0x04923456), Err(CompactError::Negative(0x04923456)));
        assert_eq!(expand_compact(0xff123456), Err(CompactError::Overflow(0xff123456)));
        assert_eq!(expand_compact(0x01003456), Err(CompactError::Zero(0x01003456)));
        assert_eq!(expand_compact(0), Err(CompactError::Zero(0)));
    }

    #[test]
    fn small_sizes() {
        assert_eq!(expand_compact(0x01120000).unwrap(), BigUint::from(0x12u32));
        assert_eq!(expand_compact(0x02123400).unwrap(), BigUint::from(0x1234u32));
        assert_eq!(compress_target(&BigUint::from(0x12u32)), 0x01120000);
        assert_eq!(compress_target(&BigUint::from(0x80u32)), 0x02008000);
    }

    #[test]
    fn max_target_has_unit_work() {
        let max = two_pow_256() - 1u32;
        assert_eq!(work_from_target(&max), BigUint::one());
    }

    #[test]
    fn regtest_work_is_two() {
        assert_eq!(work_of(0x207fffff).unwrap(), BigUint::from(2u32));
    }

    #[test]
    fn mainnet_genesis_work() {
        // 2^256 / (0xffff * 2^208 + 1) = 0x100010001
        assert_eq!(work_of(0x1d00ffff).unwrap(), BigUint::from(0x1_0001_0001u64));
    }
}
