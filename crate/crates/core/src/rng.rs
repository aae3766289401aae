//! Reproducible RNG streams keyed by (master seed, replication, stream id).
//!
//! Each (master, replication, stream) triple maps to an independent ChaCha12
//! stream, so parallel replications draw identical values regardless of
//! scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream ids used by the simulation generator.
pub mod stream {
    pub const PATTERN_NOISE: u64 = 0;
    pub const TRAIN_CLASS_BASE: u64 = 1;
    pub const TEST_CLASS_BASE: u64 = 1001;
}

/// SplitMix64 finalizer; decorrelates nearby keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, replication: u64, stream: u64) -> u64 {
    mix(mix(mix(master) ^ replication.wrapping_mul(0xa0761d6478bd642f)) ^ stream)
}

pub fn derive_rng(master: u64, replication: u64, stream: u64) -> ChaCha12Rng {
    let s = derive_seed(master, replication, stream);
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&s.to_le_bytes());
    key[8..16].copy_from_slice(&mix(s).to_le_bytes());
    key[16..24].copy_from_slice(&master.to_le_bytes());
    key[24..].copy_from_slice(&replication.to_le_bytes());
    ChaCha12Rng::from_seed(key)
}
