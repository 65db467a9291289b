//! Seeded key hashing split into independent 64-bit lanes.

use xxhash_rust::xxh3::{xxh3_128_with_seed, xxh3_64_with_seed};

/// Most arrays a sketch may use.
pub const MAX_ARRAYS: usize = 4;

const LANE_SEED_B: u64 = 0x9E37_79B9_7F4A_7C15;
const LANE_SEED_SIGN: u64 = 0xC2B2_AE3D_27D4_EB4F;
const AMS_SEED: u64 = 0x1656_67B1_9E37_79F9;

/// One key's hash: up to four index lanes plus a sign lane, 320 bits in all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Splice {
    pub lanes: [u64; MAX_ARRAYS],
    pub sign: u64,
}

impl Splice {
    /// Direction of the key in array `j`.
    #[inline]
    pub fn direction(&self, j: usize) -> i64 {
        if (self.sign >> j) & 1 == 1 {
            1
        } else {
            -1
        }
    }
}

/// Hashes `key` under `seed` into `d` index lanes and a sign lane. Lanes
/// past `d` are left zero.
pub fn splice_hash(key: &[u8], seed: u64, d: usize) -> Splice {
    assert!(d <= MAX_ARRAYS, "at most {MAX_ARRAYS} arrays, got {d}");
    let mut lanes = [0u64; MAX_ARRAYS];
    let a = xxh3_128_with_seed(key, seed);
    lanes[0] = a as u64;
    lanes[1] = (a >> 64) as u64;
    if d > 2 {
        let b = xxh3_128_with_seed(key, seed ^ LANE_SEED_B);
        lanes[2] = b as u64;
        lanes[3] = (b >> 64) as u64;
    }
    for lane in lanes.iter_mut().skip(d) {
        *lane = 0;
    }
    Splice { lanes, sign: xxh3_64_with_seed(key, seed ^ LANE_SEED_SIGN) }
}

/// Position of a hashed key in an array of `w` counters. Doubling `w`
/// maps `h` either to the same index or to that index plus `w`.
#[inline]
pub fn counter_index(h: u64, w: u64) -> u64 {
    h % w
}

/// 64 independent signs for a key, one per bit.
#[inline]
pub fn ams_signs(key: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(key, seed ^ AMS_SEED)
}
