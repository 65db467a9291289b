//! Bit-sequence primitives.
//!
//! Every span is addressed by bit position: position `p` lives in word
//! `p / 64` at bit `p % 64`, so a span read as an unsigned integer gives
//! position `p` the weight `2^p`.
//!
//! Two backends are provided. [`Backend::Table`] walks bytes through two
//! 256-entry lookup tables and is the correctness reference;
//! [`Backend::Native`] uses the CPU's population-count and (when compiled
//! with BMI2) bit-deposit instructions.

use crate::error::{Error, Result};

/// Mask selecting the second bit of every 2-bit fragment.
const ODD_POSITIONS: u64 = 0xAAAA_AAAA_AAAA_AAAA;

/// Number of set bits in each byte value.
static POPCOUNT8: [u8; 256] = build_popcount_table();

/// `SELECT8[b][k]` is the position of the set bit of `b` with `k` set bits
/// below it, or 8 when `b` has fewer than `k + 1` set bits.
static SELECT8: [[u8; 8]; 256] = build_select_table();

const fn build_popcount_table() -> [u8; 256] {
    let mut table = [0u8; 256];
    let mut b = 0;
    while b < 256 {
        let mut x = b;
        let mut n = 0;
        while x != 0 {
            n += x & 1;
            x >>= 1;
        }
        table[b] = n as u8;
        b += 1;
    }
    table
}

const fn build_select_table() -> [[u8; 8]; 256] {
    let mut table = [[8u8; 8]; 256];
    let mut b = 0;
    while b < 256 {
        let mut seen = 0;
        let mut p = 0;
        while p < 8 {
            if (b >> p) & 1 == 1 {
                table[b][seen] = p as u8;
                seen += 1;
            }
            p += 1;
        }
        b += 1;
    }
    table
}

/// Rank/select implementation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    /// Byte-wise lookup tables; portable on every target.
    Table,
    /// Hardware population count and bit deposit where available.
    #[default]
    Native,
}

/// A read-only view of `len` bits stored in little-endian words.
#[derive(Debug, Clone, Copy)]
pub struct BitSpan<'a> {
    words: &'a [u64],
    len: usize,
}

impl<'a> BitSpan<'a> {
    /// Panics if `len` exceeds the bits available in `words`.
    pub fn new(words: &'a [u64], len: usize) -> Self {
        assert!(len <= words.len() * 64, "span length exceeds backing words");
        Self { words, len }
    }

    pub fn from_words(words: &'a [u64]) -> Self {
        Self::new(words, words.len() * 64)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &'a [u64] {
        self.words
    }

    pub fn get(&self, p: usize) -> bool {
        debug_assert!(p < self.len);
        (self.words[p / 64] >> (p % 64)) & 1 == 1
    }

    /// Word `k` with positions past the span's end cleared.
    #[inline]
    fn word(&self, k: usize) -> u64 {
        let w = self.words[k];
        let end = self.len - k * 64;
        if end >= 64 {
            w
        } else {
            w & ((1u64 << end) - 1)
        }
    }

    fn word_count(&self) -> usize {
        self.len.div_ceil(64)
    }

    /// Number of set bits at positions strictly below `i`.
    pub fn rank(&self, i: usize) -> Result<usize> {
        self.rank_with(i, Backend::Native)
    }

    pub fn rank_with(&self, i: usize, backend: Backend) -> Result<usize> {
        if i > self.len {
            return Err(Error::OutOfRange { pos: i as u64, len: self.len as u64 });
        }
        Ok(rank_words(self.words, i, backend))
    }

    /// Position of the set bit that has exactly `m` set bits before it.
    pub fn select(&self, m: usize) -> Result<usize> {
        self.select_with(m, Backend::Native)
    }

    pub fn select_with(&self, m: usize, backend: Backend) -> Result<usize> {
        let mut remaining = m;
        for k in 0..self.word_count() {
            let w = self.word(k);
            let ones = popcount(w, backend) as usize;
            if remaining < ones {
                return Ok(k * 64 + select_in_word(w, remaining as u32, backend) as usize);
            }
            remaining -= ones;
        }
        Err(Error::NotFound { m: m as u64, ones: (m - remaining) as u64 })
    }

    pub fn count_ones(&self) -> usize {
        (0..self.word_count()).map(|k| self.word(k).count_ones() as usize).sum()
    }
}

#[inline]
fn popcount(w: u64, backend: Backend) -> u32 {
    match backend {
        Backend::Native => w.count_ones(),
        Backend::Table => w.to_le_bytes().iter().map(|&b| POPCOUNT8[b as usize] as u32).sum(),
    }
}

/// Rank over raw words without a range check.
#[inline]
pub(crate) fn rank_words(words: &[u64], i: usize, backend: Backend) -> usize {
    let full = i / 64;
    let mut n: usize = words[..full].iter().map(|&w| popcount(w, backend) as usize).sum();
    let rem = i % 64;
    if rem != 0 {
        n += popcount(words[full] & ((1u64 << rem) - 1), backend) as usize;
    }
    n
}

/// Position of the set bit of `w` with `m` set bits below it. `w` must hold
/// at least `m + 1` set bits.
#[inline]
pub fn select_in_word(w: u64, m: u32, backend: Backend) -> u32 {
    debug_assert!(w.count_ones() > m);
    match backend {
        Backend::Table => {
            let mut remaining = m;
            for (k, &b) in w.to_le_bytes().iter().enumerate() {
                let ones = POPCOUNT8[b as usize] as u32;
                if remaining < ones {
                    return k as u32 * 8 + SELECT8[b as usize][remaining as usize] as u32;
                }
                remaining -= ones;
            }
            unreachable!("word has fewer set bits than requested")
        }
        Backend::Native => select_in_word_native(w, m),
    }
}

#[cfg(all(target_arch = "x86_64", target_feature = "bmi2"))]
#[inline]
fn select_in_word_native(w: u64, m: u32) -> u32 {
    // SAFETY: guarded by the bmi2 target feature.
    unsafe { core::arch::x86_64::_pdep_u64(1u64 << m, w).trailing_zeros() }
}

#[cfg(not(all(target_arch = "x86_64", target_feature = "bmi2")))]
#[inline]
fn select_in_word_native(mut w: u64, m: u32) -> u32 {
    for _ in 0..m {
        w &= w - 1;
    }
    w.trailing_zeros()
}

/// Marks the second bit of every `11` fragment of a 2-bit-fragment pool.
pub fn delimiters_bitmap(pool: BitSpan<'_>) -> Vec<u64> {
    let mut out = vec![0u64; pool.word_count()];
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = delimiters_word(pool.word(k));
    }
    out
}

/// Fragments never straddle words because 64 is even, so each word is
/// transformed independently.
#[inline]
pub(crate) fn delimiters_word(w: u64) -> u64 {
    w & (w << 1) & ODD_POSITIONS
}

/// Division by a fixed divisor through a precomputed fixed-point reciprocal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FastDiv {
    divisor: u64,
    max_dividend: u64,
    shift: u32,
    reciprocal: u128,
}

impl FastDiv {
    /// Prepares division by `divisor` for every dividend below `max_dividend`.
    pub fn new(divisor: u64, max_dividend: u64) -> Result<Self> {
        if divisor == 0 {
            return Err(Error::InvalidConfig("divisor must be positive".into()));
        }
        let dividend_bits = ceil_log2(max_dividend.max(1));
        let divisor_bits = ceil_log2(divisor);
        if dividend_bits > 63 {
            return Err(Error::InvalidConfig("dividend range too large".into()));
        }
        let shift = dividend_bits + divisor_bits;
        let reciprocal = (1u128 << shift).div_ceil(divisor as u128);
        Ok(Self { divisor, max_dividend: max_dividend.max(1), shift, reciprocal })
    }

    pub fn divisor(&self) -> u64 {
        self.divisor
    }

    pub fn max_dividend(&self) -> u64 {
        self.max_dividend
    }

    pub fn div(&self, i: u64) -> Result<u64> {
        if i >= self.max_dividend {
            return Err(Error::OutOfRange { pos: i, len: self.max_dividend });
        }
        Ok(self.div_unchecked(i))
    }

    #[inline]
    pub fn div_unchecked(&self, i: u64) -> u64 {
        debug_assert!(i < self.max_dividend);
        ((i as u128 * self.reciprocal) >> self.shift) as u64
    }
}

/// Smallest `k` with `2^k >= x`; zero for `x <= 1`.
pub fn ceil_log2(x: u64) -> u32 {
    if x <= 1 {
        0
    } else {
        64 - (x - 1).leading_zeros()
    }
}

/// Decodes base-3 digits given least significant first.
pub fn horner_decode(digits: &[u8]) -> Result<u64> {
    let mut acc: u64 = 0;
    for &d in digits.iter().rev() {
        if d > 2 {
            return Err(Error::InvalidDigit(d));
        }
        if acc > (u64::MAX - 2) / 3 {
            return Err(Error::OutOfRange { pos: digits.len() as u64, len: 40 });
        }
        acc = horner_step(acc, d);
    }
    Ok(acc)
}

/// `acc * 3 + digit` with the multiplication done as shift-and-add.
#[inline]
pub(crate) fn horner_step(acc: u64, digit: u8) -> u64 {
    (acc << 1) + acc + digit as u64
}

/// Base-3 digits of `v`, least significant first; empty for zero.
pub fn encode_base3(mut v: u64) -> Vec<u8> {
    let mut digits = Vec::with_capacity(base3_len(v));
    while v != 0 {
        digits.push((v % 3) as u8);
        v /= 3;
    }
    digits
}

/// Number of base-3 digits of `v`; zero for zero.
pub fn base3_len(mut v: u64) -> usize {
    let mut n = 0;
    while v != 0 {
        v /= 3;
        n += 1;
    }
    n
}

/// Reads `len <= 64` bits starting at `pos`.
#[inline]
pub(crate) fn get_bits(words: &[u64], pos: usize, len: usize) -> u64 {
    debug_assert!(len <= 64);
    if len == 0 {
        return 0;
    }
    let k = pos / 64;
    let off = pos % 64;
    let mut v = words[k] >> off;
    if off + len > 64 {
        v |= words[k + 1] << (64 - off);
    }
    if len == 64 {
        v
    } else {
        v & ((1u64 << len) - 1)
    }
}

/// Writes the low `len <= 64` bits of `value` starting at `pos`.
#[inline]
pub(crate) fn set_bits(words: &mut [u64], pos: usize, len: usize, value: u64) {
    debug_assert!(len <= 64);
    if len == 0 {
        return;
    }
    let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
    let value = value & mask;
    let k = pos / 64;
    let off = pos % 64;
    words[k] = (words[k] & !(mask << off)) | (value << off);
    if off + len > 64 {
        let spill = off + len - 64;
        let hi_mask = (1u64 << spill) - 1;
        words[k + 1] = (words[k + 1] & !hi_mask) | (value >> (64 - off));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_rank(words: &[u64], i: usize) -> usize {
        (0..i).filter(|&p| (words[p / 64] >> (p % 64)) & 1 == 1).count()
    }

    fn naive_select(words: &[u64], len: usize, m: usize) -> Option<usize> {
        let mut seen = 0;
        for p in 0..len {
            if (words[p / 64] >> (p % 64)) & 1 == 1 {
                if seen == m {
                    return Some(p);
                }
                seen += 1;
            }
        }
        None
    }

    fn from_positions(len: usize, set: &[usize]) -> Vec<u64> {
        let mut words = vec![0u64; len.div_ceil(64)];
        for &p in set {
            words[p / 64] |= 1 << (p % 64);
        }
        words
    }

    #[test]
    fn rank_of_overflows_example() {
        // positions 0..3 = 0,1,0,1
        let words = from_positions(4, &[1, 3]);
        let span = BitSpan::new(&words, 4);
        assert_eq!(span.rank(3).unwrap(), 1);
        assert_eq!(span.rank(0).unwrap(), 0);
        assert!(matches!(span.rank(5), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn select_of_delimiters_example() {
        let words = from_positions(12, &[5, 9]);
        let span = BitSpan::new(&words, 12);
        assert_eq!(span.select(1).unwrap(), 9);
        assert_eq!(span.select(0).unwrap(), 5);
        assert!(matches!(span.select(2), Err(Error::NotFound { m: 2, ones: 2 })));
    }

    #[test]
    fn select_single_bit() {
        for p in [0usize, 17, 63, 64, 200] {
            let words = from_positions(256, &[p]);
            let span = BitSpan::new(&words, 256);
            assert_eq!(span.select(0).unwrap(), p);
            assert_eq!(span.select_with(0, Backend::Table).unwrap(), p);
        }
    }

    #[test]
    fn select_ignores_bits_past_length() {
        let words = [u64::MAX];
        let span = BitSpan::new(&words, 10);
        assert_eq!(span.count_ones(), 10);
        assert!(span.select(10).is_err());
    }

    #[test]
    fn rank_random_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let words: Vec<u64> = (0..4).map(|_| rng.gen()).collect();
            let span = BitSpan::new(&words, 256);
            for i in 0..=256 {
                let expect = naive_rank(&words, i);
                assert_eq!(span.rank_with(i, Backend::Native).unwrap(), expect);
                assert_eq!(span.rank_with(i, Backend::Table).unwrap(), expect);
            }
        }
    }

    #[test]
    fn select_random_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..50 {
            // vary density so sparse and dense words both show up
            let words: Vec<u64> = (0..8)
                .map(|_| match round % 3 {
                    0 => rng.gen::<u64>() & rng.gen::<u64>() & rng.gen::<u64>(),
                    1 => rng.gen(),
                    _ => rng.gen::<u64>() | rng.gen::<u64>(),
                })
                .collect();
            let span = BitSpan::new(&words, 512);
            let ones = span.count_ones();
            for m in 0..ones {
                let expect = naive_select(&words, 512, m).unwrap();
                assert_eq!(span.select_with(m, Backend::Native).unwrap(), expect);
                assert_eq!(span.select_with(m, Backend::Table).unwrap(), expect);
            }
            assert!(span.select(ones).is_err());
        }
    }

    #[test]
    fn delimiters_of_example_pool() {
        // fragments 01,10,11,01,11,10 rendered low position first
        let bits = [0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1, 0];
        let set: Vec<usize> = bits.iter().enumerate().filter(|(_, &b)| b == 1).map(|(p, _)| p).collect();
        let words = from_positions(64, &set);
        let delims = delimiters_bitmap(BitSpan::new(&words, 12));
        assert_eq!(delims, from_positions(64, &[5, 9]));
        assert!(delimiters_bitmap(BitSpan::new(&[0, 0], 128)).iter().all(|&w| w == 0));
    }

    #[test]
    fn fast_div_small_cases() {
        let fd = FastDiv::new(39, 1 << 10).unwrap();
        assert_eq!(fd.div(0).unwrap(), 0);
        assert_eq!(fd.div(130).unwrap(), 3);
        assert!(fd.div(1 << 10).is_err());
        assert!(FastDiv::new(0, 10).is_err());
    }

    #[test]
    fn fast_div_exhaustive_to_2_20() {
        for c in [1u64, 2, 3, 7, 39, 45, 64, 75, 81, 231] {
            let fd = FastDiv::new(c, 1 << 20).unwrap();
            for i in 0..(1u64 << 20) {
                assert_eq!(fd.div_unchecked(i), i / c, "i={i} c={c}");
            }
        }
    }

    #[test]
    fn fast_div_non_power_of_two_range() {
        for (c, w) in [(39u64, 1000u64), (64, 65), (81, 100_000), (3, 3)] {
            let fd = FastDiv::new(c, w).unwrap();
            for i in 0..w {
                assert_eq!(fd.div(i).unwrap(), i / c);
            }
        }
    }

    #[test]
    fn horner_examples() {
        assert_eq!(horner_decode(&[2, 1]).unwrap(), 5);
        assert_eq!(horner_decode(&[1]).unwrap(), 1);
        assert_eq!(horner_decode(&[2, 2, 1]).unwrap(), 17);
        assert_eq!(horner_decode(&[3]), Err(Error::InvalidDigit(3)));
        assert_eq!(encode_base3(5), vec![2, 1]);
        assert_eq!(encode_base3(0), Vec::<u8>::new());
    }

    #[test]
    fn horner_dense_roundtrip() {
        for v in 1..(1u64 << 12) {
            assert_eq!(horner_decode(&encode_base3(v)).unwrap(), v);
            assert_eq!(base3_len(v), encode_base3(v).len());
        }
    }

    #[test]
    fn bit_field_roundtrip_across_words() {
        let mut words = [0u64; 3];
        set_bits(&mut words, 60, 10, 0b10_1101_0111);
        assert_eq!(get_bits(&words, 60, 10), 0b10_1101_0111);
        assert_eq!(words[0] >> 60, 0b0111);
        assert_eq!(words[1], 0b10_1101);
        set_bits(&mut words, 64, 64, u64::MAX);
        assert_eq!(get_bits(&words, 60, 4), 0b0111);
        assert_eq!(get_bits(&words, 64, 64), u64::MAX);
        set_bits(&mut words, 62, 4, 0);
        assert_eq!(get_bits(&words, 60, 8), 0b1100_0011);
    }

    proptest! {
        #[test]
        fn rank_select_duality(words in proptest::collection::vec(any::<u64>(), 1..4)) {
            let span = BitSpan::from_words(&words);
            for p in 0..span.len() {
                if span.get(p) {
                    let r = span.rank(p).unwrap();
                    prop_assert_eq!(span.select(r).unwrap(), p);
                }
            }
            for m in 0..span.count_ones() {
                prop_assert_eq!(span.rank(span.select(m).unwrap()).unwrap(), m);
            }
        }

        #[test]
        fn horner_roundtrip(v in 1u64..(1u64 << 32)) {
            prop_assert_eq!(horner_decode(&encode_base3(v)).unwrap(), v);
        }

        #[test]
        fn one_delimiter_per_extension(values in proptest::collection::vec(1u64..100_000, 0..12)) {
            let mut words = vec![0u64; 16];
            let mut pos = 0;
            let mut ends = Vec::new();
            for v in &values {
                for d in encode_base3(*v) {
                    set_bits(&mut words, pos, 2, d as u64);
                    pos += 2;
                }
                set_bits(&mut words, pos, 2, 3);
                ends.push(pos + 1);
                pos += 2;
            }
            let delims = delimiters_bitmap(BitSpan::new(&words, 1024));
            let span = BitSpan::new(&delims, 1024);
            prop_assert_eq!(span.count_ones(), values.len());
            for (m, end) in ends.iter().enumerate() {
                prop_assert_eq!(span.select(m).unwrap(), *end);
            }
        }
    }
}
