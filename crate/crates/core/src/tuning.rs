//! Choice of `(c, s)` for a counter array from its value histogram.

use crate::vale::{extension_bits, ValeConfig, HANDLE_BITS, TAILS_ENTRY_BITS};

/// Space used by a counter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Footprint {
    /// Chunk bits plus live tails slab bits.
    pub allocated_bits: u64,
    /// Stub bits plus the encoded high part of every counter.
    pub content_bits: u64,
    pub tails_slabs: usize,
    pub config: ValeConfig,
}

impl Footprint {
    pub fn ratio(&self) -> f64 {
        if self.content_bits == 0 {
            f64::INFINITY
        } else {
            self.allocated_bits as f64 / self.content_bits as f64
        }
    }
}

/// Counter count per bit length `0..=64`.
pub fn bit_length_histogram(values: &[i64]) -> [u64; 65] {
    let mut hist = [0u64; 65];
    for &v in values {
        hist[(64 - v.unsigned_abs().leading_zeros()) as usize] += 1;
    }
    hist
}

/// Expected allocation of `w` counters under `(c, s)` with per-counter
/// extension mean `mu` and variance `var`.
pub fn expected_bits(w: u64, chunk_bits: usize, c: usize, pool_bits: usize, mu: f64, var: f64) -> f64 {
    let chunks = w.div_ceil(c as u64) as f64;
    let budget = pool_bits as f64 - c as f64 * mu;
    let tails_share = if budget <= 0.0 {
        1.0
    } else {
        (c as f64 * var / (budget * budget)).min(1.0)
    };
    let slab_bits = (c * TAILS_ENTRY_BITS + 64) as f64;
    chunks * chunk_bits as f64 + tails_share * chunks * slab_bits
}

/// The `(c, s)` minimising expected allocation. Each bit-length bucket is
/// represented by its largest value. Ties keep the first candidate in
/// `(s, c)` ascending order.
pub fn choose(values: &[i64], chunk_bits: usize, signed: bool) -> ValeConfig {
    let hist = bit_length_histogram(values);
    let w = values.len().max(1) as u64;
    let avg_len = hist.iter().enumerate().map(|(b, &n)| b as f64 * n as f64).sum::<f64>() / w as f64;
    // every value must stay representable with 32-bit tails
    let max_len = hist.iter().rposition(|&n| n > 0).unwrap_or(0);
    let s_min = max_len.saturating_sub(TAILS_ENTRY_BITS).max(1);
    let s_max = ((avg_len + 2.0).floor() as usize).clamp(s_min, 32);
    let mut best: Option<(f64, ValeConfig)> = None;
    for s in s_min..=s_max {
        let ext: Vec<(f64, f64)> = hist
            .iter()
            .enumerate()
            .filter(|&(_, &n)| n > 0)
            .map(|(b, &n)| {
                let worst = if b == 64 { u64::MAX } else { (1u64 << b) - 1 };
                (n as f64, extension_bits(worst >> s) as f64)
            })
            .collect();
        let mu = ext.iter().map(|&(n, e)| n * e).sum::<f64>() / w as f64;
        let var = ext.iter().map(|&(n, e)| n * (e - mu) * (e - mu)).sum::<f64>() / w as f64;
        let per = 1 + s + signed as usize;
        let c_max = chunk_bits.saturating_sub(1 + HANDLE_BITS) / per;
        for c in 1..=c_max {
            let pool_bits = chunk_bits - c * per - 1;
            let bits = expected_bits(w, chunk_bits, c, pool_bits, mu, var);
            if best.is_none_or(|(b, _)| bits < b) {
                best = Some((bits, ValeConfig { chunk_bits, counters_per_chunk: c, stub_bits: s, signed }));
            }
        }
    }
    best.map(|(_, c)| c).unwrap_or_default()
}
