//! Variable-length counter arrays.
//!
//! Counters are packed into fixed-size chunks. Each chunk holds, from bit
//! position 0 upward:
//!
//! ```text
//! [ overflows bitmap: c bits ][ stubs: c * (s + signed) bits ][ mode: 1 bit ][ pool ]
//! ```
//!
//! A stub keeps the `s` low magnitude bits of its counter (plus a sign bit
//! at the stub's top position for signed arrays). Counters whose magnitude
//! does not fit set their overflows bit and keep the high part
//! `magnitude >> s` either as an extension in the pool (mode 0) or in an
//! external 32-bit tails slab referenced by a 48-bit registry handle stored
//! at the start of the pool (mode 1).
//!
//! Extensions are sequences of 2-bit fragments holding base-3 digits, least
//! significant first, terminated by the delimiter fragment `11`. With the
//! low bit of a fragment at the lower position, the fragment read as an
//! integer equals its digit (`00`=0, `10`=1, `01`=2 in position order) and
//! the delimiter reads as 3.

use crate::bits::{self, Backend, FastDiv};
use crate::error::{Error, Result};

pub use crate::tuning::Footprint;

/// Width of a tails entry.
pub const TAILS_ENTRY_BITS: usize = 32;
/// Width of a tails handle kept in a mode-1 pool.
pub const HANDLE_BITS: usize = 48;
/// Largest supported chunk.
pub const MAX_CHUNK_BITS: usize = 2048;

const MAX_POOL_WORDS: usize = MAX_CHUNK_BITS / 64;
const DELIMITER: u64 = 3;
/// Fragments `(1)_3, delimiter` encoding a fresh high part of one.
const UNIT_EXTENSION: u64 = 1 | (DELIMITER << 2);

/// Tuning of a counter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValeConfig {
    pub chunk_bits: usize,
    pub counters_per_chunk: usize,
    pub stub_bits: usize,
    pub signed: bool,
}

impl Default for ValeConfig {
    fn default() -> Self {
        Self { chunk_bits: 512, counters_per_chunk: 64, stub_bits: 6, signed: false }
    }
}

impl ValeConfig {
    pub fn new(chunk_bits: usize, counters_per_chunk: usize, stub_bits: usize, signed: bool) -> Result<Self> {
        let config = Self { chunk_bits, counters_per_chunk, stub_bits, signed };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.chunk_bits % 64 != 0 || !(128..=MAX_CHUNK_BITS).contains(&self.chunk_bits) {
            return Err(Error::InvalidConfig(format!(
                "chunk size {} must be a multiple of 64 in [128, {MAX_CHUNK_BITS}]",
                self.chunk_bits
            )));
        }
        if !(1..=32).contains(&self.stub_bits) {
            return Err(Error::InvalidConfig(format!("stub length {} outside [1, 32]", self.stub_bits)));
        }
        if self.counters_per_chunk == 0 {
            return Err(Error::InvalidConfig("a chunk needs at least one counter".into()));
        }
        let fixed = self.counters_per_chunk * (1 + self.stub_width()) + 1 + HANDLE_BITS;
        if fixed > self.chunk_bits {
            return Err(Error::InvalidConfig(format!(
                "{} counters with {}-bit stubs leave no room for a tails handle in {} bits",
                self.counters_per_chunk,
                self.stub_width(),
                self.chunk_bits
            )));
        }
        Ok(())
    }

    /// Stub width including the sign bit.
    pub fn stub_width(&self) -> usize {
        self.stub_bits + self.signed as usize
    }

    pub fn mode_position(&self) -> usize {
        self.counters_per_chunk * (1 + self.stub_width())
    }

    pub fn pool_start(&self) -> usize {
        self.mode_position() + 1
    }

    pub fn pool_bits(&self) -> usize {
        self.chunk_bits - self.pool_start()
    }

    /// Largest counter count per chunk for the given stub geometry.
    pub fn max_counters(chunk_bits: usize, stub_bits: usize, signed: bool) -> usize {
        let per = 1 + stub_bits + signed as usize;
        chunk_bits.saturating_sub(1 + HANDLE_BITS) / per
    }

    /// Largest representable magnitude: `2^(s + 32) - 1`, capped to fit `i64`.
    pub fn max_magnitude(&self) -> u64 {
        let bits = self.stub_bits + TAILS_ENTRY_BITS;
        if bits >= 63 {
            i64::MAX as u64
        } else {
            (1u64 << bits) - 1
        }
    }
}

/// Growable store of tails slabs addressed by handle.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TailsRegistry {
    slabs: Vec<Vec<u32>>,
    free: Vec<u64>,
}

impl TailsRegistry {
    const MAX_HANDLES: u64 = 1 << HANDLE_BITS;

    fn alloc(&mut self, entries: usize) -> Result<u64> {
        if let Some(h) = self.free.pop() {
            let slab = &mut self.slabs[h as usize];
            slab.clear();
            slab.resize(entries, 0);
            return Ok(h);
        }
        let h = self.slabs.len() as u64;
        if h >= Self::MAX_HANDLES {
            return Err(Error::Capacity("tails handle space exhausted".into()));
        }
        self.slabs.push(vec![0; entries]);
        Ok(h)
    }

    pub fn get(&self, handle: u64) -> &[u32] {
        &self.slabs[handle as usize]
    }

    fn get_mut(&mut self, handle: u64) -> &mut [u32] {
        &mut self.slabs[handle as usize]
    }

    /// Slabs currently referenced by a chunk.
    pub fn live_slabs(&self) -> usize {
        self.slabs.len() - self.free.len()
    }
}

/// Bit offsets derived from a [`ValeConfig`].
#[derive(Debug, Clone)]
struct Layout {
    words_per_chunk: usize,
    stub_width: usize,
    magnitude_mask: u64,
    mode_pos: usize,
    pool_start: usize,
    pool_bits: usize,
    /// Per stub: word index, shift, and whether the field crosses a word.
    stub_words: Vec<u16>,
    stub_shifts: Vec<u8>,
    stub_straddles: Vec<bool>,
}

impl Layout {
    fn new(config: &ValeConfig) -> Self {
        let c = config.counters_per_chunk;
        let sw = config.stub_width();
        let mut stub_words = Vec::with_capacity(c);
        let mut stub_shifts = Vec::with_capacity(c);
        let mut stub_straddles = Vec::with_capacity(c);
        for j in 0..c {
            let pos = c + j * sw;
            stub_words.push((pos / 64) as u16);
            stub_shifts.push((pos % 64) as u8);
            stub_straddles.push(pos % 64 + sw > 64);
        }
        Self {
            words_per_chunk: config.chunk_bits / 64,
            stub_width: sw,
            magnitude_mask: (1u64 << config.stub_bits) - 1,
            mode_pos: config.mode_position(),
            pool_start: config.pool_start(),
            pool_bits: config.pool_bits(),
            stub_words,
            stub_shifts,
            stub_straddles,
        }
    }

    #[inline]
    fn stub_pos(&self, c: usize, j: usize) -> usize {
        c + j * self.stub_width
    }
}

/// A chunk's extension pool copied into an aligned scratch buffer.
struct Pool {
    words: [u64; MAX_POOL_WORDS],
    bits: usize,
}

impl Pool {
    fn load(chunk: &[u64], layout: &Layout) -> Self {
        let mut words = [0u64; MAX_POOL_WORDS];
        let bits = layout.pool_bits;
        let mut off = 0;
        let mut k = 0;
        while off < bits {
            let len = (bits - off).min(64);
            words[k] = bits::get_bits(chunk, layout.pool_start + off, len);
            off += 64;
            k += 1;
        }
        Self { words, bits }
    }

    fn store(&self, chunk: &mut [u64], layout: &Layout) {
        let mut off = 0;
        let mut k = 0;
        while off < self.bits {
            let len = (self.bits - off).min(64);
            bits::set_bits(chunk, layout.pool_start + off, len, self.words[k]);
            off += 64;
            k += 1;
        }
    }

    fn word_count(&self) -> usize {
        self.bits.div_ceil(64)
    }

    #[inline]
    fn fragment(&self, k: usize) -> u64 {
        (self.words[k / 32] >> ((k % 32) * 2)) & 3
    }

    #[inline]
    fn set_fragment(&mut self, k: usize, value: u64) {
        let shift = (k % 32) * 2;
        let w = &mut self.words[k / 32];
        *w = (*w & !(3 << shift)) | (value << shift);
    }

    /// Bit position of the second bit of delimiter `m`.
    fn select_delimiter(&self, m: usize, backend: Backend) -> Option<usize> {
        let mut remaining = m as u32;
        for k in 0..self.word_count() {
            let d = bits::delimiters_word(self.words[k]);
            let ones = d.count_ones();
            if remaining < ones {
                return Some(k * 64 + bits::select_in_word(d, remaining, backend) as usize);
            }
            remaining -= ones;
        }
        None
    }

    /// Fragment range `[start, delimiter]` of extension `m`.
    fn locate(&self, m: usize, backend: Backend) -> (usize, usize) {
        let start = if m == 0 {
            0
        } else {
            self.select_delimiter(m - 1, backend).expect("pool holds fewer extensions than overflows") / 2 + 1
        };
        let delim = self.select_delimiter(m, backend).expect("pool holds fewer extensions than overflows") / 2;
        (start, delim)
    }

    /// Occupied bits when the pool holds `extensions` extensions.
    fn used_bits(&self, extensions: usize, backend: Backend) -> usize {
        if extensions == 0 {
            0
        } else {
            self.select_delimiter(extensions - 1, backend).expect("pool holds fewer extensions than overflows") + 1
        }
    }

    fn decode(&self, start: usize, delim: usize) -> u64 {
        (start..delim).rev().fold(0, |acc, k| bits::horner_step(acc, self.fragment(k) as u8))
    }

    /// Opens `n` bits at `at`, moving everything above up, and writes `value`.
    fn insert(&mut self, at: usize, n: usize, value: u64) {
        debug_assert!(n > 0 && n < 64);
        let k0 = at / 64;
        let low = low_mask(at % 64);
        let keep = self.words[k0] & low;
        self.words[k0] &= !low;
        for k in (k0..self.word_count()).rev() {
            let carry = if k > k0 { self.words[k - 1] >> (64 - n) } else { 0 };
            self.words[k] = (self.words[k] << n) | carry;
        }
        self.words[k0] |= keep;
        bits::set_bits(&mut self.words, at, n, value);
        self.clear_tail();
    }

    /// Drops `n` bits at `at`, moving everything above down.
    fn remove(&mut self, at: usize, n: usize) {
        debug_assert!(n > 0 && n < 64);
        let k0 = at / 64;
        let low = low_mask(at % 64);
        let keep = self.words[k0] & low;
        let nw = self.word_count();
        for k in k0..nw {
            let carry = if k + 1 < nw { self.words[k + 1] << (64 - n) } else { 0 };
            self.words[k] = (self.words[k] >> n) | carry;
        }
        self.words[k0] = (self.words[k0] & !low) | keep;
    }

    fn clear_tail(&mut self) {
        let nw = self.word_count();
        let rem = self.bits % 64;
        if rem != 0 {
            self.words[nw - 1] &= low_mask(rem);
        }
    }

    fn clear(&mut self) {
        self.words = [0; MAX_POOL_WORDS];
    }
}

#[inline]
fn low_mask(n: usize) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Pool bits an extension for high part `hi` occupies.
#[inline]
pub fn extension_bits(hi: u64) -> usize {
    if hi == 0 {
        0
    } else {
        2 * (bits::base3_len(hi) + 1)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct Stats {
    tails_chunks: usize,
    /// Occupied pool bits over mode-0 chunks.
    extension_bits: u64,
    updates_since_check: u64,
    checked: bool,
}

/// An array of `w` variable-length counters.
#[derive(Debug, Clone)]
pub struct CounterArray {
    config: ValeConfig,
    layout: Layout,
    len: u64,
    chunks: usize,
    words: Vec<u64>,
    registry: TailsRegistry,
    div: FastDiv,
    stats: Stats,
    backend: Backend,
}

impl PartialEq for CounterArray {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.len == other.len && self.values() == other.values()
    }
}

enum Step {
    Increase,
    Decrease,
}

impl CounterArray {
    /// An array of `len` zero counters.
    pub fn new(len: u64, config: ValeConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let chunks = chunk_count(len, config.counters_per_chunk);
        Ok(Self {
            config,
            words: vec![0; chunks * layout.words_per_chunk],
            layout,
            len,
            chunks,
            registry: TailsRegistry::default(),
            div: FastDiv::new(config.counters_per_chunk as u64, len.max(1))?,
            stats: Stats::default(),
            backend: Backend::default(),
        })
    }

    /// Encodes `values` under `config`; chunks whose extensions overflow the
    /// pool go straight to tails mode.
    pub fn build(values: &[i64], config: ValeConfig) -> Result<Self> {
        let mut arr = Self::new(values.len() as u64, config)?;
        let c = config.counters_per_chunk;
        let s = config.stub_bits;
        let max = config.max_magnitude();
        let mut highs = vec![0u64; c];
        for (ch, group) in values.chunks(c).enumerate() {
            let mut ext = 0;
            for (j, &v) in group.iter().enumerate() {
                let index = (ch * c + j) as u64;
                if (v < 0 && !config.signed) || v.unsigned_abs() > max {
                    return Err(Error::ValueOutOfRange { index, value: v });
                }
                let mag = v.unsigned_abs();
                arr.write_stub(ch, j, mag & arr.layout.magnitude_mask, v < 0);
                highs[j] = mag >> s;
                if highs[j] > 0 {
                    arr.set_overflow(ch, j, true);
                }
                ext += extension_bits(highs[j]);
            }
            let highs = &highs[..group.len()];
            if ext <= arr.layout.pool_bits {
                let mut pool = Pool { words: [0; MAX_POOL_WORDS], bits: arr.layout.pool_bits };
                let mut k = 0;
                for &hi in highs.iter().filter(|&&hi| hi > 0) {
                    let mut rest = hi;
                    while rest != 0 {
                        pool.set_fragment(k, rest % 3);
                        rest /= 3;
                        k += 1;
                    }
                    pool.set_fragment(k, DELIMITER);
                    k += 1;
                }
                let base = ch * arr.layout.words_per_chunk;
                pool.store(&mut arr.words[base..base + arr.layout.words_per_chunk], &arr.layout);
                arr.stats.extension_bits += ext as u64;
            } else {
                let mut slab = vec![0u32; c];
                for (slot, &hi) in slab.iter_mut().zip(highs) {
                    *slot = hi as u32;
                }
                arr.install_tails(ch, slab)?;
            }
        }
        Ok(arr)
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn config(&self) -> ValeConfig {
        self.config
    }

    pub fn chunk_count(&self) -> usize {
        self.chunks
    }

    pub fn tails_chunks(&self) -> usize {
        self.stats.tails_chunks
    }

    pub fn registry(&self) -> &TailsRegistry {
        &self.registry
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn set_backend(&mut self, backend: Backend) {
        self.backend = backend;
    }

    /// Raw bits of chunk `ch`.
    pub fn chunk_words(&self, ch: usize) -> &[u64] {
        let base = ch * self.layout.words_per_chunk;
        &self.words[base..base + self.layout.words_per_chunk]
    }

    /// Hook for issuing a prefetch of the chunk holding counter `i`.
    #[inline]
    pub fn prefetch(&self, _i: u64) {}

    #[inline]
    fn split(&self, i: u64) -> (usize, usize) {
        let ch = self.div.div_unchecked(i) as usize;
        (ch, (i - (ch * self.config.counters_per_chunk) as u64) as usize)
    }

    #[inline]
    fn check_index(&self, i: u64) -> Result<()> {
        if i >= self.len {
            Err(Error::OutOfRange { pos: i, len: self.len })
        } else {
            Ok(())
        }
    }

    #[inline]
    fn base(&self, ch: usize) -> usize {
        ch * self.layout.words_per_chunk
    }

    #[inline]
    fn overflow(&self, ch: usize, j: usize) -> bool {
        (self.words[self.base(ch) + j / 64] >> (j % 64)) & 1 == 1
    }

    fn set_overflow(&mut self, ch: usize, j: usize, on: bool) {
        let k = self.base(ch) + j / 64;
        let w = &mut self.words[k];
        if on {
            *w |= 1 << (j % 64);
        } else {
            *w &= !(1 << (j % 64));
        }
    }

    fn overflow_count(&self, ch: usize) -> usize {
        let chunk = self.chunk_words(ch);
        bits::rank_words(chunk, self.config.counters_per_chunk, self.backend)
    }

    #[inline]
    fn overflow_rank(&self, ch: usize, j: usize) -> usize {
        bits::rank_words(self.chunk_words(ch), j, self.backend)
    }

    #[inline]
    fn tails_mode(&self, ch: usize) -> bool {
        let p = self.layout.mode_pos;
        (self.words[self.base(ch) + p / 64] >> (p % 64)) & 1 == 1
    }

    fn handle(&self, ch: usize) -> u64 {
        bits::get_bits(self.chunk_words(ch), self.layout.pool_start, HANDLE_BITS)
    }

    /// Stub field as (low magnitude bits, negative).
    #[inline]
    fn read_stub(&self, ch: usize, j: usize) -> (u64, bool) {
        let field = bits::get_bits(
            self.chunk_words(ch),
            self.layout.stub_pos(self.config.counters_per_chunk, j),
            self.layout.stub_width,
        );
        let neg = self.config.signed && (field >> self.config.stub_bits) & 1 == 1;
        (field & self.layout.magnitude_mask, neg)
    }

    #[inline]
    fn write_stub(&mut self, ch: usize, j: usize, low: u64, neg: bool) {
        let field = low | ((neg as u64) << self.config.stub_bits);
        let pos = self.layout.stub_pos(self.config.counters_per_chunk, j);
        let base = self.base(ch);
        let wpc = self.layout.words_per_chunk;
        bits::set_bits(&mut self.words[base..base + wpc], pos, self.layout.stub_width, field);
    }

    /// Adds `+1`/`-1` to the low stub bits in place; the caller guarantees
    /// no carry or borrow leaves the stub.
    #[inline]
    fn bump_stub(&mut self, ch: usize, j: usize, up: bool) {
        if self.layout.stub_straddles[j] {
            let (low, neg) = self.read_stub(ch, j);
            let low = if up { low + 1 } else { low - 1 };
            self.write_stub(ch, j, low, neg);
        } else {
            let k = self.base(ch) + self.layout.stub_words[j] as usize;
            let w = &mut self.words[k];
            let unit = 1u64 << self.layout.stub_shifts[j];
            if up {
                *w += unit;
            } else {
                *w -= unit;
            }
        }
    }

    fn load_pool(&self, ch: usize) -> Pool {
        Pool::load(self.chunk_words(ch), &self.layout)
    }

    fn store_pool(&mut self, ch: usize, pool: &Pool) {
        let base = self.base(ch);
        let wpc = self.layout.words_per_chunk;
        pool.store(&mut self.words[base..base + wpc], &self.layout);
    }

    /// High part of counter `j` of chunk `ch`.
    fn high(&self, ch: usize, j: usize) -> u64 {
        if !self.overflow(ch, j) {
            return 0;
        }
        if self.tails_mode(ch) {
            return self.registry.get(self.handle(ch))[j] as u64;
        }
        let pool = self.load_pool(ch);
        let (start, delim) = pool.locate(self.overflow_rank(ch, j), self.backend);
        pool.decode(start, delim)
    }

    /// Logical value of counter `i`.
    pub fn read(&self, i: u64) -> Result<i64> {
        self.check_index(i)?;
        Ok(self.read_unchecked(i))
    }

    #[inline]
    fn read_unchecked(&self, i: u64) -> i64 {
        let (ch, j) = self.split(i);
        let (low, neg) = self.read_stub(ch, j);
        let mag = (low | (self.high(ch, j) << self.config.stub_bits)) as i64;
        if neg {
            -mag
        } else {
            mag
        }
    }

    /// Whether counter `i` is zero, without touching the pool.
    pub fn is_zero(&self, i: u64) -> Result<bool> {
        self.check_index(i)?;
        let (ch, j) = self.split(i);
        Ok(self.read_stub(ch, j).0 == 0 && !self.overflow(ch, j))
    }

    /// All counter values in index order.
    pub fn values(&self) -> Vec<i64> {
        let c = self.config.counters_per_chunk;
        let mut out = Vec::with_capacity(self.len as usize);
        for ch in 0..self.chunks {
            let n = (self.len as usize - ch * c).min(c);
            let highs = self.chunk_highs(ch);
            for (j, &hi) in highs.iter().enumerate().take(n) {
                let (low, neg) = self.read_stub(ch, j);
                let mag = (low | (hi << self.config.stub_bits)) as i64;
                out.push(if neg { -mag } else { mag });
            }
        }
        out
    }

    /// High parts of every counter slot of a chunk.
    fn chunk_highs(&self, ch: usize) -> Vec<u64> {
        let c = self.config.counters_per_chunk;
        if self.tails_mode(ch) {
            return self.registry.get(self.handle(ch)).iter().map(|&t| t as u64).collect();
        }
        let mut highs = vec![0u64; c];
        let pool = self.load_pool(ch);
        let mut k = 0;
        for (j, slot) in highs.iter_mut().enumerate() {
            if self.overflow(ch, j) {
                let start = k;
                while pool.fragment(k) != DELIMITER {
                    k += 1;
                }
                *slot = pool.decode(start, k);
                k += 1;
            }
        }
        highs
    }

    /// Adds `delta` (either `+1` or `-1`) to counter `i`.
    pub fn add(&mut self, i: u64, delta: i64) -> Result<()> {
        self.check_index(i)?;
        if delta != 1 && delta != -1 {
            return Err(Error::InvalidDelta(delta));
        }
        let (ch, j) = self.split(i);
        let (low, neg) = self.read_stub(ch, j);
        let zero = low == 0 && !self.overflow(ch, j);
        let step = if zero {
            if delta < 0 && !self.config.signed {
                return Err(Error::Underflow { index: i });
            }
            self.write_stub(ch, j, 1, delta < 0);
            self.stats.updates_since_check += 1;
            return Ok(());
        } else if neg == (delta < 0) {
            Step::Increase
        } else {
            Step::Decrease
        };
        match step {
            Step::Increase => {
                if low < self.layout.magnitude_mask {
                    self.bump_stub(ch, j, true);
                } else {
                    self.increment_high(ch, j, i)?;
                    self.write_stub(ch, j, 0, neg);
                }
            }
            Step::Decrease => {
                if low > 0 {
                    self.bump_stub(ch, j, false);
                    if low == 1 && neg && !self.overflow(ch, j) {
                        // sign of zero is positive
                        self.write_stub(ch, j, 0, false);
                    }
                } else {
                    self.decrement_high(ch, j);
                    self.write_stub(ch, j, self.layout.magnitude_mask, neg);
                }
            }
        }
        self.stats.updates_since_check += 1;
        Ok(())
    }

    fn increment_high(&mut self, ch: usize, j: usize, index: u64) -> Result<()> {
        if self.tails_mode(ch) {
            return self.increment_tail(ch, j, index);
        }
        let mut pool = self.load_pool(ch);
        let extensions = self.overflow_count(ch);
        let used = pool.used_bits(extensions, self.backend);
        let free = self.layout.pool_bits - used;
        let m = self.overflow_rank(ch, j);
        if !self.overflow(ch, j) {
            if free < 4 {
                self.migrate_to_tails(ch)?;
                return self.increment_tail(ch, j, index);
            }
            let start = if m == 0 {
                0
            } else {
                pool.select_delimiter(m - 1, self.backend).expect("missing delimiter") + 1
            };
            pool.insert(start, 4, UNIT_EXTENSION);
            self.store_pool(ch, &pool);
            self.set_overflow(ch, j, true);
            self.stats.extension_bits += 4;
            return Ok(());
        }
        let (start, delim) = pool.locate(m, self.backend);
        let hi = pool.decode(start, delim);
        if hi >= u32::MAX as u64 {
            return Err(Error::CounterOverflow { index });
        }
        let grows = (start..delim).all(|k| pool.fragment(k) == 2);
        if grows && free < 2 {
            self.migrate_to_tails(ch)?;
            return self.increment_tail(ch, j, index);
        }
        let mut k = start;
        loop {
            if k == delim {
                pool.insert(2 * delim, 2, 1);
                self.stats.extension_bits += 2;
                break;
            }
            let d = pool.fragment(k);
            if d == 2 {
                pool.set_fragment(k, 0);
                k += 1;
            } else {
                pool.set_fragment(k, d + 1);
                break;
            }
        }
        self.store_pool(ch, &pool);
        Ok(())
    }

    fn increment_tail(&mut self, ch: usize, j: usize, index: u64) -> Result<()> {
        let h = self.handle(ch);
        let tail = &mut self.registry.get_mut(h)[j];
        if *tail == u32::MAX {
            return Err(Error::CounterOverflow { index });
        }
        *tail += 1;
        self.set_overflow(ch, j, true);
        Ok(())
    }

    /// Caller guarantees the high part is at least one.
    fn decrement_high(&mut self, ch: usize, j: usize) {
        if self.tails_mode(ch) {
            let h = self.handle(ch);
            let tail = &mut self.registry.get_mut(h)[j];
            *tail -= 1;
            if *tail == 0 {
                self.set_overflow(ch, j, false);
            }
            return;
        }
        let mut pool = self.load_pool(ch);
        let (start, delim) = pool.locate(self.overflow_rank(ch, j), self.backend);
        let mut k = start;
        loop {
            let d = pool.fragment(k);
            if d == 0 {
                pool.set_fragment(k, 2);
                k += 1;
            } else {
                pool.set_fragment(k, d - 1);
                break;
            }
        }
        if pool.fragment(delim - 1) == 0 {
            if delim - start == 1 {
                pool.remove(2 * start, 4);
                self.set_overflow(ch, j, false);
                self.stats.extension_bits -= 4;
            } else {
                pool.remove(2 * (delim - 1), 2);
                self.stats.extension_bits -= 2;
            }
        }
        self.store_pool(ch, &pool);
    }

    /// Moves every high part of chunk `ch` into a fresh tails slab.
    pub fn migrate_to_tails(&mut self, ch: usize) -> Result<()> {
        if ch >= self.chunks {
            return Err(Error::OutOfRange { pos: ch as u64, len: self.chunks as u64 });
        }
        if self.tails_mode(ch) {
            return Err(Error::Integrity(format!("chunk {ch} already uses tails")));
        }
        let used = {
            let pool = self.load_pool(ch);
            pool.used_bits(self.overflow_count(ch), self.backend)
        };
        let slab = self.chunk_highs(ch).into_iter().map(|hi| hi as u32).collect();
        self.stats.extension_bits -= used as u64;
        self.install_tails(ch, slab)
    }

    fn install_tails(&mut self, ch: usize, slab: Vec<u32>) -> Result<()> {
        let h = self.registry.alloc(self.config.counters_per_chunk)?;
        self.registry.get_mut(h).copy_from_slice(&slab);
        let mut pool = self.load_pool(ch);
        pool.clear();
        pool.words[0] = h;
        self.store_pool(ch, &pool);
        let p = self.layout.mode_pos;
        let base = self.base(ch);
        self.words[base + p / 64] |= 1 << (p % 64);
        self.stats.tails_chunks += 1;
        Ok(())
    }

    /// Appends zero counters up to `new_len`.
    pub fn grow_to(&mut self, new_len: u64) -> Result<()> {
        if new_len < self.len {
            return Err(Error::InvalidConfig(format!("cannot shrink from {} to {new_len}", self.len)));
        }
        let chunks = chunk_count(new_len, self.config.counters_per_chunk);
        self.words.resize(chunks * self.layout.words_per_chunk, 0);
        self.chunks = chunks;
        self.len = new_len;
        if new_len > self.div.max_dividend() {
            self.div = FastDiv::new(self.config.counters_per_chunk as u64, new_len.next_power_of_two())?;
        }
        Ok(())
    }

    /// The array concatenated with a copy of itself.
    pub fn doubled(&self) -> Result<Self> {
        if self.len % self.config.counters_per_chunk as u64 != 0 {
            let mut values = self.values();
            values.extend_from_within(..);
            let mut out = Self::build(&values, self.config)?;
            out.backend = self.backend;
            return Ok(out);
        }
        let mut out = self.clone();
        out.words.extend_from_within(..);
        out.chunks *= 2;
        out.len *= 2;
        out.div = FastDiv::new(self.config.counters_per_chunk as u64, out.len)?;
        out.stats.extension_bits *= 2;
        out.stats.tails_chunks *= 2;
        for ch in self.chunks..out.chunks {
            if out.tails_mode(ch) {
                let slab = out.registry.get(out.handle(ch)).to_vec();
                let h = out.registry.alloc(self.config.counters_per_chunk)?;
                out.registry.get_mut(h).copy_from_slice(&slab);
                let base = out.base(ch);
                let wpc = out.layout.words_per_chunk;
                bits::set_bits(&mut out.words[base..base + wpc], out.layout.pool_start, HANDLE_BITS, h);
            }
        }
        Ok(out)
    }

    /// Space accounting for the current encoding.
    pub fn footprint(&self) -> Footprint {
        let cfg = self.config;
        let c = cfg.counters_per_chunk;
        let sw = cfg.stub_width() as u64;
        let mut content = 0u64;
        for ch in 0..self.chunks {
            let n = (self.len as usize - ch * c).min(c);
            if self.tails_mode(ch) {
                content += n as u64 * (sw + TAILS_ENTRY_BITS as u64);
            } else {
                let highs = self.chunk_highs(ch);
                content += highs[..n].iter().map(|&hi| sw + extension_bits(hi) as u64).sum::<u64>();
            }
        }
        let slabs = self.registry.live_slabs();
        Footprint {
            allocated_bits: (self.chunks * cfg.chunk_bits + slabs * c * TAILS_ENTRY_BITS) as u64,
            content_bits: content,
            tails_slabs: slabs,
            config: cfg,
        }
    }

    /// Unused pool bits summed over extension-mode chunks.
    pub fn pool_slack(&self) -> u64 {
        let mode0 = (self.chunks - self.stats.tails_chunks) as u64;
        mode0 * self.layout.pool_bits as u64 - self.stats.extension_bits
    }

    /// Whether the tails share or the pool slack calls for a new tuning.
    pub fn retune_due(&self) -> bool {
        if self.len == 0 {
            return false;
        }
        let tails_share = self.stats.tails_chunks as f64 / self.chunks as f64;
        let slack_per_counter = self.pool_slack() as f64 / self.len as f64;
        tails_share > 0.01 || slack_per_counter > 2.0
    }

    /// Re-tunes `(c, s)` when the trigger holds. The histogram pass runs at
    /// most once per `max(w, 4096)` updates. Returns whether the array was
    /// rebuilt.
    pub fn maybe_retune(&mut self) -> Result<bool> {
        if !self.retune_due() {
            return Ok(false);
        }
        let cooldown = self.len.max(4096);
        if self.stats.checked && self.stats.updates_since_check < cooldown {
            return Ok(false);
        }
        self.retune_now()
    }

    /// Runs the tuning search unconditionally.
    pub fn retune_now(&mut self) -> Result<bool> {
        let values = self.values();
        let best = crate::tuning::choose(&values, self.config.chunk_bits, self.config.signed);
        self.stats.checked = true;
        self.stats.updates_since_check = 0;
        if best == self.config {
            return Ok(false);
        }
        let backend = self.backend;
        *self = Self::build(&values, best)?;
        self.backend = backend;
        self.stats.checked = true;
        Ok(true)
    }

    /// The tuning the search would pick for the current values.
    pub fn best_tuning(&self) -> ValeConfig {
        crate::tuning::choose(&self.values(), self.config.chunk_bits, self.config.signed)
    }

    /// Checks the structural invariants of every chunk.
    pub fn check_invariants(&self) -> Result<()> {
        let c = self.config.counters_per_chunk;
        let mut tails = 0;
        let mut ext_total = 0u64;
        for ch in 0..self.chunks {
            let n = (self.len as usize - ch * c).min(c);
            for j in n..c {
                let (low, neg) = self.read_stub(ch, j);
                if low != 0 || neg || self.overflow(ch, j) {
                    return Err(Error::Integrity(format!("unaddressed slot {j} of chunk {ch} is dirty")));
                }
            }
            for j in 0..n {
                let (low, neg) = self.read_stub(ch, j);
                if neg && low == 0 && !self.overflow(ch, j) {
                    return Err(Error::Integrity(format!("negative zero at chunk {ch} slot {j}")));
                }
            }
            let pool = self.load_pool(ch);
            if self.tails_mode(ch) {
                tails += 1;
                let h = self.handle(ch);
                if h as usize >= self.registry.slabs.len() || self.registry.free.contains(&h) {
                    return Err(Error::Integrity(format!("chunk {ch} has dangling handle {h}")));
                }
                let slab = self.registry.get(h);
                for j in 0..c {
                    if self.overflow(ch, j) != (slab[j] != 0) {
                        return Err(Error::Integrity(format!("overflow bit mismatch at chunk {ch} slot {j}")));
                    }
                }
                if pool.words[0] >> HANDLE_BITS != 0 || pool.words[1..].iter().any(|&w| w != 0) {
                    return Err(Error::Integrity(format!("chunk {ch} pool not clear after handle")));
                }
                continue;
            }
            let overflows = self.overflow_count(ch);
            let delims: usize = (0..pool.word_count()).map(|k| bits::delimiters_word(pool.words[k]).count_ones() as usize).sum();
            if overflows != delims {
                return Err(Error::Integrity(format!("chunk {ch}: {overflows} overflows but {delims} delimiters")));
            }
            let used = pool.used_bits(overflows, self.backend);
            ext_total += used as u64;
            let mut start = 0;
            for m in 0..overflows {
                let (s, d) = pool.locate(m, self.backend);
                if s != start || d == s || pool.fragment(d - 1) == 0 {
                    return Err(Error::Integrity(format!("chunk {ch}: extension {m} malformed")));
                }
                start = d + 1;
            }
            for p in used..pool.bits {
                if (pool.words[p / 64] >> (p % 64)) & 1 == 1 {
                    return Err(Error::Integrity(format!("chunk {ch}: padding bit {p} set")));
                }
            }
        }
        if tails != self.stats.tails_chunks || ext_total != self.stats.extension_bits {
            return Err(Error::Integrity("running statistics drifted".into()));
        }
        Ok(())
    }
}

fn chunk_count(len: u64, c: usize) -> usize {
    len.div_ceil(c as u64) as usize
}

mod codec {
    //! Binary dump of a counter array. All integers little-endian:
    //!
    //! ```text
    //! magic        4 bytes  "VALE"
    //! version      u16      1
    //! chunk_bits   u16
    //! c            u16
    //! s            u8
    //! signed       u8       0 or 1
    //! len          u64      logical counter count
    //! chunks       u64
    //! words        chunks * chunk_bits / 64 x u64
    //! slabs        u64
    //! slab data    slabs * c x u32 (freed slabs are zero-filled)
    //! free         u64
    //! free handles free x u64
    //! ```

    use super::*;
    use crate::wire::{Reader, Writer};

    pub(super) const MAGIC: &[u8; 4] = b"VALE";
    pub(super) const VERSION: u16 = 1;

    impl CounterArray {
        pub fn to_bytes(&self) -> Vec<u8> {
            let mut w = Writer::default();
            w.bytes(MAGIC);
            w.u16(VERSION);
            w.u16(self.config.chunk_bits as u16);
            w.u16(self.config.counters_per_chunk as u16);
            w.u8(self.config.stub_bits as u8);
            w.u8(self.config.signed as u8);
            w.u64(self.len);
            w.u64(self.chunks as u64);
            for &word in &self.words {
                w.u64(word);
            }
            w.u64(self.registry.slabs.len() as u64);
            for (h, slab) in self.registry.slabs.iter().enumerate() {
                let freed = self.registry.free.contains(&(h as u64));
                for j in 0..self.config.counters_per_chunk {
                    w.u32(if freed { 0 } else { slab[j] });
                }
            }
            w.u64(self.registry.free.len() as u64);
            for &h in &self.registry.free {
                w.u64(h);
            }
            w.finish()
        }

        pub fn from_bytes(data: &[u8]) -> Result<Self> {
            let mut r = Reader::new(data);
            if r.bytes(4)? != MAGIC {
                return Err(Error::Format("bad magic".into()));
            }
            let version = r.u16()?;
            if version != VERSION {
                return Err(Error::Format(format!("unsupported version {version}")));
            }
            let chunk_bits = r.u16()? as usize;
            let c = r.u16()? as usize;
            let s = r.u8()? as usize;
            let signed = match r.u8()? {
                0 => false,
                1 => true,
                other => return Err(Error::Format(format!("bad signed flag {other}"))),
            };
            let config = ValeConfig::new(chunk_bits, c, s, signed)?;
            let len = r.u64()?;
            let chunks = r.u64()? as usize;
            let mut arr = Self::new(len, config)?;
            if chunks != arr.chunks {
                return Err(Error::Format(format!("{chunks} chunks cannot hold {len} counters")));
            }
            for word in arr.words.iter_mut() {
                *word = r.u64()?;
            }
            let slabs = r.u64()? as usize;
            if slabs > r.remaining() / (4 * c).max(1) {
                return Err(Error::Format("slab count exceeds payload".into()));
            }
            for _ in 0..slabs {
                let slab = (0..c).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                arr.registry.slabs.push(slab);
            }
            let free = r.u64()? as usize;
            if free > slabs {
                return Err(Error::Format("free list longer than registry".into()));
            }
            for _ in 0..free {
                let h = r.u64()?;
                if h as usize >= slabs {
                    return Err(Error::Format(format!("free handle {h} out of range")));
                }
                arr.registry.free.push(h);
            }
            r.expect_end()?;
            for ch in 0..arr.chunks {
                if arr.tails_mode(ch) {
                    arr.stats.tails_chunks += 1;
                } else {
                    let pool = arr.load_pool(ch);
                    arr.stats.extension_bits += pool.used_bits(arr.overflow_count(ch), arr.backend) as u64;
                }
            }
            arr.check_invariants().map_err(|e| Error::Format(format!("inconsistent array: {e}")))?;
            Ok(arr)
        }
    }
}
