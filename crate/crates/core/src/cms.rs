//! Count-Min sketches: a growing VALE-backed variant and a fixed baseline.

use crate::error::{Error, Result};
use crate::growth::{Action, ArraySet, GrowthTracker, SizeFunction};
use crate::hashing::{counter_index, splice_hash, MAX_ARRAYS};
use crate::vale::{CounterArray, ValeConfig};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"SCMS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmsConfig {
    pub d: usize,
    pub size: SizeFunction,
    /// Tuning of freshly created arrays.
    pub vale: ValeConfig,
    pub seed: u64,
    /// Overrides the starting width derived from `size`.
    pub initial_width: Option<u64>,
    pub retune: bool,
}

impl Default for CmsConfig {
    fn default() -> Self {
        Self {
            d: 3,
            size: SizeFunction::default(),
            vale: ValeConfig::default(),
            seed: 0,
            initial_width: None,
            retune: true,
        }
    }
}

impl CmsConfig {
    pub fn width(&self) -> u64 {
        self.initial_width.unwrap_or_else(|| self.size.initial_width(self.vale.counters_per_chunk))
    }

    fn validate(&self) -> Result<()> {
        if !(1..=MAX_ARRAYS).contains(&self.d) {
            return Err(Error::InvalidConfig(format!("d = {} outside [1, {MAX_ARRAYS}]", self.d)));
        }
        if self.width() == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        if self.vale.signed {
            return Err(Error::InvalidConfig("count-min arrays are unsigned".into()));
        }
        self.vale.validate()
    }
}

/// Memory used by a growing sketch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchMemory {
    pub live_bits: u64,
    pub snapshot_bits: u64,
    pub content_bits: u64,
}

impl SketchMemory {
    pub fn allocated_bits(&self) -> u64 {
        self.live_bits + self.snapshot_bits
    }
}

/// Count-Min sketch whose arrays track `W(N)`.
#[derive(Debug, Clone)]
pub struct SublimeCms {
    config: CmsConfig,
    set: ArraySet,
    tracker: GrowthTracker,
    n: i64,
}

impl SublimeCms {
    pub fn new(config: CmsConfig) -> Result<Self> {
        config.validate()?;
        let w = config.width();
        Ok(Self {
            set: ArraySet::new(config.d, w, config.vale, config.retune)?,
            tracker: GrowthTracker::new(config.size, w),
            config,
            n: 0,
        })
    }

    pub fn config(&self) -> &CmsConfig {
        &self.config
    }

    pub fn width(&self) -> u64 {
        self.set.width()
    }

    pub fn n(&self) -> i64 {
        self.n
    }

    pub fn tracker(&self) -> &GrowthTracker {
        &self.tracker
    }

    pub fn arrays(&self) -> &[CounterArray] {
        self.set.arrays()
    }

    pub fn array_set(&self) -> &ArraySet {
        &self.set
    }

    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        self.apply_update(key, 1)?;
        self.resize()
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        self.apply_update(key, -1)?;
        self.resize()
    }

    /// Adds `delta` (`+1` or `-1`) to the key's counters without resizing.
    pub fn apply_update(&mut self, key: &[u8], delta: i64) -> Result<()> {
        if delta != 1 && delta != -1 {
            return Err(Error::InvalidDelta(delta));
        }
        let w = self.width();
        let splice = splice_hash(key, self.config.seed, self.config.d);
        let idx: Vec<u64> = splice.lanes[..self.config.d].iter().map(|&h| counter_index(h, w)).collect();
        if delta < 0 {
            for (j, &i) in idx.iter().enumerate() {
                if self.set.arrays()[j].is_zero(i)? {
                    return Err(Error::Underflow { index: i });
                }
            }
        }
        for (j, &i) in idx.iter().enumerate() {
            self.set.array_mut(j).add(i, delta)?;
        }
        self.n += delta;
        self.tracker.shift(delta as f64);
        self.set.maybe_retune()
    }

    /// The resize the tracker currently calls for.
    pub fn next_resize(&self) -> Action {
        self.tracker.pending()
    }

    /// Carries out one pending resize, if any.
    pub fn resize_step(&mut self) -> Result<Action> {
        let action = self.tracker.pending();
        self.set.perform(action)?;
        self.tracker.commit(action);
        Ok(action)
    }

    /// Carries out pending resizes until none remains.
    pub fn resize(&mut self) -> Result<()> {
        while self.resize_step()? != Action::None {}
        Ok(())
    }

    /// Per-array estimates of the key's count.
    pub fn estimates(&self, key: &[u8]) -> Vec<i64> {
        let w = self.width();
        let splice = splice_hash(key, self.config.seed, self.config.d);
        self.set
            .arrays()
            .iter()
            .zip(&splice.lanes)
            .map(|(arr, &h)| arr.read(counter_index(h, w)).expect("index below width"))
            .collect()
    }

    pub fn query(&self, key: &[u8]) -> i64 {
        self.estimates(key).into_iter().min().unwrap_or(0)
    }

    pub fn memory(&self) -> SketchMemory {
        SketchMemory {
            live_bits: self.set.live_allocated_bits(),
            snapshot_bits: self.set.snapshot_bits(),
            content_bits: self.set.content_bits(),
        }
    }

    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u64(self.config.seed);
        w.u64(self.n as u64);
        self.tracker.write(&mut w);
        self.set.write(&mut w);
        w.finish()
    }

    pub fn load(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        if r.bytes(4)? != MAGIC {
            return Err(Error::Format("not a count-min sketch".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let n = r.u64()? as i64;
        let tracker = GrowthTracker::read(&mut r)?;
        let set = ArraySet::read(&mut r)?;
        r.expect_end()?;
        if tracker.width() != set.width() {
            return Err(Error::Format("tracker and arrays disagree on width".into()));
        }
        let config = CmsConfig {
            d: set.arrays().len(),
            size: tracker.size(),
            vale: set.arrays()[0].config(),
            seed,
            initial_width: None,
            retune: set.retunes(),
        };
        Ok(Self { config, set, tracker, n })
    }
}

/// Plain Count-Min sketch with `d` rows of `w` 32-bit counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedCms {
    d: usize,
    w: u64,
    seed: u64,
    rows: Vec<Vec<u32>>,
}

impl FixedCms {
    pub fn new(d: usize, w: u64, seed: u64) -> Result<Self> {
        if !(1..=MAX_ARRAYS).contains(&d) || w == 0 {
            return Err(Error::InvalidConfig(format!("fixed count-min with d={d}, w={w}")));
        }
        Ok(Self { d, w, seed, rows: vec![vec![0; w as usize]; d] })
    }

    pub fn width(&self) -> u64 {
        self.w
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn indices(&self, key: &[u8]) -> Vec<usize> {
        let splice = splice_hash(key, self.seed, self.d);
        splice.lanes[..self.d].iter().map(|&h| counter_index(h, self.w) as usize).collect()
    }

    pub fn update(&mut self, key: &[u8], delta: i64) -> Result<()> {
        let idx = self.indices(key);
        for (row, &i) in self.rows.iter().zip(&idx) {
            let next = row[i] as i64 + delta;
            if next < 0 {
                return Err(Error::Underflow { index: i as u64 });
            }
            if next > u32::MAX as i64 {
                return Err(Error::CounterOverflow { index: i as u64 });
            }
        }
        for (row, &i) in self.rows.iter_mut().zip(&idx) {
            row[i] = (row[i] as i64 + delta) as u32;
        }
        Ok(())
    }

    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        self.update(key, 1)
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        self.update(key, -1)
    }

    pub fn query(&self, key: &[u8]) -> i64 {
        let idx = self.indices(key);
        self.rows.iter().zip(&idx).map(|(row, &i)| row[i] as i64).min().unwrap_or(0)
    }

    pub fn allocated_bits(&self) -> u64 {
        self.d as u64 * self.w * 32
    }
}
