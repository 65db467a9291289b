//! Count-Sketch with growth driven by a second-moment estimate, plus a
//! fixed baseline.

use crate::cms::SketchMemory;
use crate::error::{Error, Result};
use crate::growth::{Action, ArraySet, GrowthTracker, SizeFunction};
use crate::hashing::{ams_signs, counter_index, splice_hash, MAX_ARRAYS};
use crate::vale::{CounterArray, ValeConfig};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"SCSK";
const VERSION: u16 = 1;

pub const AMS_ACCUMULATORS: usize = 64;
pub const AMS_GROUP: usize = 8;

/// Median of a non-empty slice; even lengths average the middle pair.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Tracks `F = sum f(x)^2` with 64 sign-weighted sums.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AmsTracker {
    seed: u64,
    acc: [i64; AMS_ACCUMULATORS],
}

impl AmsTracker {
    pub fn new(seed: u64) -> Self {
        Self { seed, acc: [0; AMS_ACCUMULATORS] }
    }

    pub fn update(&mut self, key: &[u8], delta: i64) {
        let signs = ams_signs(key, self.seed);
        for (a, acc) in self.acc.iter_mut().enumerate() {
            if (signs >> a) & 1 == 1 {
                *acc += delta;
            } else {
                *acc -= delta;
            }
        }
    }

    /// Median over groups of the mean squared accumulator.
    pub fn estimate(&self) -> f64 {
        let mut means: Vec<f64> = self
            .acc
            .chunks(AMS_GROUP)
            .map(|g| g.iter().map(|&a| (a as f64) * (a as f64)).sum::<f64>() / AMS_GROUP as f64)
            .collect();
        median(&mut means)
    }

    pub fn accumulators(&self) -> &[i64; AMS_ACCUMULATORS] {
        &self.acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsConfig {
    pub d: usize,
    pub size: SizeFunction,
    /// Tuning of freshly created arrays; the sign bit is always added.
    pub vale: ValeConfig,
    pub seed: u64,
    pub initial_width: Option<u64>,
    pub retune: bool,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            d: 3,
            size: SizeFunction::default(),
            vale: ValeConfig { counters_per_chunk: 57, signed: true, ..ValeConfig::default() },
            seed: 0,
            initial_width: None,
            retune: true,
        }
    }
}

impl CsConfig {
    pub fn width(&self) -> u64 {
        self.initial_width.unwrap_or_else(|| self.size.initial_width(self.vale.counters_per_chunk))
    }
}

/// Count-Sketch whose arrays track `W(F)`.
#[derive(Debug, Clone)]
pub struct SublimeCs {
    config: CsConfig,
    set: ArraySet,
    tracker: GrowthTracker,
    ams: AmsTracker,
}

impl SublimeCs {
    pub fn new(mut config: CsConfig) -> Result<Self> {
        if !(1..=MAX_ARRAYS).contains(&config.d) || config.d % 2 == 0 {
            return Err(Error::InvalidConfig(format!("d = {} must be odd and at most {MAX_ARRAYS}", config.d)));
        }
        config.vale.signed = true;
        config.vale.validate()?;
        let w = config.width();
        if w == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        Ok(Self {
            set: ArraySet::new(config.d, w, config.vale, config.retune)?,
            tracker: GrowthTracker::new(config.size, w),
            ams: AmsTracker::new(config.seed.rotate_left(17) ^ 0xA5A5_A5A5),
            config,
        })
    }

    pub fn config(&self) -> &CsConfig {
        &self.config
    }

    pub fn width(&self) -> u64 {
        self.set.width()
    }

    pub fn arrays(&self) -> &[CounterArray] {
        self.set.arrays()
    }

    pub fn array_set(&self) -> &ArraySet {
        &self.set
    }

    pub fn tracker(&self) -> &GrowthTracker {
        &self.tracker
    }

    pub fn ams(&self) -> &AmsTracker {
        &self.ams
    }

    /// Directions of the key in each array.
    pub fn directions(&self, key: &[u8]) -> Vec<i64> {
        let splice = splice_hash(key, self.config.seed, self.config.d);
        (0..self.config.d).map(|j| splice.direction(j)).collect()
    }

    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        self.apply_update(key, 1)?;
        self.resize()
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        self.apply_update(key, -1)?;
        self.resize()
    }

    /// Applies `delta` (`+1` or `-1`) to counters and the tracker, without
    /// resizing.
    pub fn apply_update(&mut self, key: &[u8], delta: i64) -> Result<()> {
        if delta != 1 && delta != -1 {
            return Err(Error::InvalidDelta(delta));
        }
        let w = self.width();
        let splice = splice_hash(key, self.config.seed, self.config.d);
        for j in 0..self.config.d {
            let i = counter_index(splice.lanes[j], w);
            self.set.array_mut(j).add(i, splice.direction(j) * delta)?;
        }
        let before = self.ams.estimate();
        self.ams.update(key, delta);
        self.tracker.shift(self.ams.estimate() - before);
        self.set.maybe_retune()
    }

    pub fn next_resize(&self) -> Action {
        self.tracker.pending()
    }

    pub fn resize_step(&mut self) -> Result<Action> {
        let action = self.tracker.pending();
        self.set.perform(action)?;
        self.tracker.commit(action);
        Ok(action)
    }

    pub fn resize(&mut self) -> Result<()> {
        while self.resize_step()? != Action::None {}
        Ok(())
    }

    /// Per-array signed estimates of the key's count.
    pub fn estimates(&self, key: &[u8]) -> Vec<i64> {
        let w = self.width();
        let splice = splice_hash(key, self.config.seed, self.config.d);
        self.set
            .arrays()
            .iter()
            .enumerate()
            .map(|(j, arr)| splice.direction(j) * arr.read(counter_index(splice.lanes[j], w)).expect("index below width"))
            .collect()
    }

    pub fn query(&self, key: &[u8]) -> i64 {
        let mut e = self.estimates(key);
        e.sort_unstable();
        e[e.len() / 2]
    }

    pub fn memory(&self) -> SketchMemory {
        SketchMemory {
            live_bits: self.set.live_allocated_bits() + (AMS_ACCUMULATORS * 64) as u64,
            snapshot_bits: self.set.snapshot_bits(),
            content_bits: self.set.content_bits(),
        }
    }

    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.u64(self.config.seed);
        w.u64(self.ams.seed);
        for &a in &self.ams.acc {
            w.u64(a as u64);
        }
        self.tracker.write(&mut w);
        self.set.write(&mut w);
        w.finish()
    }

    pub fn load(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        if r.bytes(4)? != MAGIC {
            return Err(Error::Format("not a count sketch".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let seed = r.u64()?;
        let mut ams = AmsTracker::new(r.u64()?);
        for a in ams.acc.iter_mut() {
            *a = r.u64()? as i64;
        }
        let tracker = GrowthTracker::read(&mut r)?;
        let set = ArraySet::read(&mut r)?;
        r.expect_end()?;
        if tracker.width() != set.width() || set.arrays().len() % 2 == 0 || !set.arrays()[0].config().signed {
            return Err(Error::Format("inconsistent count sketch state".into()));
        }
        let config = CsConfig {
            d: set.arrays().len(),
            size: tracker.size(),
            vale: set.arrays()[0].config(),
            seed,
            initial_width: None,
            retune: set.retunes(),
        };
        Ok(Self { config, set, tracker, ams })
    }
}

/// Plain Count-Sketch with `d` rows of `w` 32-bit signed counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedCs {
    d: usize,
    w: u64,
    seed: u64,
    rows: Vec<Vec<i32>>,
}

impl FixedCs {
    pub fn new(d: usize, w: u64, seed: u64) -> Result<Self> {
        if !(1..=MAX_ARRAYS).contains(&d) || d % 2 == 0 || w == 0 {
            return Err(Error::InvalidConfig(format!("fixed count sketch with d={d}, w={w}")));
        }
        Ok(Self { d, w, seed, rows: vec![vec![0; w as usize]; d] })
    }

    pub fn width(&self) -> u64 {
        self.w
    }

    pub fn update(&mut self, key: &[u8], delta: i64) -> Result<()> {
        let splice = splice_hash(key, self.seed, self.d);
        let mut next = Vec::with_capacity(self.d);
        for (j, row) in self.rows.iter().enumerate() {
            let i = counter_index(splice.lanes[j], self.w) as usize;
            let v = row[i] as i64 + splice.direction(j) * delta;
            let v = i32::try_from(v).map_err(|_| Error::CounterOverflow { index: i as u64 })?;
            next.push((i, v));
        }
        for (row, (i, v)) in self.rows.iter_mut().zip(next) {
            row[i] = v;
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
        let splice = splice_hash(key, self.seed, self.d);
        let mut e: Vec<i64> = self
            .rows
            .iter()
            .enumerate()
            .map(|(j, row)| splice.direction(j) * row[counter_index(splice.lanes[j], self.w) as usize] as i64)
            .collect();
        e.sort_unstable();
        e[e.len() / 2]
    }

    pub fn allocated_bits(&self) -> u64 {
        self.d as u64 * self.w * 32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_estimates() {
        // counters -2, 9, -4 seen through directions -1, +1, +1
        let mut e: Vec<i64> = [-2i64, 9, -4].iter().zip([-1i64, 1, 1]).map(|(c, s)| c * s).collect();
        assert_eq!(e, vec![2, 9, -4]);
        e.sort_unstable();
        assert_eq!(e[1], 2);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn ams_single_key_is_exact() {
        let mut t = AmsTracker::new(9);
        assert_eq!(t.estimate(), 0.0);
        for _ in 0..37 {
            t.update(b"only", 1);
        }
        assert!(t.accumulators().iter().all(|a| a.abs() == 37));
        assert_eq!(t.estimate(), 37.0 * 37.0);
    }

    #[test]
    fn direction_applied_on_insert() {
        let mut s = SublimeCs::new(CsConfig::default()).unwrap();
        s.insert(b"x").unwrap();
        let dirs = s.directions(b"x");
        let splice = splice_hash(b"x", 0, 3);
        for j in 0..3 {
            let i = counter_index(splice.lanes[j], s.width());
            assert_eq!(s.arrays()[j].read(i).unwrap(), dirs[j]);
        }
        assert_eq!(s.query(b"x"), 1);
        s.delete(b"x").unwrap();
        assert!(s.arrays().iter().all(|a| a.values().iter().all(|&v| v == 0)));
    }

    #[test]
    fn even_d_rejected() {
        assert!(SublimeCs::new(CsConfig { d: 2, ..CsConfig::default() }).is_err());
        assert!(FixedCs::new(2, 10, 0).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let mut s = SublimeCs::new(CsConfig::default()).unwrap();
        for i in 0u64..3000 {
            s.insert(&(i % 41).to_le_bytes()).unwrap();
        }
        let bytes = s.save();
        let back = SublimeCs::load(&bytes).unwrap();
        assert_eq!(back.save(), bytes);
        assert_eq!(back.ams(), s.ams());
        assert_eq!(back.query(&3u64.to_le_bytes()), s.query(&3u64.to_le_bytes()));
    }
}
