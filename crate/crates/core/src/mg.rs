//! Misra-Gries summary with VALE counters and smoothly growing capacity.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::growth::SizeFunction;
use crate::vale::{CounterArray, ValeConfig};
use crate::wire::{Reader, Writer};

const MAGIC: &[u8; 4] = b"SMGS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgConfig {
    pub size: SizeFunction,
    pub initial_slots: u64,
    pub vale: ValeConfig,
    pub retune: bool,
}

impl Default for MgConfig {
    fn default() -> Self {
        Self { size: SizeFunction::linear(2.0).expect("valid"), initial_slots: 1, vale: ValeConfig::default(), retune: true }
    }
}

impl MgConfig {
    /// A summary that never grows past `slots`.
    pub fn fixed(slots: u64) -> Self {
        Self {
            size: SizeFunction::new(0.0, 1.0 / slots as f64).expect("positive slot count"),
            initial_slots: slots,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SublimeMg {
    config: MgConfig,
    n: u64,
    index: HashMap<Box<[u8]>, u64>,
    slots: Vec<Option<Box<[u8]>>>,
    free: Vec<u64>,
    counters: CounterArray,
}

impl SublimeMg {
    pub fn new(config: MgConfig) -> Result<Self> {
        if config.initial_slots == 0 {
            return Err(Error::InvalidConfig("at least one slot required".into()));
        }
        if config.vale.signed {
            return Err(Error::InvalidConfig("misra-gries counters are unsigned".into()));
        }
        let w = config.initial_slots;
        Ok(Self {
            n: 0,
            index: HashMap::new(),
            slots: vec![None; w as usize],
            free: (0..w).rev().collect(),
            counters: CounterArray::new(w, config.vale)?,
            config,
        })
    }

    pub fn capacity(&self) -> u64 {
        self.slots.len() as u64
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn tracked(&self) -> usize {
        self.index.len()
    }

    pub fn counters(&self) -> &CounterArray {
        &self.counters
    }

    fn target_capacity(&self, n: u64) -> u64 {
        let w = self.config.size.eval(n as f64).ceil();
        if w.is_finite() {
            (w as u64).max(self.config.initial_slots)
        } else {
            self.config.initial_slots
        }
    }

    fn grow(&mut self, capacity: u64) -> Result<()> {
        let old = self.capacity();
        if capacity <= old {
            return Ok(());
        }
        self.counters.grow_to(capacity)?;
        self.slots.resize(capacity as usize, None);
        self.free.extend((old..capacity).rev());
        Ok(())
    }

    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        self.grow(self.target_capacity(self.n + 1))?;
        self.n += 1;
        if let Some(&slot) = self.index.get(key) {
            self.counters.add(slot, 1)?;
        } else if let Some(slot) = self.free.pop() {
            self.counters.add(slot, 1)?;
            self.slots[slot as usize] = Some(key.into());
            self.index.insert(key.into(), slot);
        } else {
            self.decrement_all()?;
        }
        if self.config.retune {
            self.counters.maybe_retune()?;
        }
        Ok(())
    }

    fn decrement_all(&mut self) -> Result<()> {
        for slot in 0..self.capacity() {
            if self.slots[slot as usize].is_none() {
                continue;
            }
            self.counters.add(slot, -1)?;
            if self.counters.is_zero(slot)? {
                let key = self.slots[slot as usize].take().expect("occupied");
                self.index.remove(&key);
                self.free.push(slot);
            }
        }
        Ok(())
    }

    pub fn query(&self, key: &[u8]) -> i64 {
        self.index.get(key).map_or(0, |&slot| self.counters.read(slot).expect("slot below capacity"))
    }

    /// Tracked keys with their counts.
    pub fn entries(&self) -> HashMap<Vec<u8>, i64> {
        self.index.iter().map(|(k, &slot)| (k.to_vec(), self.counters.read(slot).expect("slot below capacity"))).collect()
    }

    pub fn allocated_bits(&self) -> u64 {
        self.counters.footprint().allocated_bits
    }

    pub fn save(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(MAGIC);
        w.u16(VERSION);
        w.f64(self.config.size.alpha);
        w.f64(self.config.size.epsilon);
        w.u64(self.config.initial_slots);
        w.u8(self.config.retune as u8);
        w.u64(self.n);
        w.u64(self.slots.len() as u64);
        for slot in &self.slots {
            match slot {
                Some(k) => {
                    w.u8(1);
                    w.blob(k);
                }
                None => w.u8(0),
            }
        }
        w.u64(self.free.len() as u64);
        for &f in &self.free {
            w.u64(f);
        }
        w.blob(&self.counters.to_bytes());
        w.finish()
    }

    pub fn load(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        if r.bytes(4)? != MAGIC {
            return Err(Error::Format("not a misra-gries summary".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let size = SizeFunction::new(r.f64()?, r.f64()?)?;
        let initial_slots = r.u64()?;
        let retune = r.u8()? != 0;
        let n = r.u64()?;
        let cap = r.u64()?;
        if cap > r.remaining() as u64 {
            return Err(Error::Format(format!("{cap} slots exceed payload")));
        }
        let mut slots = Vec::with_capacity(cap as usize);
        let mut index = HashMap::new();
        for s in 0..cap {
            match r.u8()? {
                0 => slots.push(None),
                1 => {
                    let key: Box<[u8]> = r.blob()?.into();
                    if index.insert(key.clone(), s).is_some() {
                        return Err(Error::Format("duplicate key".into()));
                    }
                    slots.push(Some(key));
                }
                t => return Err(Error::Format(format!("bad slot tag {t}"))),
            }
        }
        let nfree = r.u64()?;
        if nfree > cap {
            return Err(Error::Format("free list longer than capacity".into()));
        }
        let free = (0..nfree).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let counters = CounterArray::from_bytes(r.blob()?)?;
        r.expect_end()?;
        if counters.len() != cap || free.iter().any(|&f| f >= cap || slots[f as usize].is_some()) {
            return Err(Error::Format("slot table inconsistent with counters".into()));
        }
        for (s, slot) in slots.iter().enumerate() {
            if slot.is_some() == counters.is_zero(s as u64)? {
                return Err(Error::Format(format!("slot {s} occupancy disagrees with its counter")));
            }
        }
        let config = MgConfig { size, initial_slots, vale: counters.config(), retune };
        Ok(Self { config, n, index, slots, free, counters })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_summary_decrements_and_evicts() {
        let mut mg = SublimeMg::new(MgConfig::fixed(3)).unwrap();
        for k in [b"a", b"a", b"b", b"c", b"c", b"c"] {
            mg.insert(k).unwrap();
        }
        assert_eq!(mg.query(b"a"), 2);
        mg.insert(b"d").unwrap();
        assert_eq!(mg.query(b"a"), 1);
        assert_eq!(mg.query(b"b"), 0);
        assert_eq!(mg.query(b"c"), 2);
        assert_eq!(mg.query(b"d"), 0);
        assert_eq!(mg.tracked(), 2);
        mg.insert(b"e").unwrap();
        assert_eq!(mg.query(b"e"), 1);
    }

    #[test]
    fn tracked_key_reports_count() {
        let mut mg = SublimeMg::new(MgConfig::fixed(4)).unwrap();
        for _ in 0..4 {
            mg.insert(b"q").unwrap();
        }
        assert_eq!(mg.query(b"q"), 4);
        assert_eq!(mg.query(b"z"), 0);
    }

    #[test]
    fn capacity_follows_size_function() {
        let mut mg = SublimeMg::new(MgConfig::default()).unwrap();
        for i in 0u64..1000 {
            mg.insert(&i.to_le_bytes()).unwrap();
            assert_eq!(mg.capacity(), ((i + 1) as f64 / 2.0).ceil().max(1.0) as u64);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let mut mg = SublimeMg::new(MgConfig::fixed(8)).unwrap();
        for i in 0u64..500 {
            mg.insert(&(i * i % 13).to_le_bytes()).unwrap();
        }
        let bytes = mg.save();
        let back = SublimeMg::load(&bytes).unwrap();
        assert_eq!(back.entries(), mg.entries());
        assert_eq!(back.save(), bytes);
    }
}
