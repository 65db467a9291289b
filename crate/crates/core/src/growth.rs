//! Resizing counter arrays as the stream grows and shrinks.
//!
//! A [`GrowthTracker`] follows a driver quantity (the stream length, or an
//! estimate of the second moment) and signals when the arrays should double
//! or halve. An [`ArraySet`] carries out those actions: expansion freezes
//! each array into a snapshot and concatenates it with a copy of itself;
//! contraction folds the two halves back together and subtracts the
//! snapshot taken at the matching expansion, which removes the duplicate
//! counts introduced by the copy.

use crate::error::{Error, Result};
use crate::vale::{CounterArray, ValeConfig};
use crate::wire::{Reader, Writer};

/// `W(x) = x^alpha / epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeFunction {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for SizeFunction {
    fn default() -> Self {
        Self { alpha: 0.5, epsilon: 1.0 }
    }
}

impl SizeFunction {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("epsilon {epsilon} must be positive")));
        }
        Ok(Self { alpha, epsilon })
    }

    pub fn linear(epsilon: f64) -> Result<Self> {
        Self::new(1.0, epsilon)
    }

    pub fn eval(&self, x: f64) -> f64 {
        x.max(0.0).powf(self.alpha) / self.epsilon
    }

    /// Smallest driver at which `W` reaches `w`; infinite when `alpha` is 0.
    pub fn threshold(&self, w: f64) -> f64 {
        if self.alpha == 0.0 {
            f64::INFINITY
        } else {
            (w * self.epsilon).powf(1.0 / self.alpha)
        }
    }

    /// Starting width: `ceil(1/epsilon)` chunks of `c` counters.
    pub fn initial_width(&self, c: usize) -> u64 {
        c as u64 * (1.0 / self.epsilon).ceil().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    None,
    Expand,
    Contract,
}

/// Expansion and contraction thresholds over a driver quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthTracker {
    size: SizeFunction,
    driver: f64,
    width: u64,
    up: f64,
    stack: Vec<f64>,
}

impl GrowthTracker {
    pub fn new(size: SizeFunction, width: u64) -> Self {
        Self { size, driver: 0.0, width, up: size.threshold(width as f64), stack: Vec::new() }
    }

    pub fn size(&self) -> SizeFunction {
        self.size
    }

    pub fn driver(&self) -> f64 {
        self.driver
    }

    pub fn width(&self) -> u64 {
        self.width
    }

    pub fn up_threshold(&self) -> f64 {
        self.up
    }

    pub fn down_threshold(&self) -> f64 {
        match self.stack.as_slice() {
            [] => f64::NEG_INFINITY,
            [top] => top / 2.0,
            [.., a, b] => (a + b) / 2.0,
        }
    }

    /// Thresholds at which past expansions fired, oldest first.
    pub fn expansions(&self) -> &[f64] {
        &self.stack
    }

    /// Moves the driver without acting on it.
    pub fn shift(&mut self, delta: f64) {
        self.driver += delta;
    }

    /// Replaces the driver.
    pub fn set_driver(&mut self, driver: f64) {
        self.driver = driver;
    }

    /// The action the current driver calls for.
    pub fn pending(&self) -> Action {
        if self.driver > self.up {
            Action::Expand
        } else if self.driver < self.down_threshold() {
            Action::Contract
        } else {
            Action::None
        }
    }

    /// Updates width and thresholds for an action that was carried out.
    pub fn commit(&mut self, action: Action) {
        match action {
            Action::None => {}
            Action::Expand => {
                self.stack.push(self.up);
                self.width *= 2;
                self.up = self.size.threshold(self.width as f64);
            }
            Action::Contract => {
                self.up = self.stack.pop().expect("contraction without a prior expansion");
                self.width /= 2;
            }
        }
    }

    /// Moves the driver by `delta` and commits at most one action.
    pub fn note_update(&mut self, delta: f64) -> Action {
        self.shift(delta);
        let action = self.pending();
        self.commit(action);
        action
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.f64(self.size.alpha);
        w.f64(self.size.epsilon);
        w.f64(self.driver);
        w.u64(self.width);
        w.f64(self.up);
        w.u64(self.stack.len() as u64);
        for &t in &self.stack {
            w.f64(t);
        }
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let size = SizeFunction::new(r.f64()?, r.f64()?)?;
        let driver = r.f64()?;
        let width = r.u64()?;
        let up = r.f64()?;
        let n = r.u64()?;
        if n > 64 {
            return Err(Error::Format(format!("expansion stack of depth {n}")));
        }
        let stack = (0..n).map(|_| r.f64()).collect::<Result<_>>()?;
        Ok(Self { size, driver, width, up, stack })
    }
}

/// A frozen counter array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    len: u64,
    allocated_bits: u64,
    bytes: Vec<u8>,
}

impl Snapshot {
    pub fn freeze(arr: &CounterArray) -> Self {
        Self { len: arr.len(), allocated_bits: arr.footprint().allocated_bits, bytes: arr.to_bytes() }
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Allocation of the array when it was frozen.
    pub fn allocated_bits(&self) -> u64 {
        self.allocated_bits
    }

    pub fn thaw(&self) -> Result<CounterArray> {
        CounterArray::from_bytes(&self.bytes)
    }
}

/// `new[i] = cur[i] + cur[i + w] - snap[i]` over `i < w = snap.len()`.
pub fn contract_values(cur: &[i64], snap: &[i64], signed: bool) -> Result<Vec<i64>> {
    let w = snap.len();
    if cur.len() != 2 * w {
        return Err(Error::Integrity(format!("cannot fold {} counters onto a snapshot of {w}", cur.len())));
    }
    let mut out = Vec::with_capacity(w);
    for i in 0..w {
        let v = cur[i] + cur[i + w] - snap[i];
        if v < 0 && !signed {
            return Err(Error::Integrity(format!("counter {i} would become {v} after contraction")));
        }
        out.push(v);
    }
    Ok(out)
}

/// `d` equally sized counter arrays with their snapshot chains.
#[derive(Debug, Clone)]
pub struct ArraySet {
    arrays: Vec<CounterArray>,
    chains: Vec<Vec<Snapshot>>,
    retune: bool,
}

impl ArraySet {
    pub fn new(d: usize, width: u64, config: ValeConfig, retune: bool) -> Result<Self> {
        let arrays = (0..d).map(|_| CounterArray::new(width, config)).collect::<Result<Vec<_>>>()?;
        Ok(Self { arrays, chains: vec![Vec::new(); d], retune })
    }

    pub fn arrays(&self) -> &[CounterArray] {
        &self.arrays
    }

    pub fn array_mut(&mut self, j: usize) -> &mut CounterArray {
        &mut self.arrays[j]
    }

    pub fn chains(&self) -> &[Vec<Snapshot>] {
        &self.chains
    }

    pub fn width(&self) -> u64 {
        self.arrays[0].len()
    }

    pub fn retunes(&self) -> bool {
        self.retune
    }

    /// Runs the retune check on every array.
    pub fn maybe_retune(&mut self) -> Result<()> {
        if self.retune {
            for arr in &mut self.arrays {
                arr.maybe_retune()?;
            }
        }
        Ok(())
    }

    pub fn expand(&mut self) -> Result<()> {
        for (arr, chain) in self.arrays.iter_mut().zip(&mut self.chains) {
            chain.push(Snapshot::freeze(arr));
            *arr = arr.doubled()?;
        }
        Ok(())
    }

    pub fn contract(&mut self) -> Result<()> {
        for (arr, chain) in self.arrays.iter_mut().zip(&mut self.chains) {
            let snap = chain.last().ok_or_else(|| Error::Integrity("no snapshot to contract onto".into()))?;
            let config = arr.config();
            let values = contract_values(&arr.values(), &snap.thaw()?.values(), config.signed)?;
            let backend = arr.backend();
            *arr = CounterArray::build(&values, config)?;
            arr.set_backend(backend);
            if self.retune {
                arr.retune_now()?;
            }
            chain.pop();
        }
        Ok(())
    }

    pub fn perform(&mut self, action: Action) -> Result<()> {
        match action {
            Action::None => Ok(()),
            Action::Expand => self.expand(),
            Action::Contract => self.contract(),
        }
    }

    pub fn live_allocated_bits(&self) -> u64 {
        self.arrays.iter().map(|a| a.footprint().allocated_bits).sum()
    }

    pub fn snapshot_bits(&self) -> u64 {
        self.chains.iter().flatten().map(Snapshot::allocated_bits).sum()
    }

    pub fn content_bits(&self) -> u64 {
        self.arrays.iter().map(|a| a.footprint().content_bits).sum()
    }

    pub(crate) fn write(&self, w: &mut Writer) {
        w.u8(self.arrays.len() as u8);
        w.u8(self.retune as u8);
        for (arr, chain) in self.arrays.iter().zip(&self.chains) {
            w.blob(&arr.to_bytes());
            w.u64(chain.len() as u64);
            for snap in chain {
                w.u64(snap.allocated_bits);
                w.blob(&snap.bytes);
            }
        }
    }

    pub(crate) fn read(r: &mut Reader) -> Result<Self> {
        let d = r.u8()? as usize;
        if d == 0 || d > crate::hashing::MAX_ARRAYS {
            return Err(Error::Format(format!("array count {d}")));
        }
        let retune = r.u8()? != 0;
        let mut arrays = Vec::with_capacity(d);
        let mut chains = Vec::with_capacity(d);
        for _ in 0..d {
            let arr = CounterArray::from_bytes(r.blob()?)?;
            let n = r.u64()?;
            if n > 64 {
                return Err(Error::Format(format!("snapshot chain of length {n}")));
            }
            let mut chain = Vec::new();
            for _ in 0..n {
                let allocated_bits = r.u64()?;
                let bytes = r.blob()?.to_vec();
                let len = CounterArray::from_bytes(&bytes)?.len();
                chain.push(Snapshot { len, allocated_bits, bytes });
            }
            arrays.push(arr);
            chains.push(chain);
        }
        if arrays.iter().any(|a| a.len() != arrays[0].len()) {
            return Err(Error::Format("arrays disagree on width".into()));
        }
        Ok(Self { arrays, chains, retune })
    }
}
