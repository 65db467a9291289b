//! Sketch construction from flags and the measurement loops.

use std::collections::HashMap;
use std::time::Instant;

use anyhow::{bail, Result};
use sublime::cms::{CmsConfig, FixedCms, SublimeCms};
use sublime::cs::{CsConfig, FixedCs, SublimeCs};
use sublime::mg::{MgConfig, SublimeMg};
use sublime::{SizeFunction, ValeConfig};

use crate::metrics::{ErrorStats, MetricsRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SketchKind {
    Cms,
    Cs,
    Mg,
    FixedCms,
    FixedCs,
}

impl SketchKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cms => "cms",
            Self::Cs => "cs",
            Self::Mg => "mg",
            Self::FixedCms => "fixed-cms",
            Self::FixedCs => "fixed-cs",
        }
    }

    fn signed(self) -> bool {
        matches!(self, Self::Cs | Self::FixedCs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchSpec {
    pub kind: SketchKind,
    pub alpha: f64,
    pub epsilon: f64,
    pub d: usize,
    pub chunk_bits: usize,
    pub c: Option<usize>,
    pub s: usize,
    pub seed: u64,
    /// Sizes the fixed baselines; growing sketches ignore it.
    pub mem_budget_bits: Option<u64>,
}

impl SketchSpec {
    pub fn new(kind: SketchKind) -> Self {
        Self {
            kind,
            alpha: 0.5,
            epsilon: 1.0,
            d: 3,
            chunk_bits: 512,
            c: None,
            s: 6,
            seed: 0,
            mem_budget_bits: None,
        }
    }

    pub fn vale(&self) -> Result<ValeConfig> {
        let signed = self.kind.signed();
        let c = self.c.unwrap_or_else(|| ValeConfig::max_counters(self.chunk_bits, self.s, signed).min(64));
        Ok(ValeConfig::new(self.chunk_bits, c, self.s, signed)?)
    }

    pub fn size(&self) -> Result<SizeFunction> {
        Ok(SizeFunction::new(self.alpha, self.epsilon)?)
    }

    /// Width of a fixed baseline.
    pub fn fixed_width(&self) -> Result<u64> {
        Ok(match self.mem_budget_bits {
            Some(bits) => (bits / (32 * self.d as u64)).max(1),
            None => self.size()?.initial_width(self.vale()?.counters_per_chunk),
        })
    }

    /// Short description without commas.
    pub fn digest(&self) -> String {
        match self.kind {
            SketchKind::FixedCms | SketchKind::FixedCs => {
                format!("d={};w={};seed={}", self.d, self.fixed_width().unwrap_or(0), self.seed)
            }
            SketchKind::Mg => format!("alpha={};eps={};B={};s={}", self.alpha, self.epsilon, self.chunk_bits, self.s),
            _ => format!(
                "d={};alpha={};eps={};B={};c={};s={};seed={}",
                self.d,
                self.alpha,
                self.epsilon,
                self.chunk_bits,
                self.vale().map(|v| v.counters_per_chunk).unwrap_or(0),
                self.s,
                self.seed
            ),
        }
    }

    pub fn build(&self) -> Result<AnySketch> {
        Ok(match self.kind {
            SketchKind::Cms => AnySketch::Cms(SublimeCms::new(CmsConfig {
                d: self.d,
                size: self.size()?,
                vale: self.vale()?,
                seed: self.seed,
                initial_width: None,
                retune: true,
            })?),
            SketchKind::Cs => AnySketch::Cs(SublimeCs::new(CsConfig {
                d: self.d,
                size: self.size()?,
                vale: self.vale()?,
                seed: self.seed,
                initial_width: None,
                retune: true,
            })?),
            SketchKind::Mg => AnySketch::Mg(SublimeMg::new(MgConfig {
                size: self.size()?,
                initial_slots: 1,
                vale: self.vale()?,
                retune: true,
            })?),
            SketchKind::FixedCms => AnySketch::FixedCms(FixedCms::new(self.d, self.fixed_width()?, self.seed)?),
            SketchKind::FixedCs => AnySketch::FixedCs(FixedCs::new(self.d, self.fixed_width()?, self.seed)?),
        })
    }
}

/// Any of the supported sketches behind one interface.
#[derive(Debug, Clone)]
pub enum AnySketch {
    Cms(SublimeCms),
    Cs(SublimeCs),
    Mg(SublimeMg),
    FixedCms(FixedCms),
    FixedCs(FixedCs),
}

impl AnySketch {
    pub fn insert(&mut self, key: &[u8]) -> Result<()> {
        match self {
            Self::Cms(s) => s.insert(key)?,
            Self::Cs(s) => s.insert(key)?,
            Self::Mg(s) => s.insert(key)?,
            Self::FixedCms(s) => s.insert(key)?,
            Self::FixedCs(s) => s.insert(key)?,
        }
        Ok(())
    }

    pub fn delete(&mut self, key: &[u8]) -> Result<()> {
        match self {
            Self::Cms(s) => s.delete(key)?,
            Self::Cs(s) => s.delete(key)?,
            Self::Mg(_) => bail!("misra-gries summaries do not support deletions"),
            Self::FixedCms(s) => s.delete(key)?,
            Self::FixedCs(s) => s.delete(key)?,
        }
        Ok(())
    }

    pub fn query(&self, key: &[u8]) -> i64 {
        match self {
            Self::Cms(s) => s.query(key),
            Self::Cs(s) => s.query(key),
            Self::Mg(s) => s.query(key),
            Self::FixedCms(s) => s.query(key),
            Self::FixedCs(s) => s.query(key),
        }
    }

    /// Allocated bits including snapshots.
    pub fn alloc_bits(&self) -> u64 {
        match self {
            Self::Cms(s) => s.memory().allocated_bits(),
            Self::Cs(s) => s.memory().allocated_bits(),
            Self::Mg(s) => s.allocated_bits(),
            Self::FixedCms(s) => s.allocated_bits(),
            Self::FixedCs(s) => s.allocated_bits(),
        }
    }

    pub fn content_bits(&self) -> u64 {
        match self {
            Self::Cms(s) => s.memory().content_bits,
            Self::Cs(s) => s.memory().content_bits,
            Self::Mg(s) => s.counters().footprint().content_bits,
            Self::FixedCms(s) => s.allocated_bits(),
            Self::FixedCs(s) => s.allocated_bits(),
        }
    }
}

/// Exact per-key counts.
pub type Truth = HashMap<Vec<u8>, i64>;

pub fn truth_of(keys: &[Vec<u8>]) -> Truth {
    let mut t = Truth::new();
    for k in keys {
        *t.entry(k.clone()).or_default() += 1;
    }
    t
}

pub fn error_stats(sketch: &AnySketch, truth: &Truth) -> ErrorStats {
    ErrorStats::from_pairs(truth.iter().filter(|(_, &f)| f > 0).map(|(k, &f)| (sketch.query(k), f)))
}

fn row(spec: &SketchSpec, n: u64, sketch: &AnySketch, stats: Option<ErrorStats>, wall_ns: u128) -> MetricsRow {
    MetricsRow {
        n,
        sketch: spec.kind.name().into(),
        config: spec.digest(),
        aae: stats.map(|s| s.aae),
        p99: stats.map(|s| s.p99),
        alloc_bits: sketch.alloc_bits(),
        content_bits: sketch.content_bits(),
        wall_ns,
    }
}

/// Ingests `keys` and queries every distinct key once.
pub fn run_accuracy(keys: &[Vec<u8>], spec: &SketchSpec) -> Result<(MetricsRow, ErrorStats)> {
    let mut sketch = spec.build()?;
    let start = Instant::now();
    for k in keys {
        sketch.insert(k)?;
    }
    let wall = start.elapsed().as_nanos();
    let stats = error_stats(&sketch, &truth_of(keys));
    Ok((row(spec, keys.len() as u64, &sketch, Some(stats), wall), stats))
}

/// Powers of two from 1024 up to `n`, ending with `n`.
pub fn geometric_checkpoints(n: u64) -> Vec<u64> {
    let mut out: Vec<u64> = (10..64).map(|k| 1u64 << k).take_while(|&c| c < n).collect();
    if n > 0 {
        out.push(n);
    }
    out
}

/// Rows at each checkpoint; `with_errors` adds error statistics.
pub fn run_growth(keys: &[Vec<u8>], spec: &SketchSpec, checkpoints: &[u64], with_errors: bool) -> Result<Vec<MetricsRow>> {
    let mut sketch = spec.build()?;
    let mut truth = Truth::new();
    let mut rows = Vec::new();
    let mut wall = 0u128;
    let mut next = checkpoints.iter().peekable();
    for (i, k) in keys.iter().enumerate() {
        let start = Instant::now();
        sketch.insert(k)?;
        wall += start.elapsed().as_nanos();
        *truth.entry(k.clone()).or_default() += 1;
        let n = i as u64 + 1;
        while next.peek().is_some_and(|&&c| c <= n) {
            next.next();
            let stats = with_errors.then(|| error_stats(&sketch, &truth));
            rows.push(row(spec, n, &sketch, stats, wall));
        }
    }
    Ok(rows)
}

/// Inserts every key, then deletes from the front of the stream until
/// `keep` items remain. Rows are taken at the peak and after each halving.
pub fn run_contract(keys: &[Vec<u8>], spec: &SketchSpec, keep: usize) -> Result<Vec<MetricsRow>> {
    let mut sketch = spec.build()?;
    let mut truth = Truth::new();
    let start = Instant::now();
    for k in keys {
        sketch.insert(k)?;
        *truth.entry(k.clone()).or_default() += 1;
    }
    let mut rows = vec![row(spec, keys.len() as u64, &sketch, Some(error_stats(&sketch, &truth)), start.elapsed().as_nanos())];
    let keep = keep.min(keys.len());
    let mut mark = keys.len() / 2;
    for (i, k) in keys[..keys.len() - keep].iter().enumerate() {
        sketch.delete(k)?;
        *truth.get_mut(k).expect("inserted") -= 1;
        let remaining = keys.len() - i - 1;
        if remaining <= mark.max(keep) {
            rows.push(row(spec, remaining as u64, &sketch, Some(error_stats(&sketch, &truth)), start.elapsed().as_nanos()));
            mark /= 2;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JoinResult {
    pub estimate: f64,
    pub truth: f64,
    pub relative_error: f64,
}

/// Estimates `sum f_A(x) f_B(x)` over the distinct keys of `a` with one
/// sketch per table; table B's sketch uses the next seed.
pub fn run_join(a: &[Vec<u8>], b: &[Vec<u8>], spec: &SketchSpec) -> Result<JoinResult> {
    let mut sa = spec.build()?;
    let mut sb = SketchSpec { seed: spec.seed.wrapping_add(1), ..*spec }.build()?;
    for k in a {
        sa.insert(k)?;
    }
    for k in b {
        sb.insert(k)?;
    }
    let ta = truth_of(a);
    let tb = truth_of(b);
    let mut estimate = 0.0;
    let mut truth = 0.0;
    for (k, &fa) in &ta {
        estimate += sa.query(k) as f64 * sb.query(k) as f64;
        truth += fa as f64 * tb.get(k).copied().unwrap_or(0) as f64;
    }
    let relative_error = if truth == 0.0 { estimate.abs() } else { (estimate - truth).abs() / truth };
    Ok(JoinResult { estimate, truth, relative_error })
}
