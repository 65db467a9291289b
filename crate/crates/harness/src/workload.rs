//! Key streams: Zipfian generation and file ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest universe whose CDF is held in memory.
pub const MAX_UNIVERSE: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    /// Newline-delimited UTF-8 tokens.
    Tokens,
    /// Raw little-endian 64-bit records.
    U64le,
}

/// Inverse-CDF sampler over ranks `1..=u` with `P(r) ∝ r^-z`.
#[derive(Debug, Clone)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(z: f64, u: u64) -> Result<Self> {
        if u == 0 || u > MAX_UNIVERSE {
            bail!("universe {u} outside [1, {MAX_UNIVERSE}]");
        }
        if !(z >= 0.0 && z.is_finite()) {
            bail!("zipf exponent {z} must be non-negative");
        }
        let mut cdf = Vec::with_capacity(u as usize);
        let mut total = 0.0;
        for r in 1..=u {
            total += (r as f64).powf(-z);
            cdf.push(total);
        }
        for p in &mut cdf {
            *p /= total;
        }
        Ok(Self { cdf })
    }

    /// A rank in `1..=u`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        let x: f64 = rng.gen();
        let i = self.cdf.partition_point(|&p| p <= x);
        i.min(self.cdf.len() - 1) as u64 + 1
    }
}

/// `n` i.i.d. Zipfian ranks.
pub fn gen_zipf(z: f64, u: u64, n: usize, seed: u64) -> Result<Vec<u64>> {
    let zipf = Zipf::new(z, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| zipf.sample(&mut rng)).collect())
}

/// Keys as byte strings: ranks use their little-endian encoding.
pub fn rank_keys(ranks: &[u64]) -> Vec<Vec<u8>> {
    ranks.iter().map(|r| r.to_le_bytes().to_vec()).collect()
}

pub fn read_stream(path: &Path, format: Format) -> Result<Vec<Vec<u8>>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut keys = Vec::new();
    match format {
        Format::Tokens => {
            let mut offset = 0u64;
            let mut line = Vec::new();
            loop {
                line.clear();
                let n = reader
                    .read_until(b'\n', &mut line)
                    .with_context(|| format!("reading {} at byte {offset}", path.display()))?;
                if n == 0 {
                    break;
                }
                let token = line.strip_suffix(b"\n").unwrap_or(&line);
                let token = token.strip_suffix(b"\r").unwrap_or(token);
                if std::str::from_utf8(token).is_err() {
                    bail!("{}: invalid UTF-8 token at byte {offset}", path.display());
                }
                if !token.is_empty() {
                    keys.push(token.to_vec());
                }
                offset += n as u64;
            }
        }
        Format::U64le => {
            let mut data = Vec::new();
            reader.read_to_end(&mut data).with_context(|| format!("reading {}", path.display()))?;
            if data.len() % 8 != 0 {
                bail!(
                    "{}: truncated record at byte {} (file is {} bytes)",
                    path.display(),
                    data.len() / 8 * 8,
                    data.len()
                );
            }
            keys.extend(data.chunks_exact(8).map(<[u8]>::to_vec));
        }
    }
    Ok(keys)
}

pub fn write_ranks(path: &Path, ranks: &[u64], format: Format) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut out = std::io::BufWriter::new(file);
    for r in ranks {
        match format {
            Format::Tokens => writeln!(out, "{r}")?,
            Format::U64le => out.write_all(&r.to_le_bytes())?,
        }
    }
    out.flush()?;
    Ok(())
}
