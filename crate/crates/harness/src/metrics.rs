//! Error statistics and CSV rows.

use std::io::Write;

use anyhow::Result;

pub const CSV_HEADER: [&str; 8] = ["n", "sketch", "config", "aae", "p99", "alloc_bits", "content_bits", "wall_ns"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub n: u64,
    pub sketch: String,
    pub config: String,
    /// Absent for memory-only measurements.
    pub aae: Option<f64>,
    pub p99: Option<f64>,
    pub alloc_bits: u64,
    pub content_bits: u64,
    pub wall_ns: u128,
}

/// Absolute-error summary over a set of queried keys.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorStats {
    pub aae: f64,
    pub p99: f64,
    pub mean_relative: f64,
}

impl ErrorStats {
    /// `pairs` holds `(estimate, truth)` per distinct key.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (i64, i64)>) -> Self {
        let mut abs = Vec::new();
        let mut rel = 0.0;
        for (est, truth) in pairs {
            let e = (est - truth).unsigned_abs() as f64;
            abs.push(e);
            if truth != 0 {
                rel += e / truth.unsigned_abs() as f64;
            }
        }
        if abs.is_empty() {
            return Self::default();
        }
        let n = abs.len() as f64;
        let aae = abs.iter().sum::<f64>() / n;
        abs.sort_by(f64::total_cmp);
        let rank = ((0.99 * n).ceil() as usize).clamp(1, abs.len());
        Self { aae, p99: abs[rank - 1], mean_relative: rel / n }
    }
}

pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(CSV_HEADER)?;
        Ok(Self { writer })
    }

    pub fn row(&mut self, row: &MetricsRow) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        self.writer.write_record([
            row.n.to_string(),
            row.sketch.clone(),
            row.config.clone(),
            opt(row.aae),
            opt(row.p99),
            row.alloc_bits.to_string(),
            row.content_bits.to_string(),
            row.wall_ns.to_string(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_of_exact_answers_are_zero() {
        let s = ErrorStats::from_pairs([(3, 3), (5, 5)]);
        assert_eq!(s, ErrorStats::default());
        assert_eq!(ErrorStats::from_pairs([]), ErrorStats::default());
    }

    #[test]
    fn p99_is_nearest_rank() {
        let pairs: Vec<(i64, i64)> = (0..200).map(|i| (i, 0)).collect();
        let s = ErrorStats::from_pairs(pairs);
        assert_eq!(s.p99, 197.0);
        assert_eq!(s.aae, 99.5);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        let mut sink = CsvSink::new(&mut buf).unwrap();
        sink.row(&MetricsRow {
            n: 10,
            sketch: "cms".into(),
            config: "d=3".into(),
            aae: Some(0.5),
            p99: None,
            alloc_bits: 512,
            content_bits: 300,
            wall_ns: 9,
        })
        .unwrap();
        sink.finish().unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "n,sketch,config,aae,p99,alloc_bits,content_bits,wall_ns\n10,cms,d=3,0.5,,512,300,9\n");
    }
}
