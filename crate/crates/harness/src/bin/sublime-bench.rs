use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sublime_harness::runs::{self, geometric_checkpoints};
use sublime_harness::workload::{self, read_stream, rank_keys, write_ranks};
use sublime_harness::{CsvSink, Format, SketchKind, SketchSpec};

#[derive(Parser)]
#[command(name = "sublime-bench", version, about = "Streaming sketch experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Zipfian key stream.
    Gen {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a stream and report error over every distinct key.
    Accuracy(Run),
    /// Report error and memory at geometric stream lengths.
    Growth(Run),
    /// Insert a stream, then delete down to `--keep` items.
    Contract {
        #[command(flatten)]
        run: Run,
        #[arg(long, default_value_t = 10_000)]
        keep: usize,
    },
    /// Estimate the join size of two streams.
    Join {
        #[command(flatten)]
        run: Run,
        /// Second table; generated with `--stream-seed-b` when absent.
        #[arg(long)]
        input_b: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        stream_seed_b: u64,
    },
    /// Report memory at geometric stream lengths.
    Mem(Run),
}

#[derive(Args, Clone)]
struct Source {
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Tokens)]
    format: Format,
    #[arg(long, default_value_t = 1.0)]
    zipf: f64,
    #[arg(long, default_value_t = 100_000)]
    universe: u64,
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    stream_seed: u64,
}

impl Source {
    fn keys(&self) -> Result<Vec<Vec<u8>>> {
        match &self.input {
            Some(path) => read_stream(path, self.format),
            None => Ok(rank_keys(&workload::gen_zipf(self.zipf, self.universe, self.n, self.stream_seed)?)),
        }
    }
}

#[derive(Args, Clone)]
struct Run {
    #[arg(long, value_enum, default_value_t = SketchKind::Cms)]
    sketch: SketchKind,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 512)]
    chunk_bits: usize,
    #[arg(long)]
    c: Option<usize>,
    #[arg(long, default_value_t = 6)]
    s: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    mem_budget_bits: Option<u64>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    source: Source,
}

impl Run {
    fn spec(&self) -> SketchSpec {
        SketchSpec {
            kind: self.sketch,
            alpha: self.alpha,
            epsilon: self.epsilon,
            d: self.d,
            chunk_bits: self.chunk_bits,
            c: self.c,
            s: self.s,
            seed: self.seed,
            mem_budget_bits: self.mem_budget_bits,
        }
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
            None => Box::new(io::stdout().lock()),
        })
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen { source, out } => {
            let ranks = workload::gen_zipf(source.zipf, source.universe, source.n, source.stream_seed)?;
            write_ranks(&out, &ranks, source.format)?;
        }
        Command::Accuracy(run) => {
            let keys = run.source.keys()?;
            let (row, stats) = runs::run_accuracy(&keys, &run.spec())?;
            let mut sink = CsvSink::new(run.output()?)?;
            sink.row(&row)?;
            sink.finish()?;
            eprintln!("mean relative error {:.6}", stats.mean_relative);
        }
        Command::Growth(run) => measure(&run, true)?,
        Command::Mem(run) => measure(&run, false)?,
        Command::Contract { run, keep } => {
            let keys = run.source.keys()?;
            let rows = runs::run_contract(&keys, &run.spec(), keep)?;
            let mut sink = CsvSink::new(run.output()?)?;
            for row in &rows {
                sink.row(row)?;
            }
            sink.finish()?;
        }
        Command::Join { run, input_b, stream_seed_b } => {
            let a = run.source.keys()?;
            let b = Source { input: input_b, stream_seed: stream_seed_b, ..run.source.clone() }.keys()?;
            let r = runs::run_join(&a, &b, &run.spec())?;
            let mut out = csv::Writer::from_writer(run.output()?);
            out.write_record(["sketch", "estimate", "truth", "relative_error"])?;
            out.write_record([
                run.sketch.name().to_string(),
                r.estimate.to_string(),
                r.truth.to_string(),
                r.relative_error.to_string(),
            ])?;
            out.flush()?;
        }
    }
    Ok(())
}

fn measure(run: &Run, with_errors: bool) -> Result<()> {
    let keys = run.source.keys()?;
    let rows = runs::run_growth(&keys, &run.spec(), &geometric_checkpoints(keys.len() as u64), with_errors)?;
    let mut sink = CsvSink::new(run.output()?)?;
    for row in &rows {
        sink.row(row)?;
    }
    sink.finish()
}
