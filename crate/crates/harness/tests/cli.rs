use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sublime_harness::CSV_HEADER;

fn bench(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_sublime-bench")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), CSV_HEADER);
    reader.records().map(Result::unwrap).collect()
}

const SMALL: [&str; 6] = ["--n", "20000", "--universe", "2000", "--zipf", "1.1"];

#[test]
fn gen_then_accuracy_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("stream.txt");
    let csv = dir.path().join("acc.csv");
    let mut args = vec!["gen", "--out", stream.to_str().unwrap()];
    args.extend(SMALL);
    bench(&args);
    assert_eq!(fs::read_to_string(&stream).unwrap().lines().count(), 20_000);

    let out = bench(&["accuracy", "--input", stream.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    let rows = rows(&csv);
    assert_eq!(rows.len(), 1);
    assert_eq!(&rows[0][0], "20000");
    assert_eq!(&rows[0][1], "cms");
    assert!(rows[0][3].parse::<f64>().unwrap() >= 0.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mean relative error"));
}

#[test]
fn binary_stream_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("stream.bin");
    let mut args = vec!["gen", "--format", "u64le", "--out", stream.to_str().unwrap()];
    args.extend(SMALL);
    bench(&args);
    assert_eq!(fs::metadata(&stream).unwrap().len(), 8 * 20_000);
    let out = bench(&["accuracy", "--sketch", "mg", "--input", stream.to_str().unwrap(), "--format", "u64le"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("20000,mg,"));
}

#[test]
fn growth_output_is_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let mut args = vec!["growth", "--sketch", "cs", "--out", path.to_str().unwrap()];
        args.extend(SMALL);
        bench(&args);
        rows(&path).into_iter().map(|r| r.iter().take(7).map(String::from).collect::<Vec<_>>()).collect::<Vec<_>>()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let ns: Vec<u64> = a.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(ns.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*ns.last().unwrap(), 20_000);
}

#[test]
fn mem_rows_have_no_error_columns() {
    let mut args = vec!["mem", "--sketch", "fixed-cms", "--mem-budget-bits", "96000"];
    args.extend(SMALL);
    let out = bench(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[3], "");
        assert_eq!(cols[4], "");
        assert_eq!(cols[5], "96000");
    }
}

#[test]
fn contract_ends_with_kept_items() {
    let mut args = vec!["contract", "--keep", "1000"];
    args.extend(SMALL);
    let out = bench(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("1000,cms,"), "{last}");
}

#[test]
fn join_reports_estimate_and_truth() {
    let mut args = vec!["join", "--sketch", "cms"];
    args.extend(SMALL);
    let out = bench(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "sketch,estimate,truth,relative_error");
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let est: f64 = cols[1].parse().unwrap();
    let truth: f64 = cols[2].parse().unwrap();
    assert!(est >= truth);
}

#[test]
fn malformed_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let stream = dir.path().join("bad.bin");
    fs::write(&stream, [1u8, 2, 3]).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_sublime-bench"))
        .args(["accuracy", "--input", stream.to_str().unwrap(), "--format", "u64le"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
