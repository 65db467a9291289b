//! Workloads, measurements and CSV output for the sketches in `sublime`.

pub mod metrics;
pub mod runs;
pub mod workload;

pub use metrics::{CsvSink, ErrorStats, MetricsRow, CSV_HEADER};
pub use runs::{AnySketch, SketchKind, SketchSpec};
pub use workload::{gen_zipf, Format};
