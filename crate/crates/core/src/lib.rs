//! Streaming frequency sketches whose memory tracks the stream.
//!
//! [`vale::CounterArray`] packs counters with variable-length encodings.
//! [`growth`] resizes counter arrays as the stream grows or shrinks, and
//! [`cms`], [`cs`] and [`mg`] build Count-Min, Count-Sketch and Misra-Gries
//! summaries on top.

pub mod bits;
pub mod cms;
pub mod cs;
pub mod error;
pub mod growth;
pub mod hashing;
pub mod mg;
pub mod tuning;
pub mod vale;
mod wire;

pub use error::{Error, Result};
pub use growth::SizeFunction;
pub use vale::{CounterArray, ValeConfig};
