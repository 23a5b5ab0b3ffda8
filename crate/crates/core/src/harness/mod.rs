//! Benchmark harness: synthetic data, metrics, file formats, and the
//! experiment drivers behind the CLI.

pub mod config;
pub mod experiments;
pub mod io;
pub mod metrics;
pub mod report;
pub mod synth;
