//! Benchmark protocol, verification, metrics and file formats.

pub mod bench;
pub mod expr;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod profile;
pub mod spec;
pub mod verify;
