//! Harness behind the `loadbench` binary: run configuration, the zero-shot
//! and transfer evaluation protocols, run comparison, and report emission.

pub mod compare;
pub mod config;
pub mod ingest_cmd;
pub mod report;
pub mod runner;
pub mod runfiles;
