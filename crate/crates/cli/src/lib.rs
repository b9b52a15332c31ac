//! Experiment harness for the MONA optimizer library: config parsing and
//! validation, the experiment runner, the micro-benchmark, and the
//! verification check suite behind `mona check`.

pub mod bench;
pub mod checks;
pub mod config;
pub mod fixtures;
pub mod runner;
