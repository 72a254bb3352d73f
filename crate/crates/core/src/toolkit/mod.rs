//! Operator tooling: log I/O, synthetic reading, replay, comparison and
//! latency benchmarking.

pub mod bench;
pub mod compare;
pub mod gazelog;
pub mod replay;
pub mod simulate;
