//! Erasure-coded update engine and trace-driven cluster simulator.

pub mod codec;

/// Granularity of dirty tracking, sparse block storage and cost charging.
pub const PAGE_SIZE: u64 = 4096;
pub mod extent;
pub mod log_pool;
pub mod cluster;
pub mod config;
pub mod strategy;
pub mod trace;
pub mod replay;
pub mod report;
