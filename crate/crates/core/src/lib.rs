//! Trace-driven simulation of an STT-RAM last-level cache that suffers from
//! read-disturbance errors. Policies range from restore-after-read baselines
//! to compression-based duplication of narrow blocks.

pub mod accounting;
pub mod bdi;
pub mod cache;
pub mod policy;
pub mod sim;
pub mod trace;
