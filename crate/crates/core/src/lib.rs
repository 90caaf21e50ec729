//! Trace-driven simulation of LEO edge service placement.
//!
//! Pipeline: [`orbits`] propagates a Walker shell, [`topology`] turns
//! positions into routed client latencies, [`traces`] records them per
//! second, [`strategies`] picks serving satellites, [`lifecycle`] expands
//! hand-offs into proactive migration timelines, and [`report`] extracts
//! metrics and threshold sweeps.

pub mod config;
pub mod error;
pub mod graph;
pub mod lifecycle;
pub mod orbits;
pub mod report;
pub mod scenarios;
pub mod strategies;
pub mod topology;
pub mod traces;

pub use error::{Error, Result};
