//! Analytical roofline simulator for LLM inference serving.
//!
//! Costs every layer of a decoder block as a roofline on the busiest
//! accelerator, composes blocks into decode and prefill latencies under
//! tensor, data and expert parallelism, and derives the batch-size limits set
//! by the ridge point, memory capacity and a latency target.

pub mod comm;
pub mod config;
pub mod engine;
pub mod error;
pub mod hw;
pub mod layer_cost;
pub mod limits;
pub mod model;
pub mod oracle;
pub mod parallelism;
pub mod report;

pub use error::{Result, SimError};
