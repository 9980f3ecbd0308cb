//! Streaming reasoning segmentation: traces in, per-frame masks out.
//!
//! [`engine::Engine`] ties the pieces together. A [`planner::ExecutionPlan`]
//! picks providers and programs, [`twin::TwinState`] tracks objects over a
//! sliding window, [`dsl`] evaluates the programs and [`pipeline`] smooths
//! the resulting masks.

pub mod chat;
pub mod dsl;
pub mod mask;
pub mod perception;
pub mod twin;
pub mod pipeline;
pub mod evaluation;
pub mod planner;
pub mod config;
pub mod engine;
