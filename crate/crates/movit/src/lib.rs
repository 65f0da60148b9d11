//! Memorizing vision transformer components.
//!
//! The crate provides a small ViT that can swap any transformer layer for
//! a memorizing attention block: attention keys and values observed during
//! training are cached per sample and head in an external bank, smoothed
//! with a temporal moving average, optionally distilled into a compact
//! prototype set by greedy MMD minimization, and read back at inference
//! through kNN retrieval fused with local attention by a learned gate.
//!
//! Start with the runnable programs under `examples/` — each one exercises
//! a single capability end to end — or the `movit` binary for the
//! train / eval / distill workflow.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod memory;
pub mod movit_block;
pub mod pal;
pub mod run;
pub mod tensor;
pub mod train;
pub mod vit;
mod wire;

pub use error::{MovitError, Result};
pub use wire::fnv1a64;
