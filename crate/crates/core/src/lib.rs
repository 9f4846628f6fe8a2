//! Pseudo-labeling by consensus clustering of part-based embeddings.
//!
//! The crate implements the full desk-scale pipeline: a deterministic
//! synthetic identity generator ([`synth`]), agglomerative clustering with
//! Ward / average / single linkage ([`cluster`]), co-association consensus
//! of per-part partitions ([`consensus`]), a metric-learning loss stack with
//! analytic gradients ([`losses`]), a small differentiable part embedder
//! trained with Adam ([`embedder`]), the pseudo-labeling outer loop
//! ([`pseudolabel`]), and retrieval / clustering evaluation ([`metrics`]).
//!
//! The crate is `no_std`-compatible (with `alloc`); all floating-point
//! transcendentals go through `libm` so results are identical across
//! platforms and feature sets. Everything is deterministic given the seeds
//! carried in the various config structs.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod cluster;
pub mod consensus;
pub mod embedder;
pub mod losses;
mod math;
pub mod metrics;
pub mod optim;
pub mod pseudolabel;
pub mod rng;
pub mod synth;
pub mod tensor;

mod error;
mod matrix;

pub use error::{Error, Result};
pub use matrix::Matrix;
