#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Spatially constrained mixture-of-finite-mixtures Poisson regression.
//!
//! Regression coefficients are clustered over a spatial graph: a
//! mixture-of-finite-mixtures prior on the partition, tilted by a Potts-style
//! Markov random field that rewards neighbouring sites sharing a cluster, with
//! a multivariate log-gamma base measure that is conjugate to the Poisson
//! log-linear likelihood. The crate holds the sampler and its numerical
//! kernels; file formats and the command line live in the `mrfmfm` crate.

extern crate alloc;

pub mod error;
pub mod gibbs;
pub mod graph;
pub mod inference;
pub mod math;
pub mod mlg;
pub mod prior;
pub mod simgen;

pub use error::{Error, Result};
pub use graph::SpatialGraph;

/// Derives an independent 64-bit seed for replicate `index` from a master
/// seed (SplitMix64 finalizer over the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
