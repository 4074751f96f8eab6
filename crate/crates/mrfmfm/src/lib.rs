//! File formats, replicate harness and command implementations on top of
//! [`mrfmfm_core`].

pub mod cli;
pub mod dataio;
pub mod harness;

pub use mrfmfm_core as core;
