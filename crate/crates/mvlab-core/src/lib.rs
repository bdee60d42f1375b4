//! Core engine for a multi-view VAE laboratory.
//!
//! Everything algorithmic lives here: a reverse-mode autodiff tape over
//! dense 2-D `f64` tensors, diagonal-Gaussian posterior machinery with
//! product-of-experts fusion, MLP encoder/decoder networks over a
//! partitioned latent space `[z_pr1, z_sh, z_pr2]`, the MVAE / MMVAE /
//! MoPoE / MMVAE++ training objectives (plus supervised variants), a
//! multi-view GP synthetic benchmark generator, an Adam trainer with
//! reproducible seed streams, and the cross-modal prediction metrics
//! (per-feature R², rank-based AUC).
//!
//! The crate is `no_std` (alloc only); file formats, CSV ingestion and
//! the command-line front end live in the companion `mvlab` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod dist;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub(crate) mod math;
pub mod net;
pub mod objective;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::Error;

/// Crate-wide result type.
pub type Result<T> = core::result::Result<T, Error>;
