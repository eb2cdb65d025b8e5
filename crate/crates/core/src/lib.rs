//! Numerical core for detecting network community oncomarkers from DNA
//! methylation cohorts.
//!
//! The crate is `no_std` (with `alloc`) and carries every algorithm of the
//! pipeline: healthy-reference moments and the per-sample gene-pair
//! interaction measure, Cox regression and Kaplan-Meier/log-rank tools,
//! empirical-Bayes edge inference, regularized spectral community detection,
//! community scoring/validation, and a synthetic cohort generator. File
//! formats, parallel execution and the command line live in the `methnet`
//! crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod community;
pub mod data;
pub mod ebayes;
pub mod error;
pub mod interaction;
pub mod linalg;
pub mod oncomarker;
pub mod pairs;
pub mod special;
pub mod survival;
pub mod synth;
pub mod wald;

pub use error::{Error, Result};
