//! Relative-absolute policy optimization for score prediction.
//!
//! A small categorical score policy is trained with group-relative policy
//! optimization against a reward that mixes a pairwise rank term with an
//! absolute-error term. The crate is `no_std` and needs only `alloc`; file
//! formats, configuration and the command line live in `rapo-lab`.

#![no_std]

extern crate alloc;

pub mod critique;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod policy;
pub mod rapo;
pub mod rewards;

pub use error::{Error, Result};
