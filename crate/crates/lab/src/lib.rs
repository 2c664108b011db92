//! Files, configuration, experiment harness and command line around
//! [`rapo_core`].

pub mod config;
pub mod error;
pub mod harness;
pub mod io;

pub use error::{LabError, Result};
