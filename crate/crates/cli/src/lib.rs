//! Batch front end for the fbmfg solver: TOML configurations in, CSV series
//! and a TOML manifest out.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod runner;

pub use config::RunConfig;
pub use error::CliError;
pub use runner::{run, sweep, RunManifest, RunSummary};
