//! Command-line driver for `tggbc-core`: workload generation, decoder
//! timing, ablation sweeps, closed-form costs and self-verification.

pub mod ablation;
pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod report;
pub mod verify;

pub use config::RunConfig;
pub use error::{HarnessError, Result};
