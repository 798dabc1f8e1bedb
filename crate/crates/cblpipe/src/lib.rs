//! Portable COBOL CI/CD pipeline engine.
//!
//! The pipeline runs four stages in strict order (checkout, expand,
//! unit-test, report) from a single controller. All CI-platform specifics
//! sit behind [`platform`]; child processes go through [`shell`], which
//! captures output and masks registered secrets; mainframe traffic goes
//! through the simulated client in [`mainframe`].
//!
//! Pure logic (copybook expansion, redaction, recipe lint, workflow
//! emission, statistics) lives in the `no_std` crate [`cblpipe_core`],
//! re-exported here as [`core`].

pub use cblpipe_core as core;

pub mod bench;
pub mod cli;
pub mod config;
pub mod copybooks;
pub mod engine;
pub mod image;
pub mod mainframe;
pub mod platform;
pub mod shell;

/// Process exit codes shared by every subcommand.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const PIPELINE_FAILURE: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const INTERNAL_ERROR: i32 = 3;
}
