//! Platform-independent core of the `cblpipe` COBOL pipeline engine.
//!
//! Everything in this crate is pure: it takes values in and hands values
//! back, and never touches the filesystem, the process environment, or a
//! clock. The `cblpipe` crate supplies those and drives the pipeline.
//!
//! The crate is `no_std` and needs only `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod credentials;
pub mod expander;
pub mod pin;
pub mod platform;
pub mod recipe;
pub mod redact;
pub mod report;
pub mod stats;
pub mod status;

pub use credentials::{resolve_credentials, CredentialError, Resolution};
pub use expander::{
    apply_replacing, expand, scan_copies, strip_comments, CopyDirective, Copybook, CopybookSource,
    ExpandError, ExpandedSource, FixedFormatSource, MemoryStore,
};
pub use platform::{detect_backend, BackendKind, BuildMetadata, MetadataSource};
pub use redact::{SecretError, SecretStore};
pub use status::{Level, StatusEvent};
