//! Configuration, experiment runners and artifact output for the
//! `storage-reliability` command-line tool.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{Config, Overrides, PolicyChoice, SweepConfig, SweepKind};
pub use output::{config_hash, OutputDir, VERSION};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    pub const NOT_CONVERGED: i32 = 2;
    pub const VERIFY_FAILED: i32 = 3;
}
