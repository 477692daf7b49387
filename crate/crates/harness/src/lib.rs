//! Verification harness: configuration, staged runs, artifacts and the
//! long-time profile report.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;
pub mod theorem;

pub use config::Config;
pub use error::{HarnessError, Result};
pub use stages::{Context, Stage};
