//! Harness around `relpose-core`: run configs, evaluation reports, charts
//! and the command implementations used by the `relpose` binary.

pub mod commands;
pub mod config;
pub mod eval;
pub mod report;

pub use config::RunConfig;
pub use eval::{EvalOptions, EvalReport};
