//! File formats, a rayon executor, and the `gsplan` command line on top of
//! `gsplan-core`.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod exec;
pub mod export;
pub mod grid;
pub mod pipeline;
pub mod ply;
pub mod viz;

pub use error::{Error, Result};
