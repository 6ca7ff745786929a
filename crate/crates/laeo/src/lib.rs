//! File formats, run configuration and the `laeo` command-line driver on
//! top of `laeo-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod formats;
