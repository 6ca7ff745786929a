//! Core of a mutual-gaze ("looking at each other", LAEO) pipeline.
//!
//! Everything in this crate is pure computation over in-memory values:
//! linking head detections into tracks, encoding track pairs as Gaussian
//! head-maps, a small reverse-mode autodiff with 3D convolutions, the
//! three-branch pair classifier and its training loop, a procedural
//! synthetic-data generator with a geometric gaze oracle, average-precision
//! evaluation and the shot/episode-level social analysis.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line driver live in the companion `laeo` crate.

#![no_std]
#![allow(clippy::too_many_arguments)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod domain;
pub mod error;
pub mod eval;
pub mod headmap;
pub mod model;
pub mod nn;
pub mod rng;
pub mod social;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
