//! Real-time binary mask propagation.
//!
//! A slow segmenter produces masks for a subset of frames (keyframes). Every
//! frame in between is segmented by tracking the keyframe's foreground corners
//! into the current frame with pyramidal Lucas-Kanade, fitting an affine
//! transform with RANSAC, and warping the keyframe mask through it.
//!
//! Module map:
//! - [`imgcore`]: rasters, PPM/PGM I/O, grayscale, pyramids, gradients
//! - [`features`]: Shi-Tomasi corners restricted to a foreground mask
//! - [`optflow`]: pyramidal Lucas-Kanade sparse flow
//! - [`geometry`]: least-squares affine fit, RANSAC, mask warping
//! - [`segmenter`]: the single-slot slow segmenter and its built-in backends
//! - [`pipeline`]: the dual-rate frame loop
//! - [`eval`] and [`synth`]: metrics and the synthetic sequence generator
//! - [`cli`]: the `maskprop` command line

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod imgcore;
pub mod optflow;
pub mod pipeline;
pub mod segmenter;
pub mod synth;

pub use error::{Error, Result};
