//! Spiking sparse-attention encoder and feature-decomposition toolkit for
//! sEMG joint-angle regression.
//!
//! The crate covers the full pipeline: DSP preprocessing of raw recordings
//! (notch + high-pass filtering, resampling, standardization, windowing),
//! a spiking sparse-attention encoder with a temporal-convolution backbone,
//! hierarchical decomposition of the encoded feature into kinematic and
//! biological parts, joint-angle regression with subject-identity
//! classification, a training/evaluation harness, and a spike-aware
//! compute/power profiler. Everything runs on a small built-in tensor
//! engine with reverse-mode automatic differentiation ([`diffcore`]).

pub mod attention;
pub mod config;
pub mod data;
pub mod diffcore;
pub mod dsp;
pub mod error;
pub mod model;
pub mod pipeline;
pub mod profiler;
pub mod snn;
pub mod train;

pub use error::{Error, Result};
