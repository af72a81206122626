//! Multichannel source separation by directional sparse filtering.
//!
//! The estimation core lives in [`dsf_core`] (no_std); this crate adds the
//! STFT, WAV files, mixtures, the bin-parallel pipeline, reports, and the
//! `dsf` command-line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod mixture;
pub mod pipeline;
pub mod report;
pub mod stft;
pub mod wav;

pub use dsf_core;
pub use error::{Error, ExitStatus, Result};
pub use stft::{Signal, Spectrogram, WindowKind};
