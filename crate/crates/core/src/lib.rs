//! Blind mixing-matrix estimation by directional sparse filtering.
//!
//! Per frequency bin, whitened and unit-normalized frames are clustered onto
//! lines (K-hyperlines) and the resulting mixing matrix is refined by
//! minimizing a soft-minimum directional cost with L-BFGS. The weighted
//! Lehmer-mean cost carries one learnable weight per source so that sources
//! with uneven activity are not pulled toward the dominant one. Separation is
//! done with softargmax time-frequency masks aligned across bins.
//!
//! The crate is `no_std` and needs only `alloc`. Signal I/O, the STFT and the
//! command-line tool live in the `dsf` crate.

// `!(x > 0.0)` is used deliberately so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod config;
pub mod cost;
pub mod error;
pub mod khl;
pub mod lbfgs;
pub mod linalg;
pub mod perm;
pub mod preprocess;
pub mod separation;
pub mod synth;

pub use config::{Constraint, DsfConfig, Method};
pub use cost::{LehmerParams, Objective, PackedParams, WeightVector};
pub use error::{DsfError, Result};
pub use linalg::{CMat, HermitianMatrix, C64};
pub use preprocess::BinProblem;
pub use separation::{MaskTensor, MixingEstimate, PermutationMap};
