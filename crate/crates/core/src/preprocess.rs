//! Per-bin whitening and unit normalization.

use alloc::vec::Vec;

use crate::error::{DsfError, Result};
use crate::linalg::{canonicalize_phase, hermitian_eig, norm, CMat, HermitianMatrix, C64};

/// Eigenvalues of the sample covariance below this fraction of the largest
/// make a bin degenerate.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

/// Frames with norm at or below this fraction of the bin's median frame norm
/// are treated as silent.
pub const SILENT_RELATIVE_EPS: f64 = 1e-9;

/// One frequency bin, ready for estimation.
#[derive(Clone, Debug)]
pub struct BinProblem {
    pub bin_index: usize,
    /// Whitened frames with unit-norm columns (`M x K'`).
    pub frames: CMat,
    /// Indices of the original frames that survived normalization.
    pub kept_frames: Vec<usize>,
    pub whitener: CMat,
    pub dewhitener: CMat,
    /// Number of frames in the bin before dropping.
    pub total_frames: usize,
}

#[derive(Clone, Debug)]
pub struct Whitened {
    pub data: CMat,
    pub whitener: CMat,
    pub dewhitener: CMat,
}

/// Removes the sample mean and decorrelates to identity covariance.
pub fn whiten_bin(frames: &CMat) -> Result<Whitened> {
    let (m, k) = frames.shape();
    if k < m || m == 0 {
        return Err(DsfError::TooFewFrames { frames: k, sources: m });
    }
    if !frames.is_finite() {
        return Err(DsfError::NonFinite { context: "bin frames" });
    }
    let inv_k = 1.0 / k as f64;
    let mut mean = alloc::vec![C64::new(0.0, 0.0); m];
    for x in frames.columns() {
        for (acc, v) in mean.iter_mut().zip(x) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v *= inv_k);
    let mut centered = frames.clone();
    for j in 0..k {
        for (v, mu) in centered.col_mut(j).iter_mut().zip(&mean) {
            *v -= mu;
        }
    }
    let cov = HermitianMatrix::new(centered.mul_adjoint(&centered).scale(C64::new(inv_k, 0.0)))?;
    let eig = hermitian_eig(&cov)?;
    let top = eig.values[0];
    if !(top > 0.0) || eig.values.iter().any(|&l| l <= COVARIANCE_FLOOR * top) {
        return Err(DsfError::DegenerateCovariance);
    }
    // whitener = Λ^{-1/2} E^H, dewhitener = E Λ^{1/2}
    let e = &eig.vectors;
    let whitener = CMat::from_fn(m, m, |i, j| e[(j, i)].conj() / eig.values[i].sqrt());
    let dewhitener = CMat::from_fn(m, m, |i, j| e[(i, j)] * eig.values[j].sqrt());
    let data = whitener.matmul(&centered);
    Ok(Whitened { data, whitener, dewhitener })
}

/// Drops columns with norm `<= eps` and scales the rest to unit norm.
///
/// Returns the normalized frames and the indices of the kept columns.
pub fn normalize_frames(whitened: &CMat, eps: f64) -> Result<(CMat, Vec<usize>)> {
    if !(eps > 0.0) {
        return Err(DsfError::Config("silent-frame threshold must be positive"));
    }
    let m = whitened.rows();
    let mut kept = Vec::new();
    let mut cols = Vec::new();
    for (k, x) in whitened.columns().enumerate() {
        let n = norm(x);
        if n > eps {
            kept.push(k);
            cols.extend(x.iter().map(|v| v / n));
        }
    }
    if kept.is_empty() {
        return Err(DsfError::SilentBin { bin: 0 });
    }
    Ok((CMat::from_col_major(m, kept.len(), cols), kept))
}

/// Median column norm, used to scale the silent-frame threshold.
pub fn median_frame_norm(frames: &CMat) -> f64 {
    let mut norms: Vec<f64> = frames.columns().map(norm).collect();
    if norms.is_empty() {
        return 0.0;
    }
    norms.sort_by(f64::total_cmp);
    let mid = norms.len() / 2;
    if norms.len().is_multiple_of(2) {
        0.5 * (norms[mid - 1] + norms[mid])
    } else {
        norms[mid]
    }
}

/// Whitens, normalizes, and packages one bin.
pub fn prepare_bin(bin_index: usize, frames: &CMat) -> Result<BinProblem> {
    let w = whiten_bin(frames).map_err(|e| e.in_bin(bin_index))?;
    let eps = SILENT_RELATIVE_EPS * median_frame_norm(&w.data);
    let eps = if eps > 0.0 { eps } else { f64::MIN_POSITIVE };
    let (unit, kept) = normalize_frames(&w.data, eps).map_err(|e| e.in_bin(bin_index))?;
    Ok(BinProblem {
        bin_index,
        frames: unit,
        kept_frames: kept,
        whitener: w.whitener,
        dewhitener: w.dewhitener,
        total_frames: frames.cols(),
    })
}

/// Maps a whitened-domain estimate back to the observation domain, with unit,
/// phase-canonical columns.
pub fn unwhiten_mixing(h: &CMat, dewhitener: &CMat) -> Result<CMat> {
    if dewhitener.cols() != h.rows() {
        return Err(DsfError::Shape { expected: (dewhitener.cols(), h.cols()), found: h.shape() });
    }
    let mut out = dewhitener.matmul(h);
    for j in 0..out.cols() {
        let col = out.col_mut(j);
        let n = norm(col);
        if !(n > 0.0) {
            return Err(DsfError::ZeroColumn { col: j });
        }
        col.iter_mut().for_each(|v| *v /= n);
        canonicalize_phase(col);
    }
    Ok(out)
}
