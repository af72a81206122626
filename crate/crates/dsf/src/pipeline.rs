//! Spectrogram-level separation: per-bin estimation, masking, alignment, and
//! reconstruction.

use dsf_core::preprocess::prepare_bin;
use dsf_core::separation::{align_permutations, estimate_bin, softargmax_mask};
use dsf_core::{CMat, DsfConfig, DsfError, MaskTensor, PermutationMap};
use rayon::prelude::*;

use crate::error::{Error, ExitStatus, Result};
use crate::stft::{analyze, synthesize, Signal, Spectrogram, WindowKind};

/// Convergence summary of one estimated bin.
#[derive(Clone, Debug, PartialEq)]
pub struct BinStats {
    pub iterations: usize,
    pub final_cost: f64,
    pub termination: &'static str,
    pub converged: bool,
    pub kept_frames: usize,
    pub khl_inertia: f64,
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BinStatus {
    Estimated(BinStats),
    /// DC and Nyquist bins, and the single-source case, use uniform masks.
    Uniform,
    Skipped { reason: String, error: DsfError },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinOutcome {
    pub bin: usize,
    pub status: BinStatus,
}

/// Masks in per-bin local source order, the alignment that maps them to
/// global sources, and per-bin diagnostics.
#[derive(Clone, Debug)]
pub struct Separation {
    pub masks: MaskTensor,
    pub permutation: PermutationMap,
    pub bins: Vec<BinOutcome>,
}

impl Separation {
    pub fn aligned_masks(&self) -> MaskTensor {
        self.masks.permuted(&self.permutation)
    }

    pub fn skipped(&self) -> impl Iterator<Item = (usize, &str)> {
        self.bins.iter().filter_map(|b| match &b.status {
            BinStatus::Skipped { reason, .. } => Some((b.bin, reason.as_str())),
            _ => None,
        })
    }
}

/// The `M x K` observation matrix of bin `f`.
pub fn bin_frames(spec: &Spectrogram, f: usize) -> CMat {
    CMat::from_row_major(spec.n_channels(), spec.n_frames(), spec.bin(f))
}

fn estimate_one(spec: &Spectrogram, f: usize, cfg: &DsfConfig) -> std::result::Result<(Vec<f64>, Vec<usize>, BinStats), DsfError> {
    let problem = prepare_bin(f, &bin_frames(spec, f))?;
    let est = estimate_bin(&problem, cfg)?;
    let mask = softargmax_mask(&est.h, &problem.frames, cfg.beta)?;
    let stats = BinStats {
        iterations: est.iterations,
        final_cost: est.final_cost,
        termination: est.report.termination.as_str(),
        converged: est.converged,
        kept_frames: problem.kept_frames.len(),
        khl_inertia: est.khl_inertia,
        weights: est.w.map(|w| w.0),
    };
    Ok((mask, problem.kept_frames, stats))
}

fn with_workers<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Estimates a mask for every bin and aligns sources across bins.
///
/// Bins that fail (degenerate, silent, or numerically broken) keep uniform
/// masks and are reported; the run fails only if no bin could be estimated.
pub fn separate_spectrogram(spec: &Spectrogram, cfg: &DsfConfig) -> Result<Separation> {
    cfg.validate()?;
    let n = cfg.n_sources;
    let (bins, frames) = (spec.n_bins(), spec.n_frames());
    if spec.n_channels() < 2 {
        return Err(Error::Data(format!("separation needs at least 2 channels, got {}", spec.n_channels())));
    }
    if !spec.is_finite() {
        return Err(Error::Data("spectrogram contains non-finite values".into()));
    }
    let mut masks = MaskTensor::uniform(bins, n, frames);
    if n == 1 {
        let outcomes = (0..bins).map(|bin| BinOutcome { bin, status: BinStatus::Uniform }).collect();
        return Ok(Separation { masks, permutation: PermutationMap::identity(bins, 1), bins: outcomes });
    }

    let estimable = 1..bins.saturating_sub(1);
    let results: Vec<_> = with_workers(cfg.workers, || estimable.clone().into_par_iter().map(|f| estimate_one(spec, f, cfg)).collect())?;

    let mut outcomes = vec![BinOutcome { bin: 0, status: BinStatus::Uniform }];
    let mut first_error = None;
    for (f, res) in estimable.zip(results) {
        let status = match res {
            Ok((mask, kept, stats)) => {
                masks.set_bin(f, &mask, &kept);
                BinStatus::Estimated(stats)
            }
            Err(error) => {
                first_error.get_or_insert_with(|| error.clone());
                BinStatus::Skipped { reason: error.to_string(), error }
            }
        };
        outcomes.push(BinOutcome { bin: f, status });
    }
    if bins > 1 {
        outcomes.push(BinOutcome { bin: bins - 1, status: BinStatus::Uniform });
    }

    let estimated = outcomes.iter().filter(|o| matches!(o.status, BinStatus::Estimated(_))).count();
    if estimated == 0 {
        let err = Error::Core(first_error.unwrap_or(DsfError::Config("spectrogram has no estimable bins")));
        let msg = format!("no frequency bin could be estimated: {err}");
        return Err(match err.exit_status() {
            ExitStatus::Numerical => Error::Numerical(msg),
            ExitStatus::Config => Error::Config(msg),
            _ => Error::Data(msg),
        });
    }

    let permutation = align_permutations(&masks)?;
    Ok(Separation { masks, permutation, bins: outcomes })
}

/// Applies aligned masks: source `n` at `(f, m, k)` is
/// `mask[f, perm_f(n), k] · spec[f, m, k]`.
pub fn reconstruct(spec: &Spectrogram, masks: &MaskTensor, perm: &PermutationMap) -> Result<Vec<Spectrogram>> {
    let (bins, n, frames) = masks.shape();
    if bins != spec.n_bins() || frames != spec.n_frames() || perm.bins() != bins {
        return Err(Error::Data(format!(
            "masks are {bins}x{n}x{frames}, spectrogram is {}x{}x{}",
            spec.n_bins(),
            spec.n_channels(),
            spec.n_frames()
        )));
    }
    (0..n)
        .map(|src| {
            let mut out = spec.clone();
            for f in 0..bins {
                let local = perm.bin(f)[src];
                for m in 0..spec.n_channels() {
                    for (k, v) in out.row_mut(f, m).iter_mut().enumerate() {
                        *v *= masks.get(f, local, k);
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

/// Synthesizes each masked spectrogram (all channels, i.e. source images).
pub fn synthesize_all(specs: &[Spectrogram]) -> Result<Vec<Signal>> {
    specs.par_iter().map(synthesize).collect()
}

/// Hard oracle mask from known source images: each (bin, frame) goes to the
/// source with the most energy at `channel`.
pub fn ideal_binary_mask(references: &[Spectrogram], channel: usize) -> Result<MaskTensor> {
    let first = references.first().ok_or_else(|| Error::Config("no references".into()))?;
    let (bins, frames, n) = (first.n_bins(), first.n_frames(), references.len());
    if references.iter().any(|r| r.n_bins() != bins || r.n_frames() != frames) {
        return Err(Error::Data("reference spectrograms differ in shape".into()));
    }
    let mut masks = MaskTensor::uniform(bins, n, frames);
    for f in 0..bins {
        let block = masks.bin_mut(f);
        for k in 0..frames {
            let best = (0..n)
                .max_by(|&a, &b| {
                    references[a].get(f, channel, k).norm_sqr().total_cmp(&references[b].get(f, channel, k).norm_sqr())
                })
                .unwrap_or(0);
            for src in 0..n {
                block[src * frames + k] = if src == best { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(masks)
}

/// Full result of separating a time-domain mixture.
#[derive(Clone, Debug)]
pub struct SeparationOutput {
    /// Separated source images, one multichannel signal per source.
    pub sources: Vec<Signal>,
    pub separation: Separation,
}

pub fn separate_signal(mix: &Signal, cfg: &DsfConfig, window: WindowKind) -> Result<SeparationOutput> {
    cfg.validate()?;
    if mix.n_channels() < 2 {
        return Err(Error::Data(format!("input has {} channel; at least 2 are required", mix.n_channels())));
    }
    let spec = with_workers(cfg.workers, || analyze(mix, cfg.fft_size, cfg.hop(), window))??;
    let separation = separate_spectrogram(&spec, cfg)?;
    let specs = reconstruct(&spec, &separation.masks, &separation.permutation)?;
    let sources = with_workers(cfg.workers, || synthesize_all(&specs))??;
    Ok(SeparationOutput { sources, separation })
}
