//! Synthetic directional bin data and permutation-invariant metrics.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DsfError, Result};
use crate::linalg::{canonicalize_phase, dot_h, norm, CMat, C64};
use crate::perm::permutations;
use crate::separation::MAX_PERMUTATION_SOURCES;

/// Largest allowed `|a_i^H a_j|` between true mixing columns.
pub const MAX_COHERENCE: f64 = 0.9;
const MAX_DRAWS: usize = 100;

/// SI-SDR values are clamped to this many dB.
pub const SI_SDR_CAP_DB: f64 = 80.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBinSpec {
    pub m_channels: usize,
    pub n_sources: usize,
    pub n_frames: usize,
    /// Probability of each source being the dominant one in a frame.
    pub activity: Vec<f64>,
    /// Fraction of frame energy carried by the dominant source.
    pub dominance: f64,
    pub seed: u64,
}

impl SynthBinSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_channels == 0 || self.n_sources == 0 {
            return Err(DsfError::Config("channel and source counts must be positive"));
        }
        if self.activity.len() != self.n_sources {
            return Err(DsfError::Config("activity needs one entry per source"));
        }
        if self.activity.iter().any(|&p| !(p >= 0.0)) || (self.activity.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(DsfError::Config("activity must be a probability vector"));
        }
        if !(self.dominance > 0.0 && self.dominance <= 1.0) {
            return Err(DsfError::Config("dominance must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthBin {
    /// Unit-norm frames, `M x K`.
    pub frames: CMat,
    /// Unit-norm, phase-canonical true mixing columns, `M x N`.
    pub a_true: CMat,
    /// Dominant source of every frame.
    pub dominant: Vec<usize>,
}

fn complex_normal(rng: &mut ChaCha8Rng) -> C64 {
    let s = core::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

/// Draws a noiseless sparse mixture for one bin.
///
/// Each frame has one dominant source chosen by `activity`, carrying a
/// `dominance` share of the expected energy; the remainder is spread evenly
/// over the other sources. Amplitudes are circular complex Gaussian.
pub fn gen_bin_data(spec: &SynthBinSpec) -> Result<SynthBin> {
    spec.validate()?;
    let (m, n, k) = (spec.m_channels, spec.n_sources, spec.n_frames);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut a_true = None;
    for _ in 0..MAX_DRAWS {
        let mut a = CMat::from_fn(m, n, |_, _| complex_normal(&mut rng));
        for j in 0..n {
            let col = a.col_mut(j);
            let nrm = norm(col);
            col.iter_mut().for_each(|v| *v /= nrm);
            canonicalize_phase(col);
        }
        let ok = (0..n).all(|i| ((i + 1)..n).all(|j| dot_h(a.col(i), a.col(j)).norm() < MAX_COHERENCE));
        if ok {
            a_true = Some(a);
            break;
        }
    }
    let a_true = a_true.ok_or(DsfError::CoherenceBound { draws: MAX_DRAWS })?;

    let picker = WeightedIndex::new(&spec.activity).map_err(|_| DsfError::Config("activity must be a probability vector"))?;
    let lead = spec.dominance.sqrt();
    let leak = if n > 1 { ((1.0 - spec.dominance) / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut frames = CMat::zeros(m, k);
    let mut dominant = Vec::with_capacity(k);
    for j in 0..k {
        let d = picker.sample(&mut rng);
        dominant.push(d);
        let mut x = alloc::vec![C64::new(0.0, 0.0); m];
        for src in 0..n {
            let s = complex_normal(&mut rng) * if src == d { lead } else { leak };
            for (xi, ai) in x.iter_mut().zip(a_true.col(src)) {
                *xi += ai * s;
            }
        }
        let nrm = norm(&x);
        frames.col_mut(j).iter_mut().zip(&x).for_each(|(o, v)| *o = v / nrm);
    }
    Ok(SynthBin { frames, a_true, dominant })
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at [`SI_SDR_CAP_DB`].
pub fn si_sdr(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(DsfError::LengthMismatch { expected: reference.len(), found: estimate.len() });
    }
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(ref_energy > 0.0) {
        return Err(DsfError::ZeroReference);
    }
    let scale = estimate.iter().zip(reference).map(|(e, r)| e * r).sum::<f64>() / ref_energy;
    let target: f64 = ref_energy * scale * scale;
    let residual: f64 = estimate.iter().zip(reference).map(|(e, r)| (e - scale * r).powi(2)).sum();
    if residual <= 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    if target <= 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PitScore {
    /// `permutation[n]` is the estimate matched to reference `n`.
    pub permutation: Vec<usize>,
    pub per_source_db: Vec<f64>,
    pub mean_db: f64,
}

/// Best mean SI-SDR over every assignment of estimates to references. Ties
/// resolve to the lexicographically first permutation.
pub fn permutation_invariant_score(estimates: &[Vec<f64>], references: &[Vec<f64>]) -> Result<PitScore> {
    let n = references.len();
    if estimates.len() != n {
        return Err(DsfError::LengthMismatch { expected: n, found: estimates.len() });
    }
    if n > MAX_PERMUTATION_SOURCES {
        return Err(DsfError::TooManySources { sources: n, max: MAX_PERMUTATION_SOURCES });
    }
    // table[e][r]
    let mut table = Vec::with_capacity(n);
    for e in estimates {
        let row: Result<Vec<f64>> = references.iter().map(|r| si_sdr(e, r)).collect();
        table.push(row?);
    }
    let mut best: Option<PitScore> = None;
    for p in permutations(n) {
        let per: Vec<f64> = p.iter().enumerate().map(|(r, &e)| table[e][r]).collect();
        let mean = per.iter().sum::<f64>() / n.max(1) as f64;
        if best.as_ref().is_none_or(|b| mean > b.mean_db) {
            best = Some(PitScore { permutation: p, per_source_db: per, mean_db: mean });
        }
    }
    Ok(best.expect("at least one permutation"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recovery {
    /// `permutation[n]` is the estimated column matched to true column `n`.
    pub permutation: Vec<usize>,
    pub similarity: Vec<f64>,
}

impl Recovery {
    pub fn mean(&self) -> f64 {
        self.similarity.iter().sum::<f64>() / self.similarity.len().max(1) as f64
    }

    pub fn min(&self) -> f64 {
        self.similarity.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Column similarities `|h^H a| / (|h| |a|)` under the best column matching.
pub fn angular_recovery_error(h_est: &CMat, a_true: &CMat) -> Result<Recovery> {
    if h_est.shape() != a_true.shape() {
        return Err(DsfError::Shape { expected: a_true.shape(), found: h_est.shape() });
    }
    let n = a_true.cols();
    if n > MAX_PERMUTATION_SOURCES {
        return Err(DsfError::TooManySources { sources: n, max: MAX_PERMUTATION_SOURCES });
    }
    let sim = |e: usize, t: usize| {
        let (he, at) = (h_est.col(e), a_true.col(t));
        let den = norm(he) * norm(at);
        if den > 0.0 {
            (dot_h(he, at).norm() / den).min(1.0)
        } else {
            0.0
        }
    };
    let mut best: Option<(f64, Recovery)> = None;
    for p in permutations(n) {
        let s: Vec<f64> = p.iter().enumerate().map(|(t, &e)| sim(e, t)).collect();
        let mean = s.iter().sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| mean > *b) {
            best = Some((mean, Recovery { permutation: p, similarity: s }));
        }
    }
    Ok(best.expect("at least one permutation").1)
}
