//! Per-bin estimation, softargmax masking and cross-bin permutation alignment.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::{Constraint, DsfConfig};
use crate::cost::{init_weights, objective_and_gradient, project_semiunitary, Objective, PackedParams, WeightVector};
use crate::error::{DsfError, Result};
use crate::khl::khl_run;
use crate::lbfgs::{minimize, OptimReport, Termination};
use crate::linalg::{canonicalize_phase, dot_h, norm, norm_sqr, CMat};
use crate::perm::permutations;
use crate::preprocess::BinProblem;

/// Largest source count accepted by the exhaustive permutation searches.
pub const MAX_PERMUTATION_SOURCES: usize = 8;

/// Estimated mixing matrix for one bin, in the whitened domain.
#[derive(Clone, Debug)]
pub struct MixingEstimate {
    /// Unit-norm, phase-canonical columns.
    pub h: CMat,
    /// Semi-unitary matrix before column normalization, when the projection is enabled.
    pub h_projected: Option<CMat>,
    pub w: Option<WeightVector>,
    pub converged: bool,
    pub iterations: usize,
    pub final_cost: f64,
    pub report: OptimReport,
    pub khl_inertia: f64,
}

/// Seed for one bin derived from the run seed.
pub fn bin_seed(seed: u64, bin: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (bin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// KHL initialization, L-BFGS on the packed objective, then finalization.
pub fn estimate_bin(problem: &BinProblem, cfg: &DsfConfig) -> Result<MixingEstimate> {
    let n = cfg.n_sources;
    let frames = &problem.frames;
    let k = frames.cols();
    let init = khl_run(frames, n, bin_seed(cfg.seed, problem.bin_index), cfg.khl_restarts, cfg.khl_max_iter)?;
    let objective = cfg.objective()?;
    let constrain = cfg.constraint == Constraint::Project;
    let w0 = match objective {
        Objective::Wlm(params) => Some(init_weights(n, k, params.alpha())),
        Objective::Pm { .. } => None,
    };
    let x0 = PackedParams::pack(&init.lines, w0.as_ref());
    let (rows, cols) = (x0.rows, x0.cols);
    // The weights start near K while H has unit columns, so their gradients
    // are ~K times smaller. Optimizing w / w0 instead keeps both blocks on the
    // same scale; the objective itself is unchanged.
    let h_len = 2 * rows * cols;
    let w_scale = w0.as_ref().map_or(1.0, |w| w.0[0].max(1.0));
    let to_natural = |x: &[f64]| {
        let mut v = x.to_vec();
        v[h_len..].iter_mut().for_each(|w| *w *= w_scale);
        v
    };
    let eval = |x: &[f64]| {
        let p = PackedParams { rows, cols, data: to_natural(x) };
        objective_and_gradient(&p, frames, objective, constrain).map(|(c, g)| {
            let mut g = g.data;
            g[h_len..].iter_mut().for_each(|d| *d *= w_scale);
            (c, g)
        })
    };
    let mut start = x0.data.clone();
    start[h_len..].iter_mut().for_each(|w| *w /= w_scale);
    let (x_star, report) = minimize(eval, &start, &cfg.lbfgs)?;
    let (h_tilde, w) = PackedParams { rows, cols, data: to_natural(&x_star) }.unpack()?;
    let h_projected = if constrain { Some(project_semiunitary(&h_tilde)?) } else { None };
    let mut h = h_projected.clone().unwrap_or(h_tilde);
    for j in 0..h.cols() {
        let col = h.col_mut(j);
        let nrm = norm(col);
        if !(nrm > 0.0) {
            return Err(DsfError::ZeroColumn { col: j });
        }
        col.iter_mut().for_each(|v| *v /= nrm);
        canonicalize_phase(col);
    }
    Ok(MixingEstimate {
        h,
        h_projected,
        w,
        converged: matches!(report.termination, Termination::Gradient | Termination::CostStall),
        iterations: report.iterations,
        final_cost: report.final_cost,
        khl_inertia: init.inertia,
        report,
    })
}

/// Softargmax over cosine-squared similarities: `exp(β u_n) / Σ_i exp(β u_i)`.
///
/// Returns an `N x K` row-major matrix (`n * K + k`); every column sums to one.
pub fn softargmax_mask(h: &CMat, frames: &CMat, beta: f64) -> Result<Vec<f64>> {
    if !(beta >= 0.0) {
        return Err(DsfError::Config("beta must be nonnegative"));
    }
    if h.rows() != frames.rows() {
        return Err(DsfError::Shape { expected: (h.rows(), frames.cols()), found: frames.shape() });
    }
    let n = h.cols();
    let k = frames.cols();
    let col_norms: Vec<f64> = h.columns().map(norm_sqr).collect();
    if let Some(col) = col_norms.iter().position(|&v| !(v > 0.0)) {
        return Err(DsfError::ZeroColumn { col });
    }
    let mut out = vec![0.0; n * k];
    let mut logits = vec![0.0; n];
    for (j, x) in frames.columns().enumerate() {
        let xn = norm_sqr(x);
        for (i, h_i) in h.columns().enumerate() {
            let u = if xn > 0.0 { dot_h(h_i, x).norm_sqr() / (col_norms[i] * xn) } else { 0.0 };
            logits[i] = beta * u;
        }
        let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - top).exp()).sum();
        for i in 0..n {
            out[i * k + j] = (logits[i] - top).exp() / total;
        }
    }
    Ok(out)
}

/// Soft time-frequency assignments, `F x N x K`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskTensor {
    bins: usize,
    sources: usize,
    frames: usize,
    values: Vec<f64>,
}

impl MaskTensor {
    /// Every entry set to `1/N`.
    pub fn uniform(bins: usize, sources: usize, frames: usize) -> Self {
        Self { bins, sources, frames, values: vec![1.0 / sources as f64; bins * sources * frames] }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.sources, self.frames)
    }

    #[inline]
    pub fn get(&self, f: usize, n: usize, k: usize) -> f64 {
        self.values[(f * self.sources + n) * self.frames + k]
    }

    /// The `N x K` block of bin `f`.
    pub fn bin(&self, f: usize) -> &[f64] {
        let len = self.sources * self.frames;
        &self.values[f * len..(f + 1) * len]
    }

    pub fn bin_mut(&mut self, f: usize) -> &mut [f64] {
        let len = self.sources * self.frames;
        &mut self.values[f * len..(f + 1) * len]
    }

    /// Writes an `N x K'` mask computed on a subset of frames; frames not in
    /// `kept` keep the uniform value `1/N`.
    pub fn set_bin(&mut self, f: usize, mask: &[f64], kept: &[usize]) {
        let (n, k) = (self.sources, self.frames);
        let kk = kept.len();
        assert_eq!(mask.len(), n * kk, "mask block has the wrong size");
        let block = self.bin_mut(f);
        block.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        for src in 0..n {
            for (j, &frame) in kept.iter().enumerate() {
                block[src * k + frame] = mask[src * kk + j];
            }
        }
    }

    /// Largest deviation of any `Σ_n mask` from one.
    pub fn partition_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for f in 0..self.bins {
            let block = self.bin(f);
            for k in 0..self.frames {
                let s: f64 = (0..self.sources).map(|n| block[n * self.frames + k]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }

    /// Reorders sources within every bin: new source `n` takes old `perm_f[n]`.
    pub fn permuted(&self, perm: &PermutationMap) -> Self {
        let mut out = self.clone();
        for f in 0..self.bins {
            let src = self.bin(f).to_vec();
            let dst = out.bin_mut(f);
            for (n, &p) in perm.bin(f).iter().enumerate() {
                dst[n * self.frames..(n + 1) * self.frames].copy_from_slice(&src[p * self.frames..(p + 1) * self.frames]);
            }
        }
        out
    }
}

/// Per-bin source orderings: global source `n` in bin `f` is local source `perms[f][n]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationMap {
    perms: Vec<Vec<usize>>,
}

impl PermutationMap {
    pub fn identity(bins: usize, sources: usize) -> Self {
        Self { perms: vec![(0..sources).collect(); bins] }
    }

    pub fn from_vec(perms: Vec<Vec<usize>>) -> Self {
        assert!(perms.iter().all(|p| crate::perm::is_bijection(p)), "every entry must be a bijection");
        Self { perms }
    }

    pub fn bin(&self, f: usize) -> &[usize] {
        &self.perms[f]
    }

    pub fn bins(&self) -> usize {
        self.perms.len()
    }

    pub fn as_slice(&self) -> &[Vec<usize>] {
        &self.perms
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa > 0.0 && sbb > 0.0 {
        sab / (saa * sbb).sqrt()
    } else {
        0.0
    }
}

/// How far a bin's masks are from uniform; uniform bins carry no ordering information.
fn decisiveness(block: &[f64], sources: usize) -> f64 {
    let u = 1.0 / sources as f64;
    block.iter().map(|v| (v - u) * (v - u)).sum()
}

/// Greedy correlation-based permutation alignment.
///
/// Bins are visited in order of decreasing mask decisiveness. The most
/// decisive bin seeds one activation centroid per source; each later bin takes
/// the permutation whose envelopes correlate best with the centroids, then
/// joins the running means. A refinement pass re-decides every bin against
/// centroids that exclude it.
pub fn align_permutations(masks: &MaskTensor) -> Result<PermutationMap> {
    let (bins, n, k) = masks.shape();
    if n > MAX_PERMUTATION_SOURCES {
        return Err(DsfError::TooManySources { sources: n, max: MAX_PERMUTATION_SOURCES });
    }
    let mut result = PermutationMap::identity(bins, n);
    if bins == 0 || n <= 1 || k == 0 {
        return Ok(result);
    }
    let candidates = permutations(n);
    let scores: Vec<f64> = (0..bins).map(|f| decisiveness(masks.bin(f), n)).collect();
    let mut order: Vec<usize> = (0..bins).filter(|&f| scores[f] > 0.0).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let Some(&first) = order.first() else {
        return Ok(result);
    };

    let envelope = |f: usize, src: usize| &masks.bin(f)[src * k..(src + 1) * k];
    let mut sums: Vec<Vec<f64>> = (0..n).map(|src| envelope(first, src).to_vec()).collect();
    let mut count = 1usize;

    let best_perm = |f: usize, sums: &[Vec<f64>]| -> Vec<usize> {
        // corr[local][global]
        let corr: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|g| pearson(envelope(f, i), &sums[g])).collect()).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for (idx, p) in candidates.iter().enumerate() {
            let s: f64 = p.iter().enumerate().map(|(g, &i)| corr[i][g]).sum();
            if s > best.0 {
                best = (s, idx);
            }
        }
        candidates[best.1].clone()
    };
    let accumulate = |sums: &mut [Vec<f64>], f: usize, p: &[usize], sign: f64| {
        for (g, &i) in p.iter().enumerate() {
            for (acc, v) in sums[g].iter_mut().zip(envelope(f, i)) {
                *acc += sign * v;
            }
        }
    };

    for &f in &order[1..] {
        let p = best_perm(f, &sums);
        accumulate(&mut sums, f, &p, 1.0);
        count += 1;
        result.perms[f] = p;
    }
    // Pearson correlation is scale-invariant, so running sums stand in for means.
    debug_assert!(count == order.len());

    for _ in 0..2 {
        let mut changed = false;
        for &f in &order {
            let old = result.perms[f].clone();
            accumulate(&mut sums, f, &old, -1.0);
            let p = best_perm(f, &sums);
            accumulate(&mut sums, f, &p, 1.0);
            if p != old {
                changed = true;
                result.perms[f] = p;
            }
        }
        if !changed {
            break;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::C64;
    use crate::perm::is_bijection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn beta_zero_is_uniform() {
        let h = CMat::identity(2);
        let frames = CMat::from_columns(2, &[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(0.6, 0.0), c(0.0, 0.8)]]);
        let m = softargmax_mask(&h, &frames, 0.0).unwrap();
        assert!(m.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn large_beta_is_one_hot() {
        let h = CMat::identity(2);
        let frames = CMat::from_columns(2, &[vec![c(0.6, 0.0), c(0.0, 0.8)]]);
        let m = softargmax_mask(&h, &frames, 1e4).unwrap();
        assert!(m[0] < 1e-9 && (m[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_of_scaled_similarities() {
        // u = (1, 0.5, 0) for x = e1 with columns e1, (e1+e2)/√2, e2
        let s = 1.0 / 2f64.sqrt();
        let h = CMat::from_columns(2, &[vec![c(1.0, 0.0), c(0.0, 0.0)], vec![c(s, 0.0), c(s, 0.0)], vec![c(0.0, 0.0), c(1.0, 0.0)]]);
        let frames = CMat::from_columns(2, &[vec![c(1.0, 0.0), c(0.0, 0.0)]]);
        let m = softargmax_mask(&h, &frames, 12.5).unwrap();
        let z = [12.5f64.exp(), 6.25f64.exp(), 1.0];
        let total: f64 = z.iter().sum();
        for i in 0..3 {
            assert!((m[i] - z[i] / total).abs() < 1e-15);
        }
    }

    #[test]
    fn mask_partition_and_column_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = CMat::from_fn(3, 4, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let frames = CMat::from_fn(3, 30, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let m = softargmax_mask(&h, &frames, 12.5).unwrap();
        for k in 0..30 {
            let s: f64 = (0..4).map(|n| m[n * 30 + k]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let mut scaled = h.clone();
        scaled.col_mut(1).iter_mut().for_each(|v| *v *= c(0.0, -3.0));
        let m2 = softargmax_mask(&scaled, &frames, 12.5).unwrap();
        for (a, b) in m.iter().zip(&m2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn envelopes(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..k).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
    }

    fn tensor_from(bins: &[Vec<Vec<f64>>]) -> MaskTensor {
        let n = bins[0].len();
        let k = bins[0][0].len();
        let mut t = MaskTensor::uniform(bins.len(), n, k);
        for (f, b) in bins.iter().enumerate() {
            // normalize into a partition of unity
            let block = t.bin_mut(f);
            for j in 0..k {
                let s: f64 = b.iter().map(|e| e[j]).sum();
                for i in 0..n {
                    block[i * k + j] = b[i][j] / s;
                }
            }
        }
        t
    }

    #[test]
    fn detects_constructed_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let env = envelopes(&mut rng, 3, 200);
        let swapped = vec![env[2].clone(), env[0].clone(), env[1].clone()];
        let masks = tensor_from(&[env, swapped]);
        let perm = align_permutations(&masks).unwrap();
        let aligned = masks.permuted(&perm);
        assert_eq!(aligned.bin(0), aligned.bin(1));
    }

    #[test]
    fn single_bin_and_noise_give_bijections() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let masks = tensor_from(&[envelopes(&mut rng, 3, 50)]);
        assert_eq!(align_permutations(&masks).unwrap(), PermutationMap::identity(1, 3));
        let bins: Vec<_> = (0..12).map(|_| envelopes(&mut rng, 4, 40)).collect();
        let perm = align_permutations(&tensor_from(&bins)).unwrap();
        assert!(perm.as_slice().iter().all(|p| is_bijection(p)));
    }

    #[test]
    fn refuses_too_many_sources() {
        let masks = MaskTensor::uniform(1, 9, 2);
        assert_eq!(align_permutations(&masks).unwrap_err(), DsfError::TooManySources { sources: 9, max: 8 });
    }

    #[test]
    fn set_bin_fills_dropped_frames_uniformly() {
        let mut t = MaskTensor::uniform(1, 2, 3);
        t.set_bin(0, &[1.0, 0.0, 0.0, 1.0], &[0, 2]);
        assert_eq!(t.bin(0), &[1.0, 0.5, 0.0, 0.0, 0.5, 1.0]);
        assert!(t.partition_error() < 1e-15);
    }
}
