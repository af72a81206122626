//! K-hyperlines clustering of unit frames under the phase-invariant cosine
//! distance. Used to initialize the mixing matrix in every bin.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{DsfError, Result};
use crate::linalg::{canonicalize_phase, dot_h, norm, principal_eigvec, CMat, HermitianMatrix, C64};

pub const DEFAULT_RESTARTS: usize = 4;
pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Clone, Debug, PartialEq)]
pub struct KhlState {
    /// Unit-norm, phase-canonical line directions (`M x N`).
    pub lines: CMat,
    pub labels: Vec<usize>,
    /// Mean over frames of the distance to the assigned line.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment of the winning restart.
    pub inertia_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub labels: Vec<usize>,
    pub min_dist: Vec<f64>,
}

impl Assignment {
    pub fn inertia(&self) -> f64 {
        if self.min_dist.is_empty() {
            0.0
        } else {
            self.min_dist.iter().sum::<f64>() / self.min_dist.len() as f64
        }
    }
}

/// Assigns each frame to the closest line; ties go to the lowest index.
///
/// Lines and frames are expected to have unit norm.
pub fn khl_assign(lines: &CMat, frames: &CMat) -> Assignment {
    let mut labels = Vec::with_capacity(frames.cols());
    let mut min_dist = Vec::with_capacity(frames.cols());
    for x in frames.columns() {
        let mut best = (0, f64::INFINITY);
        for (n, h) in lines.columns().enumerate() {
            let d = 1.0 - dot_h(h, x).norm_sqr();
            if d < best.1 {
                best = (n, d);
            }
        }
        labels.push(best.0);
        min_dist.push(best.1.max(0.0));
    }
    Assignment { labels, min_dist }
}

/// Recomputes each line as the principal eigenvector of its cluster's scatter
/// matrix. Empty clusters are re-seeded from the frame farthest from its
/// current line.
pub fn khl_update(assignment: &Assignment, frames: &CMat, n_lines: usize) -> Result<CMat> {
    let m = frames.rows();
    let mut scatter = vec![CMat::zeros(m, m); n_lines];
    let mut counts = vec![0usize; n_lines];
    for (x, &label) in frames.columns().zip(&assignment.labels) {
        counts[label] += 1;
        let s = &mut scatter[label];
        for j in 0..m {
            let xj = x[j].conj();
            for i in 0..m {
                s[(i, j)] += x[i] * xj;
            }
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    let mut lines = CMat::zeros(m, n_lines);
    for n in 0..n_lines {
        let dir = if counts[n] == 0 {
            let far = assignment
                .min_dist
                .iter()
                .enumerate()
                .filter(|(k, _)| !taken.contains(k))
                .fold(None::<(usize, f64)>, |best, (k, &d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((k, d)),
                })
                .map(|(k, _)| k)
                .ok_or(DsfError::TooFewFrames { frames: frames.cols(), sources: n_lines })?;
            taken.push(far);
            unit_canonical(frames.col(far))
        } else {
            principal_eigvec(&HermitianMatrix::new(core::mem::replace(&mut scatter[n], CMat::zeros(0, 0)))?)?.vector
        };
        lines.col_mut(n).copy_from_slice(&dir);
    }
    Ok(lines)
}

fn unit_canonical(x: &[C64]) -> Vec<C64> {
    let n = norm(x);
    let mut v: Vec<C64> = x.iter().map(|v| v / n).collect();
    canonicalize_phase(&mut v);
    v
}

/// Best-inertia K-hyperlines result over `restarts` seeded initializations.
pub fn khl_run(frames: &CMat, n_sources: usize, seed: u64, restarts: usize, max_iter: usize) -> Result<KhlState> {
    let k = frames.cols();
    if n_sources == 0 || k < n_sources {
        return Err(DsfError::TooFewFrames { frames: k, sources: n_sources });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KhlState> = None;
    for _ in 0..restarts.max(1) {
        let picks = index::sample(&mut rng, k, n_sources);
        let cols: Vec<Vec<C64>> = picks.iter().map(|i| unit_canonical(frames.col(i))).collect();
        let state = run_once(frames, CMat::from_columns(frames.rows(), &cols), max_iter)?;
        if best.as_ref().is_none_or(|b| state.inertia < b.inertia) {
            best = Some(state);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn run_once(frames: &CMat, mut lines: CMat, max_iter: usize) -> Result<KhlState> {
    let n = lines.cols();
    let mut assignment = khl_assign(&lines, frames);
    let mut history = vec![assignment.inertia()];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        lines = khl_update(&assignment, frames, n)?;
        let next = khl_assign(&lines, frames);
        history.push(next.inertia());
        let unchanged = next.labels == assignment.labels;
        assignment = next;
        if unchanged {
            break;
        }
    }
    Ok(KhlState { lines, inertia: assignment.inertia(), labels: assignment.labels, iterations, inertia_history: history })
}
