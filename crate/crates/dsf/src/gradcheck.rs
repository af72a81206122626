//! Finite-difference verification of the analytic cost gradients.

use dsf_core::cost::{objective_and_gradient, objective_value, LehmerParams, Objective, PackedParams, WeightVector};
use dsf_core::lbfgs::finite_diff_gradient;
use dsf_core::linalg::{norm, CMat, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::report::{GradcheckCase, GradcheckReport, SCHEMA_VERSION};

pub const DEFAULT_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_FRAMES: usize = 64;
const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub frames: usize,
    pub tolerance: f64,
    /// Extra Lehmer order and power-mean exponent to include in the sweep.
    pub r: f64,
    pub alpha: f64,
    pub p: f64,
    /// Deliberately perturbs the analytic gradient (negative control).
    pub corrupt: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { seed: 0, frames: DEFAULT_FRAMES, tolerance: DEFAULT_TOLERANCE, r: 0.5, alpha: 10.0, p: -0.2, corrupt: false }
    }
}

fn random_instance(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize, with_weights: bool) -> (PackedParams, CMat) {
    let h = CMat::from_fn(m, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let mut frames = CMat::from_fn(m, k, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    for j in 0..k {
        let s = norm(frames.col(j));
        frames.col_mut(j).iter_mut().for_each(|v| *v /= s);
    }
    // Some negative weights exercise the max(w + α, α) kink's flat side.
    let w = with_weights.then(|| {
        let mut w: Vec<f64> = (0..n)
            .map(|_| if rng.random_bool(0.25) { rng.random_range(-5.0..-1.0) } else { rng.random_range(1.0..5.0) })
            .collect();
        w[0] = w[0].abs();
        WeightVector(w)
    });
    (PackedParams::pack(&h, w.as_ref()), frames)
}

fn relative_error(packed: &PackedParams, frames: &CMat, objective: Objective, constrain: bool, corrupt: bool) -> Result<f64> {
    let (_, mut analytic) = objective_and_gradient(packed, frames, objective, constrain)?;
    if corrupt {
        analytic.data.iter_mut().for_each(|g| *g *= 1.01);
    }
    let (rows, cols) = (packed.rows, packed.cols);
    let numeric = finite_diff_gradient(
        |x| objective_value(&PackedParams { rows, cols, data: x.to_vec() }, frames, objective, constrain),
        &packed.data,
        STEP,
    )?;
    let scale = numeric.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let diff = analytic.data.iter().zip(&numeric).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    Ok(diff / scale)
}

/// Sweeps M ∈ 2..=4, N ∈ 2..=5, several Lehmer orders and offsets, with and
/// without the semi-unitary constraint (the constraint needs N ≥ M), plus
/// power-mean instances.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rs = vec![0.1, 0.5, 0.9];
    if !rs.contains(&opts.r) {
        rs.push(opts.r);
    }
    let mut alphas = vec![0.0, 10.0];
    if !alphas.contains(&opts.alpha) {
        alphas.push(opts.alpha);
    }
    let mut cases = Vec::new();
    for m in 2..=4 {
        for n in 2..=5 {
            for constrained in [false, true] {
                if constrained && n < m {
                    continue;
                }
                for &r in &rs {
                    for &alpha in &alphas {
                        let (packed, frames) = random_instance(&mut rng, m, n, opts.frames, true);
                        let obj = Objective::Wlm(LehmerParams::new(r, alpha)?);
                        let err = relative_error(&packed, &frames, obj, constrained, opts.corrupt)?;
                        cases.push(GradcheckCase {
                            m,
                            n,
                            k: opts.frames,
                            objective: "wlm".into(),
                            r: Some(r),
                            alpha: Some(alpha),
                            p: None,
                            constrained,
                            max_rel_error: err,
                        });
                    }
                }
                let (packed, frames) = random_instance(&mut rng, m, n, opts.frames, false);
                let err = relative_error(&packed, &frames, Objective::Pm { p: opts.p }, constrained, opts.corrupt)?;
                cases.push(GradcheckCase {
                    m,
                    n,
                    k: opts.frames,
                    objective: "pm".into(),
                    r: None,
                    alpha: None,
                    p: Some(opts.p),
                    constrained,
                    max_rel_error: err,
                });
            }
        }
    }
    let worst_of = |constrained: bool| {
        cases.iter().filter(|c| c.constrained == constrained).map(|c| c.max_rel_error).fold(0.0f64, f64::max)
    };
    let (unc, con) = (worst_of(false), worst_of(true));
    let worst = cases
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .cloned()
        .expect("the sweep is never empty");
    Ok(GradcheckReport {
        schema_version: SCHEMA_VERSION,
        kind: "gradcheck".into(),
        seed: opts.seed,
        instances: cases.len(),
        tolerance: opts.tolerance,
        max_rel_error_unconstrained: unc,
        max_rel_error_constrained: con,
        passed: worst.max_rel_error < opts.tolerance,
        worst,
    })
}
