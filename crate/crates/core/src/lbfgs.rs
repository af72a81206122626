//! Limited-memory BFGS with a strong-Wolfe line search.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{DsfError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iter: usize,
    /// Infinity-norm gradient threshold.
    pub grad_tol: f64,
    /// Relative cost change below which the run is considered stalled.
    pub cost_rel_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iter: 500, grad_tol: 1e-6, cost_rel_tol: 1e-10, c1: 1e-4, c2: 0.9, max_line_search: 25 }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(DsfError::Config("line search constants must satisfy 0 < c1 < c2 < 1"));
        }
        if self.memory == 0 {
            return Err(DsfError::Config("L-BFGS memory must be at least 1"));
        }
        if self.max_line_search == 0 {
            return Err(DsfError::Config("line search needs at least one step"));
        }
        if !(self.grad_tol >= 0.0) || !(self.cost_rel_tol >= 0.0) {
            return Err(DsfError::Config("tolerances must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    CostStall,
    MaxIter,
    LineSearchFailure,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Gradient => "gradient",
            Termination::CostStall => "cost-stall",
            Termination::MaxIter => "max-iter",
            Termination::LineSearchFailure => "line-search-failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimReport {
    pub iterations: usize,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub termination: Termination,
    /// Cost at the start point followed by the cost after every accepted step.
    pub cost_history: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

fn axpy(x: &[f64], step: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + step * b).collect()
}

/// Evaluates and screens a trial point; `None` marks a failed or non-finite evaluation.
fn probe<F>(f: &mut F, x: Vec<f64>) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    match f(&x) {
        Ok((fx, g)) if fx.is_finite() && g.len() == x.len() && g.iter().all(|v| v.is_finite()) => Some(Point { x, f: fx, g }),
        _ => None,
    }
}

/// Minimizes `f` from `x0`.
///
/// `f` returns the cost and its gradient. A failed or non-finite evaluation
/// during a line search shrinks the step; if no acceptable step is found the
/// run ends with [`Termination::LineSearchFailure`] at the best point so far.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<(Vec<f64>, OptimReport)>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    opts.validate()?;
    let (f0, g0) = f(x0)?;
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(DsfError::NonFinite { context: "objective at the start point" });
    }
    if g0.len() != x0.len() {
        return Err(DsfError::LengthMismatch { expected: x0.len(), found: g0.len() });
    }
    let mut cur = Point { x: x0.to_vec(), f: f0, g: g0 };
    let mut history = vec![cur.f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let termination = loop {
        if inf_norm(&cur.g) <= opts.grad_tol {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iter {
            break Termination::MaxIter;
        }

        let mut steepest = pairs.is_empty();
        let mut dir = if steepest { cur.g.iter().map(|v| -v).collect() } else { two_loop(&cur.g, &pairs) };
        if dot(&dir, &cur.g) >= 0.0 {
            pairs.clear();
            steepest = true;
            dir = cur.g.iter().map(|v| -v).collect();
        }
        let initial = if steepest { 1.0 / dot(&cur.g, &cur.g).sqrt().max(1e-300) } else { 1.0 };

        let next = match line_search(&mut f, &cur, &dir, initial, opts) {
            Some(p) => p,
            None if !steepest => {
                // One retry from steepest descent with a fresh memory.
                pairs.clear();
                let dir: Vec<f64> = cur.g.iter().map(|v| -v).collect();
                let initial = 1.0 / dot(&cur.g, &cur.g).sqrt().max(1e-300);
                match line_search(&mut f, &cur, &dir, initial, opts) {
                    Some(p) => p,
                    None => break Termination::LineSearchFailure,
                }
            }
            None => break Termination::LineSearchFailure,
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&cur.g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let bound = 1e-10 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if sy > bound {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let prev_f = cur.f;
        cur = next;
        history.push(cur.f);
        let scale = prev_f.abs().max(cur.f.abs()).max(1.0);
        if (prev_f - cur.f).abs() <= opts.cost_rel_tol * scale {
            break if inf_norm(&cur.g) <= opts.grad_tol { Termination::Gradient } else { Termination::CostStall };
        }
    };

    let report = OptimReport {
        iterations,
        final_cost: cur.f,
        final_grad_norm: inf_norm(&cur.g),
        termination,
        cost_history: history,
    };
    Ok((cur.x, report))
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian `H`.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; pairs.len()];
    for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alphas[i] = a;
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
    }
    let (s, y, _) = pairs.back().expect("two_loop needs at least one pair");
    let gamma = dot(s, y) / dot(y, y);
    q.iter_mut().for_each(|v| *v *= gamma);
    for (i, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        let a = alphas[i];
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizer of the cubic through `(a, fa, ga)` and `(b, fb, gb)`, safeguarded
/// to the interior of the bracket.
fn cubic_step(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (hi - lo);
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
    if t.is_finite() && t >= lo + margin && t <= hi - margin {
        t
    } else {
        mid
    }
}

/// Relative cost tolerance under which function values are treated as flat.
const FLAT_TOL: f64 = 1e-13;

/// Near convergence the Armijo test is swamped by rounding; accept a point
/// that does not measurably increase the cost and meets the curvature test.
fn approx_wolfe(phi0: f64, dphi0: f64, value: f64, slope: f64, opts: &LbfgsOptions) -> bool {
    value <= phi0 + FLAT_TOL * phi0.abs() && slope.abs() <= -opts.c2 * dphi0
}

/// Strong-Wolfe line search along `dir`.
fn line_search<F>(f: &mut F, cur: &Point, dir: &[f64], initial: f64, opts: &LbfgsOptions) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let phi0 = cur.f;
    let dphi0 = dot(&cur.g, dir);
    if !(dphi0 < 0.0) {
        return None;
    }
    let armijo = |step: f64, value: f64| value <= phi0 + opts.c1 * step * dphi0;
    let curvature = |slope: f64| slope.abs() <= -opts.c2 * dphi0;

    // (step, value, slope) of the previous trial.
    let mut prev = (0.0, phi0, dphi0);
    let mut step = initial;
    let mut evals = 0;
    while evals < opts.max_line_search {
        evals += 1;
        let trial = probe(f, axpy(&cur.x, step, dir));
        let Some(trial) = trial else {
            // Undefined region: the bracket ends before `step`.
            return zoom(f, cur, dir, prev, (step, f64::INFINITY, f64::NAN), opts, evals);
        };
        let slope = dot(&trial.g, dir);
        if approx_wolfe(phi0, dphi0, trial.f, slope, opts) {
            return Some(trial);
        }
        if !armijo(step, trial.f) || (evals > 1 && trial.f >= prev.1) {
            return zoom(f, cur, dir, prev, (step, trial.f, slope), opts, evals);
        }
        if curvature(slope) {
            return Some(trial);
        }
        if slope >= 0.0 {
            return zoom(f, cur, dir, (step, trial.f, slope), prev, opts, evals);
        }
        prev = (step, trial.f, slope);
        step *= 2.0;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f: &mut F,
    cur: &Point,
    dir: &[f64],
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    opts: &LbfgsOptions,
    mut evals: usize,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let phi0 = cur.f;
    let dphi0 = dot(&cur.g, dir);
    let mut best: Option<Point> = None;
    while evals < opts.max_line_search {
        evals += 1;
        let step = if hi.1.is_finite() && hi.2.is_finite() {
            cubic_step(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        if (hi.0 - lo.0).abs() <= 1e-16 * lo.0.abs().max(1e-16) {
            break;
        }
        let Some(trial) = probe(f, axpy(&cur.x, step, dir)) else {
            hi = (step, f64::INFINITY, f64::NAN);
            continue;
        };
        let slope = dot(&trial.g, dir);
        if approx_wolfe(phi0, dphi0, trial.f, slope, opts) {
            return Some(trial);
        }
        if trial.f > phi0 + opts.c1 * step * dphi0 || trial.f >= lo.1 {
            hi = (step, trial.f, slope);
        } else {
            if slope.abs() <= -opts.c2 * dphi0 {
                return Some(trial);
            }
            if slope * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (step, trial.f, slope);
            best = Some(trial);
        }
    }
    // Fall back to the best sufficient-decrease point found, if any.
    best.filter(|p| p.f < phi0)
}

/// Central finite-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_gradient<F>(mut cost: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(DsfError::Config("finite-difference step must be positive"));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = cost(&probe)?;
        probe[i] = x[i] - step;
        let minus = cost(&probe)?;
        probe[i] = x[i];
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic<'a>(a: &'a [[f64; 5]; 5], b: &'a [f64; 5]) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> + 'a {
        move |x: &[f64]| {
            let ax: Vec<f64> = (0..5).map(|i| (0..5).map(|j| a[i][j] * x[j]).sum()).collect();
            let f = 0.5 * dot(x, &ax) - dot(b, x);
            let g = ax.iter().zip(b).map(|(p, q)| p - q).collect();
            Ok((f, g))
        }
    }

    /// Solves `a x = b` by Gaussian elimination with partial pivoting.
    fn solve(a: &[[f64; 5]; 5], b: &[f64; 5]) -> [f64; 5] {
        let mut m = *a;
        let mut v = *b;
        for col in 0..5 {
            let piv = (col..5).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            m.swap(col, piv);
            v.swap(col, piv);
            for row in (col + 1)..5 {
                let factor = m[row][col] / m[col][col];
                for k in col..5 {
                    m[row][k] -= factor * m[col][k];
                }
                v[row] -= factor * v[col];
            }
        }
        let mut x = [0.0; 5];
        for row in (0..5).rev() {
            let s: f64 = ((row + 1)..5).map(|k| m[row][k] * x[k]).sum();
            x[row] = (v[row] - s) / m[row][row];
        }
        x
    }

    fn spd() -> ([[f64; 5]; 5], [f64; 5]) {
        // A = B^T B + I for a fixed B
        let bm = [
            [1.0, 2.0, 0.0, -1.0, 0.5],
            [0.0, 1.0, 3.0, 0.0, -2.0],
            [2.0, 0.0, 1.0, 1.0, 0.0],
            [-1.0, 0.5, 0.0, 2.0, 1.0],
            [0.0, -1.0, 1.0, 0.0, 3.0],
        ];
        let mut a = [[0.0; 5]; 5];
        for i in 0..5 {
            for j in 0..5 {
                a[i][j] = (0..5).map(|k| bm[k][i] * bm[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        (a, [1.0, -2.0, 0.5, 3.0, -1.0])
    }

    #[test]
    fn quadratic_matches_linear_solve() {
        let (a, b) = spd();
        let opts = LbfgsOptions { grad_tol: 1e-9, cost_rel_tol: 0.0, ..Default::default() };
        let (x, report) = minimize(quadratic(&a, &b), &[0.0; 5], &opts).unwrap();
        let exact = solve(&a, &b);
        let err: f64 = x.iter().zip(&exact).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-8, "error {err}");
        assert!(report.iterations <= 30, "{} iterations", report.iterations);
        assert_eq!(report.termination, Termination::Gradient);
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            Ok((f, g))
        };
        let opts = LbfgsOptions { grad_tol: 1e-10, cost_rel_tol: 0.0, ..Default::default() };
        let (x, report) = minimize(f, &[-1.2, 1.0], &opts).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6, "{x:?}");
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn stationary_start() {
        let f = |x: &[f64]| Ok((x.iter().map(|v| v * v).sum::<f64>(), x.iter().map(|v| 2.0 * v).collect()));
        let (x, report) = minimize(f, &[0.0, 0.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
        assert_eq!(report.iterations, 0);
        assert_eq!(report.termination, Termination::Gradient);
    }

    #[test]
    fn non_finite_start_rejected() {
        let f = |_: &[f64]| Ok((f64::NAN, vec![0.0]));
        assert!(minimize(f, &[1.0], &LbfgsOptions::default()).is_err());
    }

    #[test]
    fn undefined_region_keeps_best_point() {
        // Defined only for x > 0.5; minimum of (x - 0.6)^2 lies inside.
        let f = |x: &[f64]| {
            if x[0] <= 0.5 {
                Err(DsfError::NonFinite { context: "test" })
            } else {
                Ok(((x[0] - 0.6).powi(2), vec![2.0 * (x[0] - 0.6)]))
            }
        };
        let (x, report) = minimize(f, &[3.0], &LbfgsOptions::default()).unwrap();
        assert!(x[0] > 0.5);
        assert!(report.final_cost <= report.cost_history[0]);
    }

    #[test]
    fn options_validation() {
        let bad = LbfgsOptions { c1: 0.9, c2: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = LbfgsOptions { memory: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn finite_differences() {
        let x = [0.3, -1.2, 2.0];
        let g = finite_diff_gradient(|v| Ok(v.iter().map(|a| a * a).sum()), &x, 1e-6).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - 2.0 * xi).abs() < 1e-8);
        }
        let g = finite_diff_gradient(|_| Ok(4.0), &x, 1e-6).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        assert!(finite_diff_gradient(|_| Ok(0.0), &x, 0.0).is_err());
    }
}
