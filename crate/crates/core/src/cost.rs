//! Directional sparse filtering costs and their gradients.
//!
//! All costs are built on the phase-invariant cosine distance between a
//! mixing column `h_n` and a frame `x_k`,
//!
//! ```text
//! D[n,k] = 1 - |h_n^H x_k|^2 / (|h_n|^2 |x_k|^2)
//! ```
//!
//! aggregated per frame with a soft minimum (power mean or weighted Lehmer
//! mean) and averaged over frames.
//!
//! Complex gradients follow the real-packing convention: for a real cost `J`
//! of a complex matrix `H`, the returned matrix `G` has `Re G = dJ/d(Re H)` and
//! `Im G = dJ/d(Im H)`, so that `dJ = Re tr(G^H dH)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{DsfError, Result};
use crate::linalg::{dot_h, hermitian_eig, norm_sqr, CMat, C64};

/// Floor applied to every distance before it enters a power with a negative
/// exponent.
pub const EPS_D: f64 = 1e-12;

/// Relative floor on the eigenvalues of `H̃ H̃^H` below which the projection is
/// considered rank deficient.
pub const PROJECTION_FLOOR: f64 = 1e-12;

/// Hyper-parameters of the weighted Lehmer mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LehmerParams {
    r: f64,
    alpha: f64,
}

impl LehmerParams {
    /// `r` must lie strictly inside (0, 1) and `alpha` must be nonnegative.
    pub fn new(r: f64, alpha: f64) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) {
            return Err(DsfError::Config("r must lie in (0, 1)"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(DsfError::Config("alpha must be finite and nonnegative"));
        }
        Ok(Self { r, alpha })
    }

    #[inline]
    pub fn r(&self) -> f64 {
        self.r
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Learnable per-source weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    /// Effective weights `max(w_n + alpha, alpha)`.
    pub fn effective(&self, alpha: f64) -> Vec<f64> {
        effective_weights(&self.0, alpha)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn effective_weights(w: &[f64], alpha: f64) -> Vec<f64> {
    w.iter().map(|&wn| (wn + alpha).max(alpha)).collect()
}

/// Initial weights: every entry `K + (N - 1) alpha`.
pub fn init_weights(n_sources: usize, n_frames: usize, alpha: f64) -> WeightVector {
    WeightVector(vec![n_frames as f64 + (n_sources as f64 - 1.0) * alpha; n_sources])
}

/// Cosine-squared similarity of `x` to every column of `h`.
pub fn angular_vector(h: &CMat, x: &[C64]) -> Result<Vec<f64>> {
    if x.len() != h.rows() {
        return Err(DsfError::Shape { expected: (h.rows(), 1), found: (x.len(), 1) });
    }
    let xn = norm_sqr(x);
    let mut u = Vec::with_capacity(h.cols());
    for (n, col) in h.columns().enumerate() {
        let hn = norm_sqr(col);
        if hn == 0.0 {
            return Err(DsfError::ZeroColumn { col: n });
        }
        let c = dot_h(col, x);
        u.push(if xn == 0.0 { 0.0 } else { (c.norm_sqr() / (hn * xn)).clamp(0.0, 1.0) });
    }
    Ok(u)
}

/// Per-frame correlations and distances, laid out frame-major (`k * N + n`).
struct Distances {
    n: usize,
    corr: Vec<C64>,
    dist: Vec<f64>,
    col_norm_sqr: Vec<f64>,
    frame_norm_sqr: Vec<f64>,
}

impl Distances {
    fn compute(h: &CMat, frames: &CMat) -> Result<Self> {
        if h.rows() != frames.rows() {
            return Err(DsfError::Shape { expected: (h.rows(), frames.cols()), found: frames.shape() });
        }
        let n = h.cols();
        let col_norm_sqr: Vec<f64> = h.columns().map(norm_sqr).collect();
        if let Some(col) = col_norm_sqr.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(DsfError::ZeroColumn { col });
        }
        let k = frames.cols();
        let mut corr = Vec::with_capacity(n * k);
        let mut dist = Vec::with_capacity(n * k);
        let mut frame_norm_sqr = Vec::with_capacity(k);
        for x in frames.columns() {
            let xn = norm_sqr(x);
            frame_norm_sqr.push(xn);
            for (col, &hn) in h.columns().zip(&col_norm_sqr) {
                let c = dot_h(col, x);
                corr.push(c);
                let u = if xn == 0.0 { 0.0 } else { c.norm_sqr() / (hn * xn) };
                dist.push(1.0 - u);
            }
        }
        Ok(Self { n, corr, dist, col_norm_sqr, frame_norm_sqr })
    }

    fn frames(&self) -> usize {
        self.frame_norm_sqr.len()
    }

    #[inline]
    fn row(&self, k: usize) -> &[f64] {
        &self.dist[k * self.n..(k + 1) * self.n]
    }
}

/// Weighted Lehmer mean of one distance row: `Σ ω D^r / Σ ω D^(r-1)`, with
/// `D` floored at [`EPS_D`].
pub fn lehmer_frame_term(d: &[f64], omega: &[f64], r: f64) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (&dn, &wn) in d.iter().zip(omega) {
        let dn = dn.max(EPS_D);
        let p = dn.powf(r - 1.0);
        num += wn * p * dn;
        den += wn * p;
    }
    num / den
}

/// Power mean of one distance row: `((1/N) Σ D^p)^(1/p)`.
pub fn power_frame_term(d: &[f64], p: f64) -> f64 {
    let s: f64 = d.iter().map(|&dn| dn.max(EPS_D).powf(p)).sum::<f64>() / d.len() as f64;
    s.powf(1.0 / p)
}

fn check_p(p: f64) -> Result<()> {
    if p < 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(DsfError::Config("power-mean exponent p must be negative"))
    }
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(DsfError::Shape { expected: (n, 1), found: (w.len(), 1) });
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(DsfError::NonFinite { context: "weight vector" });
    }
    Ok(())
}

fn mean_of_terms(dist: &Distances, mut term: impl FnMut(&[f64]) -> f64) -> Result<f64> {
    let k = dist.frames();
    let mut total = 0.0;
    for frame in 0..k {
        let t = term(dist.row(frame));
        if !t.is_finite() {
            return Err(DsfError::NonFiniteCost { frame });
        }
        total += t;
    }
    Ok(total / k as f64)
}

/// Unweighted power-mean cost.
pub fn cost_pm(h: &CMat, frames: &CMat, p: f64) -> Result<f64> {
    check_p(p)?;
    let dist = Distances::compute(h, frames)?;
    mean_of_terms(&dist, |row| power_frame_term(row, p))
}

/// Weighted Lehmer-mean cost.
pub fn cost_wlm(h: &CMat, frames: &CMat, w: &WeightVector, params: LehmerParams) -> Result<f64> {
    check_weights(&w.0, h.cols())?;
    let omega = w.effective(params.alpha);
    let dist = Distances::compute(h, frames)?;
    mean_of_terms(&dist, |row| lehmer_frame_term(row, &omega, params.r))
}

/// Weighted power-mean cost with effective weights normalized to sum to one.
///
/// Evaluation only; no gradient is provided.
pub fn cost_wpm(h: &CMat, frames: &CMat, w: &WeightVector, p: f64, alpha: f64) -> Result<f64> {
    check_p(p)?;
    check_weights(&w.0, h.cols())?;
    let omega = w.effective(alpha);
    let total: f64 = omega.iter().sum();
    if !(total > 0.0) {
        return Err(DsfError::ZeroTotalWeight);
    }
    let dist = Distances::compute(h, frames)?;
    mean_of_terms(&dist, |row| {
        let s: f64 = row.iter().zip(&omega).map(|(&d, &wn)| wn * d.max(EPS_D).powf(p)).sum();
        (s / total).powf(1.0 / p)
    })
}

/// Accumulates `Σ_k coef[n,k] * dD[n,k]/dh_n` given per-(frame, source)
/// coefficients `dJ/dD`.
fn column_gradient(h: &CMat, frames: &CMat, dist: &Distances, coef: &[f64]) -> CMat {
    let (m, n) = h.shape();
    let mut g = CMat::zeros(m, n);
    // dD/dh = -(2 conj(c) x) / (|h|^2 |x|^2) + 2 |c|^2 h / (|h|^4 |x|^2)
    let mut radial = vec![0.0; n];
    for (k, x) in frames.columns().enumerate() {
        let xn = dist.frame_norm_sqr[k];
        if xn == 0.0 {
            continue;
        }
        for src in 0..n {
            let a = coef[k * n + src];
            if a == 0.0 {
                continue;
            }
            let c = dist.corr[k * n + src];
            let s = -2.0 * a / (dist.col_norm_sqr[src] * xn);
            let scaled = c.conj() * s;
            for (gi, xi) in g.col_mut(src).iter_mut().zip(x) {
                *gi += xi * scaled;
            }
            radial[src] += a * c.norm_sqr() / xn;
        }
    }
    for src in 0..n {
        let hn = dist.col_norm_sqr[src];
        let s = 2.0 * radial[src] / (hn * hn);
        let col = h.col(src).to_vec();
        for (gi, hi) in g.col_mut(src).iter_mut().zip(&col) {
            *gi += hi * s;
        }
    }
    g
}

/// Gradient of [`cost_wlm`] with respect to `h` (complex, real-packing
/// convention) and to the raw weights `w`.
///
/// The weight gradient is zero wherever `w_n <= 0`, where the effective weight
/// is clamped at `alpha`.
pub fn grad_wlm(h: &CMat, frames: &CMat, w: &WeightVector, params: LehmerParams) -> Result<(CMat, Vec<f64>)> {
    let (_, grad_h, grad_w) = wlm_value_and_grad(h, frames, &w.0, params)?;
    Ok((grad_h, grad_w))
}

fn wlm_value_and_grad(h: &CMat, frames: &CMat, w: &[f64], params: LehmerParams) -> Result<(f64, CMat, Vec<f64>)> {
    check_weights(w, h.cols())?;
    let n = h.cols();
    let r = params.r;
    let omega = effective_weights(w, params.alpha);
    let dist = Distances::compute(h, frames)?;
    let k_total = dist.frames();
    let inv_k = 1.0 / k_total as f64;

    let mut coef = vec![0.0; n * k_total];
    let mut grad_w = vec![0.0; n];
    let mut cost = 0.0;
    let mut pow_r1 = vec![0.0; n];
    for k in 0..k_total {
        let row = dist.row(k);
        let (mut num, mut den) = (0.0, 0.0);
        for src in 0..n {
            let d = row[src].max(EPS_D);
            pow_r1[src] = d.powf(r - 1.0);
            num += omega[src] * pow_r1[src] * d;
            den += omega[src] * pow_r1[src];
        }
        let lk = num / den;
        if !lk.is_finite() {
            return Err(DsfError::NonFiniteCost { frame: k });
        }
        cost += lk;
        for src in 0..n {
            let raw = row[src];
            let d = raw.max(EPS_D);
            // dL/dD_n = ω_n (r D^(r-1) - (r-1) D^(r-2) L) / Q
            if raw > EPS_D {
                let pr1 = pow_r1[src];
                coef[k * n + src] = inv_k * omega[src] * (r * pr1 - (r - 1.0) * pr1 / d * lk) / den;
            }
            // dL/dω_n = (D^r - D^(r-1) L) / Q
            grad_w[src] += (pow_r1[src] * d - pow_r1[src] * lk) / den;
        }
        if coef[k * n..(k + 1) * n].iter().any(|c| !c.is_finite()) {
            return Err(DsfError::NonFiniteGradient { frame: k });
        }
    }
    for (g, &wn) in grad_w.iter_mut().zip(w) {
        *g = if wn > 0.0 { *g * inv_k } else { 0.0 };
    }
    let grad_h = column_gradient(h, frames, &dist, &coef);
    Ok((cost * inv_k, grad_h, grad_w))
}

/// Gradient of [`cost_pm`] with respect to `h`.
pub fn grad_pm(h: &CMat, frames: &CMat, p: f64) -> Result<CMat> {
    Ok(pm_value_and_grad(h, frames, p)?.1)
}

fn pm_value_and_grad(h: &CMat, frames: &CMat, p: f64) -> Result<(f64, CMat)> {
    check_p(p)?;
    let n = h.cols();
    let dist = Distances::compute(h, frames)?;
    let k_total = dist.frames();
    let inv_k = 1.0 / k_total as f64;
    let inv_n = 1.0 / n as f64;
    let mut coef = vec![0.0; n * k_total];
    let mut cost = 0.0;
    for k in 0..k_total {
        let row = dist.row(k);
        let s: f64 = row.iter().map(|&d| d.max(EPS_D).powf(p)).sum::<f64>() * inv_n;
        let t = s.powf(1.0 / p);
        if !t.is_finite() {
            return Err(DsfError::NonFiniteCost { frame: k });
        }
        cost += t;
        // dT/dD_n = T^(1-p) (1/N) D_n^(p-1)
        let lead = t.powf(1.0 - p) * inv_n * inv_k;
        for src in 0..n {
            if row[src] > EPS_D {
                coef[k * n + src] = lead * row[src].powf(p - 1.0);
            }
        }
    }
    Ok((cost * inv_k, column_gradient(h, frames, &dist, &coef)))
}

/// Eigendecomposition-backed inverse square root of `H̃ H̃^H`.
struct Projection {
    values: Vec<f64>,
    vectors: CMat,
    inv_sqrt: CMat,
}

impl Projection {
    fn new(h_tilde: &CMat) -> Result<Self> {
        if !h_tilde.is_finite() {
            return Err(DsfError::NonFinite { context: "projection input" });
        }
        let gram = h_tilde.gram();
        let eig = hermitian_eig(&gram)?;
        let top = eig.values.first().copied().unwrap_or(0.0);
        let floor = PROJECTION_FLOOR * top;
        if !(top > 0.0) || eig.values.iter().any(|&l| l <= floor) {
            return Err(DsfError::ProjectionDegenerate);
        }
        let inv_sqrt = eig.map(|l| 1.0 / l.sqrt()).into_matrix();
        Ok(Self { values: eig.values, vectors: eig.vectors, inv_sqrt })
    }

    fn apply(&self, h_tilde: &CMat) -> CMat {
        self.inv_sqrt.matmul(h_tilde)
    }

    /// Pulls a gradient with respect to `H = S^{-1/2} H̃` back to `H̃`.
    fn pullback(&self, h_tilde: &CMat, grad_h: &CMat) -> CMat {
        let direct = self.inv_sqrt.matmul(grad_h);
        // Adjoint of the Fréchet derivative of S -> S^{-1/2}, evaluated at C = G H̃^H.
        let c = grad_h.mul_adjoint(h_tilde);
        let v = &self.vectors;
        let mut inner = v.adjoint().matmul(&c).matmul(v);
        let sq: Vec<f64> = self.values.iter().map(|l| l.sqrt()).collect();
        let m = sq.len();
        for j in 0..m {
            for i in 0..m {
                // (f(λi) - f(λj)) / (λi - λj) for f(λ) = λ^{-1/2}, in a form
                // that stays exact when λi == λj.
                let phi = -1.0 / (sq[i] * sq[j] * (sq[i] + sq[j]));
                inner[(i, j)] *= phi;
            }
        }
        let z = v.matmul(&inner).mul_adjoint(v);
        let sym = z.add(&z.adjoint());
        direct.add(&sym.matmul(h_tilde))
    }
}

/// Maps `H̃` to the nearest semi-unitary matrix `(H̃ H̃^H)^{-1/2} H̃`.
pub fn project_semiunitary(h_tilde: &CMat) -> Result<CMat> {
    Ok(Projection::new(h_tilde)?.apply(h_tilde))
}

/// Which soft-minimum aggregates the per-frame distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    /// Weighted Lehmer mean with learnable weights.
    Wlm(LehmerParams),
    /// Unweighted power mean with exponent `p < 0`.
    Pm { p: f64 },
}

impl Objective {
    pub fn has_weights(&self) -> bool {
        matches!(self, Objective::Wlm(_))
    }
}

/// Flat real parameter vector `[vec(Re H̃); vec(Im H̃); w]`.
///
/// `vec` is column-major. The weight block is absent for objectives without
/// learnable weights.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedParams {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl PackedParams {
    pub fn pack(h: &CMat, w: Option<&WeightVector>) -> Self {
        let mn = h.rows() * h.cols();
        let mut data = Vec::with_capacity(2 * mn + w.map_or(0, |w| w.len()));
        data.extend(h.as_slice().iter().map(|v| v.re));
        data.extend(h.as_slice().iter().map(|v| v.im));
        if let Some(w) = w {
            data.extend_from_slice(&w.0);
        }
        Self { rows: h.rows(), cols: h.cols(), data }
    }

    pub fn matrix_len(&self) -> usize {
        2 * self.rows * self.cols
    }

    pub fn has_weights(&self) -> bool {
        self.data.len() > self.matrix_len()
    }

    pub fn unpack(&self) -> Result<(CMat, Option<WeightVector>)> {
        let mn = self.rows * self.cols;
        let len = self.data.len();
        if len != 2 * mn && len != 2 * mn + self.cols {
            return Err(DsfError::Shape { expected: (2 * mn + self.cols, 1), found: (len, 1) });
        }
        Ok((unpack_matrix(self.rows, self.cols, &self.data), self.weights()))
    }

    fn weights(&self) -> Option<WeightVector> {
        self.has_weights().then(|| WeightVector(self.data[self.matrix_len()..].to_vec()))
    }
}

fn unpack_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    let mn = rows * cols;
    let values = (0..mn).map(|i| C64::new(data[i], data[mn + i])).collect();
    CMat::from_col_major(rows, cols, values)
}

fn pack_gradient(grad_h: &CMat, grad_w: Option<&[f64]>) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grad_h.as_slice().len() + grad_w.map_or(0, |g| g.len()));
    out.extend(grad_h.as_slice().iter().map(|v| v.re));
    out.extend(grad_h.as_slice().iter().map(|v| v.im));
    if let Some(g) = grad_w {
        out.extend_from_slice(g);
    }
    out
}

/// Cost and packed gradient at `packed`.
///
/// With `constrain`, the cost is evaluated at the semi-unitary projection of
/// `H̃` and the gradient is propagated through the projection.
pub fn objective_and_gradient(
    packed: &PackedParams,
    frames: &CMat,
    objective: Objective,
    constrain: bool,
) -> Result<(f64, PackedParams)> {
    let (h_tilde, w) = packed.unpack()?;
    if objective.has_weights() != w.is_some() {
        return Err(DsfError::Config("packed parameters do not match the objective's weight layout"));
    }
    let projection = if constrain { Some(Projection::new(&h_tilde)?) } else { None };
    let h = match &projection {
        Some(p) => p.apply(&h_tilde),
        None => h_tilde.clone(),
    };
    let (cost, grad_h, grad_w) = match objective {
        Objective::Wlm(params) => {
            let w = w.expect("checked above");
            let (c, gh, gw) = wlm_value_and_grad(&h, frames, &w.0, params)?;
            (c, gh, Some(gw))
        }
        Objective::Pm { p } => {
            let (c, gh) = pm_value_and_grad(&h, frames, p)?;
            (c, gh, None)
        }
    };
    let grad_h = match &projection {
        Some(p) => p.pullback(&h_tilde, &grad_h),
        None => grad_h,
    };
    let data = pack_gradient(&grad_h, grad_w.as_deref());
    if data.iter().any(|v| !v.is_finite()) {
        return Err(DsfError::NonFiniteGradient { frame: 0 });
    }
    Ok((cost, PackedParams { rows: packed.rows, cols: packed.cols, data }))
}

/// Cost only; used by finite-difference checks and diagnostics.
pub fn objective_value(packed: &PackedParams, frames: &CMat, objective: Objective, constrain: bool) -> Result<f64> {
    let (h_tilde, w) = packed.unpack()?;
    let h = if constrain { project_semiunitary(&h_tilde)? } else { h_tilde };
    match objective {
        Objective::Wlm(params) => {
            let w = w.ok_or(DsfError::Config("missing weights for the Lehmer objective"))?;
            cost_wlm(&h, frames, &w, params)
        }
        Objective::Pm { p } => cost_pm(&h, frames, p),
    }
}
