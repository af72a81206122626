//! Hyper-parameters shared by the estimation pipeline.

use crate::cost::{LehmerParams, Objective};
use crate::error::{DsfError, Result};
use crate::khl::{DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use crate::lbfgs::LbfgsOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Weighted Lehmer mean with learnable weights.
    Wlm,
    /// Unweighted power mean.
    Pm,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Wlm => "wlm",
            Method::Pm => "pm",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Optimize through the semi-unitary projection.
    Project,
    Off,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsfConfig {
    pub method: Method,
    pub r: f64,
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub fft_size: usize,
    pub overlap: f64,
    pub n_sources: usize,
    pub constraint: Constraint,
    pub lbfgs: LbfgsOptions,
    pub khl_restarts: usize,
    pub khl_max_iter: usize,
    pub seed: u64,
    /// Worker threads; `None` uses all available parallelism.
    pub workers: Option<usize>,
}

impl DsfConfig {
    pub fn new(n_sources: usize) -> Self {
        Self {
            method: Method::Wlm,
            r: 0.5,
            alpha: 10.0,
            p: -0.2,
            beta: 12.5,
            fft_size: 2048,
            overlap: 0.75,
            n_sources,
            constraint: Constraint::Project,
            lbfgs: LbfgsOptions::default(),
            khl_restarts: DEFAULT_RESTARTS,
            khl_max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        LehmerParams::new(self.r, self.alpha)?;
        if !(self.p < 0.0 && self.p.is_finite()) {
            return Err(DsfError::Config("p must be negative"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(DsfError::Config("beta must be finite and nonnegative"));
        }
        if !(0.5..=0.9375).contains(&self.overlap) {
            return Err(DsfError::Config("overlap must lie in [0.5, 0.9375]"));
        }
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(DsfError::Config("fft_size must be a power of two"));
        }
        if self.hop() == 0 || !self.fft_size.is_multiple_of(self.hop()) {
            return Err(DsfError::Config("overlap must give a hop that divides fft_size"));
        }
        if self.n_sources == 0 {
            return Err(DsfError::Config("n_sources must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(DsfError::Config("workers must be at least 1"));
        }
        self.lbfgs.validate()
    }

    /// Hop size in samples.
    pub fn hop(&self) -> usize {
        (self.fft_size as f64 * (1.0 - self.overlap)).round() as usize
    }

    pub fn objective(&self) -> Result<Objective> {
        Ok(match self.method {
            Method::Wlm => Objective::Wlm(LehmerParams::new(self.r, self.alpha)?),
            Method::Pm => Objective::Pm { p: self.p },
        })
    }
}
