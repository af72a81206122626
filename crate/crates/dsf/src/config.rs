//! Configuration files (TOML) and their merge with command-line overrides.

use std::path::Path;

use dsf_core::lbfgs::LbfgsOptions;
use dsf_core::{Constraint, DsfConfig, Method};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::WindowKind;

/// Every field optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub method: Option<String>,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub beta: Option<f64>,
    pub fft_size: Option<usize>,
    pub overlap: Option<f64>,
    pub window: Option<String>,
    pub n_sources: Option<usize>,
    pub constraint: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub khl_restarts: Option<usize>,
    pub khl_max_iter: Option<usize>,
    pub lbfgs: Option<LbfgsFile>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsFile {
    pub memory: Option<usize>,
    pub max_iter: Option<usize>,
    pub grad_tol: Option<f64>,
    pub cost_rel_tol: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub max_line_search: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|message| Error::Parse { path: path.to_path_buf(), message })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Layers `overrides` on top of `self`: any field set there wins.
    pub fn merge(self, overrides: ConfigFile) -> ConfigFile {
        let lbfgs = match (self.lbfgs, overrides.lbfgs) {
            (Some(a), Some(b)) => Some(LbfgsFile {
                memory: b.memory.or(a.memory),
                max_iter: b.max_iter.or(a.max_iter),
                grad_tol: b.grad_tol.or(a.grad_tol),
                cost_rel_tol: b.cost_rel_tol.or(a.cost_rel_tol),
                c1: b.c1.or(a.c1),
                c2: b.c2.or(a.c2),
                max_line_search: b.max_line_search.or(a.max_line_search),
            }),
            (a, b) => b.or(a),
        };
        ConfigFile {
            method: overrides.method.or(self.method),
            r: overrides.r.or(self.r),
            alpha: overrides.alpha.or(self.alpha),
            p: overrides.p.or(self.p),
            beta: overrides.beta.or(self.beta),
            fft_size: overrides.fft_size.or(self.fft_size),
            overlap: overrides.overlap.or(self.overlap),
            window: overrides.window.or(self.window),
            n_sources: overrides.n_sources.or(self.n_sources),
            constraint: overrides.constraint.or(self.constraint),
            seed: overrides.seed.or(self.seed),
            workers: overrides.workers.or(self.workers),
            khl_restarts: overrides.khl_restarts.or(self.khl_restarts),
            khl_max_iter: overrides.khl_max_iter.or(self.khl_max_iter),
            lbfgs,
        }
    }

    /// Fills defaults and validates.
    pub fn resolve(&self) -> Result<RunConfig> {
        let n = self.n_sources.ok_or_else(|| Error::Config("the number of sources is required (-n / n_sources)".into()))?;
        let mut cfg = DsfConfig::new(n);
        if let Some(m) = &self.method {
            cfg.method = parse_method(m)?;
        }
        if let Some(c) = &self.constraint {
            cfg.constraint = parse_constraint(c)?;
        }
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = self.$field { cfg.$field = v; })* };
        }
        set!(r, alpha, p, beta, fft_size, overlap, seed, khl_restarts, khl_max_iter);
        cfg.workers = self.workers;
        if let Some(l) = &self.lbfgs {
            let o: &mut LbfgsOptions = &mut cfg.lbfgs;
            macro_rules! set_l {
                ($($field:ident),*) => { $(if let Some(v) = l.$field { o.$field = v; })* };
            }
            set_l!(memory, max_iter, grad_tol, cost_rel_tol, c1, c2, max_line_search);
        }
        let window = match &self.window {
            Some(w) => w.parse()?,
            None => WindowKind::Hamming,
        };
        cfg.validate()?;
        Ok(RunConfig { dsf: cfg, window })
    }
}

pub fn parse_method(s: &str) -> Result<Method> {
    match s {
        "wlm" => Ok(Method::Wlm),
        "pm" => Ok(Method::Pm),
        other => Err(Error::Config(format!("unknown method '{other}'; expected wlm or pm"))),
    }
}

pub fn parse_constraint(s: &str) -> Result<Constraint> {
    match s {
        "project" => Ok(Constraint::Project),
        "off" => Ok(Constraint::Off),
        other => Err(Error::Config(format!("unknown constraint '{other}'; expected project or off"))),
    }
}

/// A validated configuration for one separation run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dsf: DsfConfig,
    pub window: WindowKind,
}

/// Serializable view of a resolved configuration, echoed into reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub method: String,
    pub r: f64,
    pub alpha: f64,
    pub p: f64,
    pub beta: f64,
    pub fft_size: usize,
    pub hop: usize,
    pub overlap: f64,
    pub window: String,
    pub n_sources: usize,
    pub constraint: String,
    pub seed: u64,
    pub workers: Option<usize>,
    pub khl_restarts: usize,
    pub khl_max_iter: usize,
    pub lbfgs: LbfgsEcho,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LbfgsEcho {
    pub memory: usize,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub cost_rel_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(rc: &RunConfig) -> Self {
        let c = &rc.dsf;
        let l = &c.lbfgs;
        ConfigEcho {
            method: c.method.as_str().into(),
            r: c.r,
            alpha: c.alpha,
            p: c.p,
            beta: c.beta,
            fft_size: c.fft_size,
            hop: c.hop(),
            overlap: c.overlap,
            window: rc.window.as_str().into(),
            n_sources: c.n_sources,
            constraint: match c.constraint {
                Constraint::Project => "project".into(),
                Constraint::Off => "off".into(),
            },
            seed: c.seed,
            workers: c.workers,
            khl_restarts: c.khl_restarts,
            khl_max_iter: c.khl_max_iter,
            lbfgs: LbfgsEcho {
                memory: l.memory,
                max_iter: l.max_iter,
                grad_tol: l.grad_tol,
                cost_rel_tol: l.cost_rel_tol,
                c1: l.c1,
                c2: l.c2,
                max_line_search: l.max_line_search,
            },
        }
    }
}
