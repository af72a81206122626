//! JSON documents written by the command-line tool.
//!
//! Every document carries `schema_version`; fields are only ever added in a
//! new version.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ConfigEcho;
use crate::error::{Error, Result};
use crate::pipeline::{BinStatus, Separation};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub file: String,
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRecord {
    pub bin: usize,
    pub iterations: usize,
    pub final_cost: f64,
    pub termination: String,
    pub converged: bool,
    pub kept_frames: usize,
    pub khl_inertia: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedBin {
    pub bin: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bins_total: usize,
    pub bins_estimated: usize,
    pub bins_uniform: usize,
    pub bins_skipped: usize,
    pub bins_converged: usize,
    pub median_iterations: f64,
    pub mean_final_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub schema_version: u32,
    pub kind: String,
    pub tool_version: String,
    pub input: InputInfo,
    pub config: ConfigEcho,
    pub summary: Summary,
    pub skipped_bins: Vec<SkippedBin>,
    pub bins: Vec<BinRecord>,
    /// Per-bin maps from global source index to local estimate index.
    pub permutations: Vec<Vec<usize>>,
    pub outputs: Vec<String>,
    /// Wall-clock timings live in a separate file so this report stays
    /// byte-reproducible.
    pub timings_file: String,
}

impl SeparationReport {
    pub fn new(input: InputInfo, config: ConfigEcho, sep: &Separation, outputs: Vec<String>, timings_file: &str) -> Self {
        let mut bins = Vec::new();
        let mut skipped_bins = Vec::new();
        let mut uniform = 0;
        for outcome in &sep.bins {
            match &outcome.status {
                BinStatus::Estimated(s) => bins.push(BinRecord {
                    bin: outcome.bin,
                    iterations: s.iterations,
                    final_cost: s.final_cost,
                    termination: s.termination.into(),
                    converged: s.converged,
                    kept_frames: s.kept_frames,
                    khl_inertia: s.khl_inertia,
                    weights: s.weights.clone(),
                }),
                BinStatus::Uniform => uniform += 1,
                BinStatus::Skipped { reason, .. } => skipped_bins.push(SkippedBin { bin: outcome.bin, reason: reason.clone() }),
            }
        }
        let mut iters: Vec<f64> = bins.iter().map(|b| b.iterations as f64).collect();
        let summary = Summary {
            bins_total: sep.bins.len(),
            bins_estimated: bins.len(),
            bins_uniform: uniform,
            bins_skipped: skipped_bins.len(),
            bins_converged: bins.iter().filter(|b| b.converged).count(),
            median_iterations: median(&mut iters).unwrap_or(0.0),
            mean_final_cost: if bins.is_empty() { 0.0 } else { bins.iter().map(|b| b.final_cost).sum::<f64>() / bins.len() as f64 },
        };
        Self {
            schema_version: SCHEMA_VERSION,
            kind: "separation".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            input,
            config,
            summary,
            skipped_bins,
            bins,
            permutations: sep.permutation.as_slice().to_vec(),
            outputs,
            timings_file: timings_file.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// STFT, per-bin estimation, alignment, and resynthesis.
    pub processing_s: f64,
    pub writing_s: f64,
    pub total_s: f64,
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub scenario: String,
    pub seed: Option<u64>,
    pub method: Option<String>,
    pub per_source_db: Vec<f64>,
    pub mean_db: f64,
    pub permutation: Vec<usize>,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric records always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub file: String,
    pub per_source_db: Vec<f64>,
    pub mean_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub kind: String,
    pub estimates: Vec<String>,
    pub references: Vec<String>,
    pub metrics: MetricRecord,
    pub baseline: Option<Baseline>,
    /// Mean SI-SDR gain over the unprocessed mixture, when a baseline exists.
    pub improvement_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub schema_version: u32,
    pub kind: String,
    pub name: String,
    pub seed: u64,
    pub gains_db: Vec<f64>,
    pub gains_linear: Vec<f64>,
    pub sources: Vec<String>,
    pub mixture: String,
    pub references: Vec<String>,
    pub sample_rate: u32,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckCase {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub objective: String,
    pub r: Option<f64>,
    pub alpha: Option<f64>,
    pub p: Option<f64>,
    pub constrained: bool,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub instances: usize,
    pub tolerance: f64,
    pub max_rel_error_unconstrained: f64,
    pub max_rel_error_constrained: f64,
    pub worst: GradcheckCase,
    pub passed: bool,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) { 0.5 * (values[mid - 1] + values[mid]) } else { values[mid] })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
}
