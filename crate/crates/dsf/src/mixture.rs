//! Scaled-source mixtures and synthetic directional test scenes.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::stft::Signal;

/// Largest attenuation applied by [`random_gains`], in dB.
pub const MAX_ATTENUATION_DB: f64 = 12.0;

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// One source keeps 0 dB; the others get an attenuation drawn uniformly from
/// `[-12, 0]` dB.
pub fn random_gains(n_sources: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = rng.random_range(0..n_sources.max(1));
    (0..n_sources).map(|n| if n == keep { 0.0 } else { -rng.random_range(0.0..=MAX_ATTENUATION_DB) }).collect()
}

pub fn validate_gains(gains_db: &[f64]) -> Result<()> {
    if gains_db.iter().any(|g| !g.is_finite() || *g > 0.0 || *g < -MAX_ATTENUATION_DB) {
        return Err(Error::Config(format!("gains must lie in [-{MAX_ATTENUATION_DB}, 0] dB, got {gains_db:?}")));
    }
    if !gains_db.contains(&0.0) {
        return Err(Error::Config("one source must keep a gain of 0 dB".into()));
    }
    Ok(())
}

/// Scales every source image by its gain and sums them.
///
/// Returns the mixture and the scaled sources, which serve as references.
pub fn gen_mixture(sources: &[Signal], gains_db: &[f64]) -> Result<(Signal, Vec<Signal>)> {
    let first = sources.first().ok_or_else(|| Error::Config("a mixture needs at least one source".into()))?;
    if gains_db.len() != sources.len() {
        return Err(Error::Config(format!("{} gains for {} sources", gains_db.len(), sources.len())));
    }
    for (i, s) in sources.iter().enumerate() {
        if s.sample_rate() != first.sample_rate() || s.n_channels() != first.n_channels() || s.len() != first.len() {
            return Err(Error::Data(format!(
                "source {i} is {} Hz x {} ch x {} samples, expected {} Hz x {} ch x {} samples",
                s.sample_rate(),
                s.n_channels(),
                s.len(),
                first.sample_rate(),
                first.n_channels(),
                first.len()
            )));
        }
    }
    let scaled: Vec<Signal> = sources
        .iter()
        .zip(gains_db)
        .map(|(s, &g)| {
            let a = db_to_gain(g);
            Signal::new(s.sample_rate(), s.channels().iter().map(|c| c.iter().map(|v| a * v).collect()).collect())
        })
        .collect::<Result<_>>()?;
    let mut mix = vec![vec![0.0; first.len()]; first.n_channels()];
    for s in &scaled {
        for (acc, ch) in mix.iter_mut().zip(s.channels()) {
            for (a, v) in acc.iter_mut().zip(ch) {
                *a += v;
            }
        }
    }
    Ok((Signal::new(first.sample_rate(), mix)?, scaled))
}

/// Parameters of a synthetic anechoic scene of sparse, speech-like sources.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub n_sources: usize,
    pub channels: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_sources == 0 || self.n_sources > INTER_MIC_DELAYS.len() {
            return Err(Error::Config(format!("synthetic scenes support 1..={} sources", INTER_MIC_DELAYS.len())));
        }
        if self.channels == 0 {
            return Err(Error::Config("synthetic scenes need at least one channel".into()));
        }
        if !(self.seconds > 0.0 && self.seconds <= 600.0) {
            return Err(Error::Config("scene length must lie in (0, 600] seconds".into()));
        }
        if self.sample_rate < 4000 {
            return Err(Error::Config("sample rate must be at least 4000 Hz".into()));
        }
        Ok(())
    }
}

// Per-microphone integer delays (samples) and gains; each source draws a
// distinct entry so that no two sources share a direction.
const INTER_MIC_DELAYS: [i64; 8] = [-3, -2, -1, 0, 1, 2, 3, 4];
const INTER_MIC_GAINS: [f64; 8] = [1.0, 0.55, 0.8, 0.65, 0.9, 0.6, 0.75, 0.7];

/// A dry, speech-like source: voiced harmonic bursts separated by pauses.
fn dry_source(rng: &mut ChaCha8Rng, len: usize, sample_rate: u32, f0_base: f64) -> Vec<f64> {
    let fs = sample_rate as f64;
    let nyquist = fs / 2.0;
    let mut out = vec![0.0; len];
    let mut t0 = (rng.random_range(0.0..0.3) * fs) as usize;
    while t0 < len {
        let dur = (rng.random_range(0.08..0.35) * fs) as usize;
        let f0 = f0_base * rng.random_range(0.9..1.1);
        let glide = rng.random_range(-0.15..0.15);
        let formant = rng.random_range(300.0..2500.0);
        let end = (t0 + dur).min(len);
        let n_harm = ((nyquist * 0.9) / (f0 * 1.2)).floor().max(1.0) as usize;
        let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let mut phase_acc = 0.0;
        for t in t0..end {
            let rel = (t - t0) as f64 / dur as f64;
            let env = (PI * rel).sin().powi(2);
            let f = f0 * (1.0 + glide * rel);
            phase_acc += 2.0 * PI * f / fs;
            let mut v = 0.0;
            for (h, ph) in phases.iter().enumerate() {
                let fh = f * (h + 1) as f64;
                if fh >= nyquist * 0.95 {
                    break;
                }
                let shape = 1.0 / (1.0 + ((fh - formant) / 400.0).powi(2)) + 0.3 / (h + 1) as f64;
                v += shape * (phase_acc * (h + 1) as f64 + ph).sin();
            }
            out[t] += env * v;
        }
        let pause = (rng.random_range(0.05..0.4) * fs) as usize;
        t0 = end + pause;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms * 10.0);
    }
    out
}

/// Source images of a synthetic scene, each with unit loudness at channel 0.
///
/// Channel `m` of source `n` is `g_n^m · s_n(t − m·d_n)`: a fixed inter-mic
/// delay and gain per source, distinct across sources.
pub fn synth_source_images(spec: &SceneSpec) -> Result<Vec<Signal>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let len = (spec.seconds * spec.sample_rate as f64).round() as usize;
    let mut slots: Vec<usize> = (0..INTER_MIC_DELAYS.len()).collect();
    slots.shuffle(&mut rng);
    let mut f0s = [105.0, 150.0, 215.0, 125.0, 180.0, 240.0, 135.0, 195.0];
    f0s.shuffle(&mut rng);
    (0..spec.n_sources)
        .map(|n| {
            let dry = dry_source(&mut rng, len, spec.sample_rate, f0s[n]);
            let delay = INTER_MIC_DELAYS[slots[n]];
            let gain = INTER_MIC_GAINS[slots[n]];
            let channels = (0..spec.channels)
                .map(|m| {
                    let d = delay * m as i64;
                    let g = gain.powi(m as i32);
                    (0..len as i64)
                        .map(|t| {
                            let src = t - d;
                            if (0..len as i64).contains(&src) {
                                g * dry[src as usize]
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            Signal::new(spec.sample_rate, channels)
        })
        .collect()
}
