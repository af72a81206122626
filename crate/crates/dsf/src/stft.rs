//! Multichannel short-time Fourier analysis and weighted overlap-add synthesis.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use dsf_core::C64;
use rayon::prelude::*;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// A multichannel real signal, stored channel by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl Signal {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::Data("signal has no channels".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::Data("channels have different lengths".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("signal contains non-finite samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Data("sample rate must be positive".into()));
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Keeps only channel `m`.
    pub fn select_channel(&self, m: usize) -> Signal {
        Signal { sample_rate: self.sample_rate, channels: vec![self.channels[m].clone()] }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
}

impl WindowKind {
    pub const SUPPORTED: &'static [&'static str] = &["hamming", "hann"];

    pub fn as_str(&self) -> &'static str {
        match self {
            WindowKind::Hamming => "hamming",
            WindowKind::Hann => "hann",
        }
    }
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hamming" => Ok(WindowKind::Hamming),
            "hann" | "hanning" => Ok(WindowKind::Hann),
            other => Err(Error::Config(format!(
                "unsupported window kind '{other}'; supported kinds: {}",
                WindowKind::SUPPORTED.join(", ")
            ))),
        }
    }
}

/// Periodic (DFT-even) window of length `size`.
pub fn make_window(size: usize, kind: WindowKind) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::Config(format!("window size must be at least 2, got {size}")));
    }
    let (a0, a1) = match kind {
        WindowKind::Hamming => (0.54, 0.46),
        WindowKind::Hann => (0.5, 0.5),
    };
    Ok((0..size).map(|t| a0 - a1 * (2.0 * PI * t as f64 / size as f64).cos()).collect())
}

/// Frame layout shared by analysis and synthesis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Length of the analyzed signal, used to trim synthesis output.
    pub signal_len: usize,
}

impl Geometry {
    pub fn new(fft_size: usize, hop: usize, window: WindowKind, signal_len: usize) -> Result<Self> {
        if fft_size < 2 || !fft_size.is_power_of_two() {
            return Err(Error::Config(format!("fft_size must be a power of two >= 2, got {fft_size}")));
        }
        if hop == 0 || hop > fft_size {
            return Err(Error::Config(format!("hop must lie in 1..={fft_size}, got {hop}")));
        }
        if !fft_size.is_multiple_of(hop) {
            return Err(Error::Config(format!("hop {hop} does not divide fft_size {fft_size}")));
        }
        Ok(Self { fft_size, hop, window, signal_len })
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Zeros added before the first sample (and at least as many after the last).
    pub fn padding(&self) -> usize {
        self.fft_size - self.hop
    }

    pub fn n_frames(&self) -> usize {
        if self.signal_len == 0 {
            return 0;
        }
        (self.signal_len - 1 + self.padding()) / self.hop + 1
    }

    fn padded_len(&self) -> usize {
        (self.n_frames().max(1) - 1) * self.hop + self.fft_size
    }
}

/// Complex STFT values for every (bin, channel, frame).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    geometry: Geometry,
    sample_rate: u32,
    channels: usize,
    frames: usize,
    values: Vec<C64>,
}

impl Spectrogram {
    pub fn zeros(geometry: Geometry, sample_rate: u32, channels: usize) -> Self {
        let frames = geometry.n_frames();
        Self { geometry, sample_rate, channels, frames, values: vec![C64::new(0.0, 0.0); geometry.n_bins() * channels * frames] }
    }

    pub fn from_values(geometry: Geometry, sample_rate: u32, channels: usize, values: Vec<C64>) -> Result<Self> {
        let frames = geometry.n_frames();
        if values.len() != geometry.n_bins() * channels * frames {
            return Err(Error::Data(format!(
                "spectrogram holds {} values, geometry needs {}x{}x{}",
                values.len(),
                geometry.n_bins(),
                channels,
                frames
            )));
        }
        Ok(Self { geometry, sample_rate, channels, frames, values })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn n_bins(&self) -> usize {
        self.geometry.n_bins()
    }

    pub fn n_channels(&self) -> usize {
        self.channels
    }

    pub fn n_frames(&self) -> usize {
        self.frames
    }

    fn offset(&self, f: usize, m: usize) -> usize {
        (f * self.channels + m) * self.frames
    }

    pub fn get(&self, f: usize, m: usize, k: usize) -> C64 {
        self.values[self.offset(f, m) + k]
    }

    pub fn set(&mut self, f: usize, m: usize, k: usize, v: C64) {
        let i = self.offset(f, m) + k;
        self.values[i] = v;
    }

    /// All frames of one channel in one bin.
    pub fn row(&self, f: usize, m: usize) -> &[C64] {
        let o = self.offset(f, m);
        &self.values[o..o + self.frames]
    }

    pub fn row_mut(&mut self, f: usize, m: usize) -> &mut [C64] {
        let o = self.offset(f, m);
        let k = self.frames;
        &mut self.values[o..o + k]
    }

    /// The `M x K` block of bin `f`, channel-major (`m * K + k`).
    pub fn bin(&self, f: usize) -> &[C64] {
        let o = self.offset(f, 0);
        &self.values[o..o + self.channels * self.frames]
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Windowed real FFT of every frame of every channel.
pub fn analyze(sig: &Signal, fft_size: usize, hop: usize, window: WindowKind) -> Result<Spectrogram> {
    let geometry = Geometry::new(fft_size, hop, window, sig.len())?;
    if sig.is_empty() {
        return Err(Error::Data("cannot analyze an empty signal".into()));
    }
    let win = make_window(fft_size, window)?;
    let bins = geometry.n_bins();
    let frames = geometry.n_frames();
    let pad = geometry.padding();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(fft_size);

    // Per channel: bins x frames, laid out bin-major.
    let per_channel: Vec<Vec<C64>> = sig
        .channels()
        .par_iter()
        .map(|x| {
            let mut padded = vec![0.0; geometry.padded_len()];
            padded[pad..pad + x.len()].copy_from_slice(x);
            let mut input = fft.make_input_vec();
            let mut output = fft.make_output_vec();
            let mut scratch = fft.make_scratch_vec();
            let mut out = vec![C64::new(0.0, 0.0); bins * frames];
            for k in 0..frames {
                let seg = &padded[k * hop..k * hop + fft_size];
                for ((dst, s), w) in input.iter_mut().zip(seg).zip(&win) {
                    *dst = s * w;
                }
                fft.process_with_scratch(&mut input, &mut output, &mut scratch)
                    .expect("buffer sizes come from the plan");
                for (f, v) in output.iter().enumerate() {
                    out[f * frames + k] = *v;
                }
            }
            out
        })
        .collect();

    let channels = sig.n_channels();
    let mut spec = Spectrogram::zeros(geometry, sig.sample_rate(), channels);
    for (m, data) in per_channel.iter().enumerate() {
        for f in 0..bins {
            spec.row_mut(f, m).copy_from_slice(&data[f * frames..(f + 1) * frames]);
        }
    }
    Ok(spec)
}

/// Inverse of [`analyze`]: weighted overlap-add normalized by the summed
/// squared window, trimmed to the analyzed length.
pub fn synthesize(spec: &Spectrogram) -> Result<Signal> {
    let g = spec.geometry();
    if spec.n_bins() != g.fft_size / 2 + 1 || spec.n_frames() != g.n_frames() {
        return Err(Error::Data("spectrogram does not match its geometry".into()));
    }
    if !spec.is_finite() {
        return Err(Error::Data("spectrogram contains non-finite values".into()));
    }
    let win = make_window(g.fft_size, g.window)?;
    let frames = spec.n_frames();
    let pad = g.padding();
    let padded_len = g.padded_len();

    let mut norm = vec![0.0; padded_len];
    for k in 0..frames {
        for (t, w) in win.iter().enumerate() {
            norm[k * g.hop + t] += w * w;
        }
    }

    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(g.fft_size);
    let scale = 1.0 / g.fft_size as f64;
    let channels: Vec<Vec<f64>> = (0..spec.n_channels())
        .into_par_iter()
        .map(|m| {
            let mut acc = vec![0.0; padded_len];
            let mut input = ifft.make_input_vec();
            let mut output = ifft.make_output_vec();
            let mut scratch = ifft.make_scratch_vec();
            for k in 0..frames {
                for (f, dst) in input.iter_mut().enumerate() {
                    *dst = spec.get(f, m, k);
                }
                // Real signals have purely real DC and Nyquist bins.
                input[0].im = 0.0;
                let last = input.len() - 1;
                input[last].im = 0.0;
                ifft.process_with_scratch(&mut input, &mut output, &mut scratch)
                    .expect("buffer sizes come from the plan");
                for (t, (y, w)) in output.iter().zip(&win).enumerate() {
                    acc[k * g.hop + t] += y * scale * w;
                }
            }
            acc[pad..pad + g.signal_len]
                .iter()
                .zip(&norm[pad..pad + g.signal_len])
                .map(|(a, n)| if *n > 1e-12 { a / n } else { 0.0 })
                .collect()
        })
        .collect();
    Signal::new(spec.sample_rate(), channels)
}
