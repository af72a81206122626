//! WAV reading and writing (16-bit PCM and 32-bit float, interleaved).

use std::path::Path;
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::stft::Signal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

impl FromStr for WavFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" | "i16" => Ok(WavFormat::Pcm16),
            "f32" | "float32" => Ok(WavFormat::Float32),
            other => Err(Error::Config(format!("unsupported wav format '{other}'; supported: pcm16, f32"))),
        }
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| match source {
        hound::Error::IoError(e) => Error::io(path, e),
        source => Error::Wav { path: path.to_path_buf(), source },
    }
}

pub fn read_wav(path: &Path) -> Result<Signal> {
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => {
            reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<_, _>>().map_err(wav_err(path))?
        }
        SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    if channels == 0 {
        return Err(Error::Data(format!("{}: no channels", path.display())));
    }
    let frames = interleaved.len() / channels;
    let data = (0..channels).map(|m| (0..frames).map(|t| interleaved[t * channels + m]).collect()).collect();
    Signal::new(spec.sample_rate, data).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_wav(path: &Path, sig: &Signal, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec {
        channels: u16::try_from(sig.n_channels()).map_err(|_| Error::Data("too many channels for WAV".into()))?,
        sample_rate: sig.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for t in 0..sig.len() {
        for ch in sig.channels() {
            let v = ch[t];
            match format {
                WavFormat::Pcm16 => {
                    let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                    writer.write_sample(q).map_err(wav_err(path))?;
                }
                WavFormat::Float32 => writer.write_sample(v as f32).map_err(wav_err(path))?,
            }
        }
    }
    writer.finalize().map_err(wav_err(path))
}
