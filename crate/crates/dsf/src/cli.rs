//! Command-line interface: argument definitions and the four commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use dsf_core::synth::{permutation_invariant_score, si_sdr};
use serde::Deserialize;

use crate::config::{ConfigEcho, ConfigFile, LbfgsFile};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradcheckOptions};
use crate::mixture::{db_to_gain, gen_mixture, random_gains, synth_source_images, validate_gains, SceneSpec};
use crate::pipeline::separate_signal;
use crate::report::{
    read_json, write_json, Baseline, EvalReport, InputInfo, MetricRecord, MixReport, SeparationReport, Timings, SCHEMA_VERSION,
};
use crate::stft::Signal;
use crate::wav::{read_wav, write_wav, WavFormat};

#[derive(Debug, Parser)]
#[command(name = "dsf", version, about = "Directional sparse filtering source separation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Separate a multichannel mixture into N sources.
    Separate(Box<SeparateArgs>),
    /// Build a mixture and reference files from a scene description.
    Mix(MixArgs),
    /// Score separated sources against references (permutation-invariant SI-SDR).
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Number of sources.
    #[arg(short = 'n', long = "sources")]
    pub n_sources: Option<usize>,
    /// TOML configuration file; flags override its values.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = ["wlm", "pm"])]
    pub method: Option<String>,
    /// Lehmer order, in (0, 1).
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Power-mean exponent (negative).
    #[arg(long, allow_hyphen_values = true)]
    pub p: Option<f64>,
    /// Mask softness.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub fft_size: Option<usize>,
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long, value_parser = ["project", "off"])]
    pub constraint: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (1 gives bit-reproducible runs).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output sample format: f32 or pcm16.
    #[arg(long, default_value = "f32")]
    pub format: String,
    /// Write every channel of each source image instead of channel 0.
    #[arg(long)]
    pub all_channels: bool,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// Scene description (TOML).
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of estimated sources (*.wav).
    #[arg(long)]
    pub est: PathBuf,
    /// Directory of reference sources (*.wav).
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Unprocessed mixture for the baseline score; defaults to
    /// `<ref>/../mixture.wav` when present.
    #[arg(long)]
    pub mix: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    /// Report path; defaults to `<est>/eval.json`.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Configuration whose r, alpha and p join the sweep.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Separate(a) => cmd_separate(&a).map(|r| {
            let s = &r.summary;
            eprintln!(
                "separated {} sources into {}: {} bins estimated ({} converged), {} skipped",
                r.config.n_sources,
                a.output.display(),
                s.bins_estimated,
                s.bins_converged,
                s.bins_skipped
            );
        }),
        Command::Mix(a) => cmd_mix(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|r| println!("{}", r.metrics.to_json_line())),
        Command::Gradcheck(a) => cmd_gradcheck(&a).map(|_| ()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

impl SeparateArgs {
    fn overrides(&self) -> ConfigFile {
        ConfigFile {
            method: self.method.clone(),
            r: self.r,
            alpha: self.alpha,
            p: self.p,
            beta: self.beta,
            fft_size: self.fft_size,
            overlap: self.overlap,
            window: self.window.clone(),
            n_sources: self.n_sources,
            constraint: self.constraint.clone(),
            seed: self.seed,
            workers: self.workers,
            khl_restarts: None,
            khl_max_iter: None,
            lbfgs: self.max_iter.map(|m| LbfgsFile { max_iter: Some(m), ..Default::default() }),
        }
    }
}

pub fn cmd_separate(args: &SeparateArgs) -> Result<SeparationReport> {
    let start = Instant::now();
    let base = match &args.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let rc = base.merge(args.overrides()).resolve()?;
    let format: WavFormat = args.format.parse()?;
    let mix = read_wav(&args.input)?;
    if mix.n_channels() < 2 {
        return Err(Error::Data(format!("{}: mono input; separation needs at least 2 channels", args.input.display())));
    }

    let t0 = Instant::now();
    let out = separate_signal(&mix, &rc.dsf, rc.window)?;
    let processing_s = t0.elapsed().as_secs_f64();

    create_dir(&args.output)?;
    let t1 = Instant::now();
    let mut outputs = Vec::new();
    for (n, src) in out.sources.iter().enumerate() {
        let name = format!("source_{n}.wav");
        let sig = if args.all_channels { src.clone() } else { src.select_channel(0) };
        write_wav(&args.output.join(&name), &sig, format)?;
        outputs.push(name);
    }
    let write_s = t1.elapsed().as_secs_f64();

    let input = InputInfo {
        file: file_name(&args.input),
        sample_rate: mix.sample_rate(),
        channels: mix.n_channels(),
        samples: mix.len(),
    };
    let report = SeparationReport::new(input, ConfigEcho::from(&rc), &out.separation, outputs, "timings.json");
    write_json(&args.output.join("report.json"), &report)?;
    let timings = Timings { processing_s, writing_s: write_s, total_s: start.elapsed().as_secs_f64() };
    write_json(&args.output.join("timings.json"), &timings)?;
    Ok(report)
}

/// Scene description for `dsf mix`.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub name: Option<String>,
    pub seed: Option<u64>,
    /// Per-source gains in dB; drawn at random (one source at 0 dB, the rest
    /// in [-12, 0]) when absent.
    pub gains_db: Option<Vec<f64>>,
    /// Source-image WAV files, relative to the scene file.
    pub sources: Option<Vec<PathBuf>>,
    pub synthetic: Option<SyntheticFile>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFile {
    pub n_sources: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_seconds")]
    pub seconds: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
}

fn default_channels() -> usize {
    2
}
fn default_seconds() -> f64 {
    6.0
}
fn default_rate() -> u32 {
    16_000
}

pub fn cmd_mix(args: &MixArgs) -> Result<MixReport> {
    let text = std::fs::read_to_string(&args.spec).map_err(|e| Error::io(&args.spec, e))?;
    let scene: SceneFile =
        toml::from_str(&text).map_err(|e| Error::Parse { path: args.spec.clone(), message: e.to_string() })?;
    let seed = scene.seed.unwrap_or(0);
    let base_dir = args.spec.parent().unwrap_or(Path::new("."));
    let (sources, names): (Vec<Signal>, Vec<String>) = match (&scene.sources, &scene.synthetic) {
        (Some(files), None) => {
            let sigs = files.iter().map(|f| read_wav(&base_dir.join(f))).collect::<Result<Vec<_>>>()?;
            (sigs, files.iter().map(|f| f.display().to_string()).collect())
        }
        (None, Some(s)) => {
            let spec = SceneSpec { n_sources: s.n_sources, channels: s.channels, seconds: s.seconds, sample_rate: s.sample_rate, seed };
            let sigs = synth_source_images(&spec)?;
            let names = (0..sigs.len()).map(|n| format!("synthetic:{n}")).collect();
            (sigs, names)
        }
        _ => return Err(Error::Config("a scene needs exactly one of `sources` or `[synthetic]`".into())),
    };
    let gains_db = match scene.gains_db {
        Some(g) => g,
        None => random_gains(sources.len(), seed),
    };
    validate_gains(&gains_db)?;
    let (mix, refs) = gen_mixture(&sources, &gains_db)?;

    let refs_dir = args.output.join("refs");
    create_dir(&refs_dir)?;
    write_wav(&args.output.join("mixture.wav"), &mix, WavFormat::Float32)?;
    let mut ref_names = Vec::new();
    for (n, r) in refs.iter().enumerate() {
        let name = format!("refs/source_{n}.wav");
        write_wav(&args.output.join(&name), r, WavFormat::Float32)?;
        ref_names.push(name);
    }
    let report = MixReport {
        schema_version: SCHEMA_VERSION,
        kind: "mixture".into(),
        name: scene.name.unwrap_or_else(|| args.spec.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
        seed,
        gains_linear: gains_db.iter().map(|g| db_to_gain(*g)).collect(),
        gains_db,
        sources: names,
        mixture: "mixture.wav".into(),
        references: ref_names,
        sample_rate: mix.sample_rate(),
        channels: mix.n_channels(),
        samples: mix.len(),
    };
    write_json(&args.output.join("mix.json"), &report)?;
    Ok(report)
}

fn wav_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn first_channels(files: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
    files.iter().map(|f| read_wav(f).map(|s| s.channel(0).to_vec())).collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let est_files = wav_files(&args.est)?;
    let ref_files = wav_files(&args.reference)?;
    if est_files.is_empty() || est_files.len() != ref_files.len() {
        return Err(Error::Data(format!(
            "{} estimates in {} but {} references in {}",
            est_files.len(),
            args.est.display(),
            ref_files.len(),
            args.reference.display()
        )));
    }
    let ests = first_channels(&est_files)?;
    let refs = first_channels(&ref_files)?;
    let score = permutation_invariant_score(&ests, &refs)?;

    let mix_path = args.mix.clone().or_else(|| {
        let guess = args.reference.parent()?.join("mixture.wav");
        guess.exists().then_some(guess)
    });
    let baseline = match &mix_path {
        Some(path) => {
            let mix = read_wav(path)?.channel(0).to_vec();
            let per_source_db = refs.iter().map(|r| si_sdr(&mix, r)).collect::<std::result::Result<Vec<_>, _>>()?;
            let mean_db = per_source_db.iter().sum::<f64>() / per_source_db.len() as f64;
            Some(Baseline { file: file_name(path), per_source_db, mean_db })
        }
        None => None,
    };

    #[derive(Deserialize)]
    struct Partial {
        config: ConfigEcho,
    }
    let run_info: Option<Partial> = read_json(&args.est.join("report.json")).ok();
    // Default scenario: the scene name recorded by `dsf mix`, else the
    // directory holding the references.
    let scenario = args.scenario.clone().unwrap_or_else(|| {
        let parent = args.reference.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(&args.reference);
        read_json::<MixReport>(&parent.join("mix.json"))
            .map(|m| m.name)
            .unwrap_or_else(|_| file_name(&std::fs::canonicalize(parent).unwrap_or_else(|_| parent.to_path_buf())))
    });
    let metrics = MetricRecord {
        scenario,
        seed: run_info.as_ref().map(|r| r.config.seed),
        method: run_info.as_ref().map(|r| r.config.method.clone()),
        per_source_db: score.per_source_db,
        mean_db: score.mean_db,
        permutation: score.permutation,
    };
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        kind: "evaluation".into(),
        estimates: est_files.iter().map(|p| file_name(p)).collect(),
        references: ref_files.iter().map(|p| file_name(p)).collect(),
        improvement_db: baseline.as_ref().map(|b| metrics.mean_db - b.mean_db),
        metrics,
        baseline,
    };
    let out = args.output.clone().unwrap_or_else(|| args.est.join("eval.json"));
    write_json(&out, &report)?;
    Ok(report)
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<crate::report::GradcheckReport> {
    let mut opts = GradcheckOptions { seed: args.seed, tolerance: args.tolerance, corrupt: args.corrupt_gradient, ..Default::default() };
    if let Some(path) = &args.config {
        let mut file = ConfigFile::load(path)?;
        // The sweep chooses its own source counts.
        file.n_sources.get_or_insert(2);
        let rc = file.resolve()?;
        opts.r = rc.dsf.r;
        opts.alpha = rc.dsf.alpha;
        opts.p = rc.dsf.p;
    }
    if !(opts.tolerance > 0.0) {
        return Err(Error::Config("tolerance must be positive".into()));
    }
    let report = gradcheck::run(&opts)?;
    if let Some(out) = &args.output {
        write_json(out, &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?);
    if report.passed {
        Ok(report)
    } else {
        Err(Error::Numerical(format!(
            "gradient check failed: max relative error {:e} exceeds {:e} (M={}, N={}, {}, constrained={})",
            report.worst.max_rel_error, report.tolerance, report.worst.m, report.worst.n, report.worst.objective, report.worst.constrained
        )))
    }
}
