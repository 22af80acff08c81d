//! The `cdrfeat` command-line tool.
//!
//! Configuration is resolved as defaults, then the file named by
//! `--config` (or the `CDRFEAT_CONFIG` environment variable), then
//! `--preset`, then the remaining flags.

use std::ffi::OsString;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::config::{Feature, PipelineConfig, Preset};
use crate::error::{Error, Result};
use crate::io::{
    read_wav_expect, write_features, write_heatmap, write_wav, FeatureFormat, SampleFormat,
};
use crate::melfeat::FeatureMatrix;
use crate::pipeline::{enhance_signal, extract, StreamingExtractor};
use crate::synth::{burst_scene, generate, BurstConfig, FieldKind, SynthConfig};

pub const CONFIG_ENV: &str = "CDRFEAT_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "cdrfeat",
    version,
    about = "Coherence-based diffuseness features for two-microphone ASR"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract features from WAV files.
    Extract(ExtractArgs),
    /// Suppress diffuse noise in a stereo WAV file.
    Enhance(EnhanceArgs),
    /// Generate a synthetic two-microphone recording.
    Synth(SynthArgs),
    /// Extract frame-level features from raw PCM16 on stdin.
    Stream(StreamArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Binary,
    Csv,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WavFormatArg {
    Pcm16,
    Pcm32,
    Float32,
}

impl From<WavFormatArg> for SampleFormat {
    fn from(f: WavFormatArg) -> Self {
        match f {
            WavFormatArg::Pcm16 => SampleFormat::Pcm16,
            WavFormatArg::Pcm32 => SampleFormat::Pcm32,
            WavFormatArg::Float32 => SampleFormat::Float32,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Forgetting factor of the coherence recursion.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Microphone spacing in metres.
    #[arg(long)]
    pub d: Option<f64>,
    /// Gain floor of the spectral subtraction.
    #[arg(long)]
    pub gmin: Option<f64>,
    /// Over-subtraction factor.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Fail instead of warning when the WAV sample rate differs.
    #[arg(long)]
    pub strict_rate: bool,
}

#[derive(Debug, Args, Default)]
pub struct FeatureArgs {
    /// Named feature configuration.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Comma-separated features: logmelspec, logmelspec_enh, meldiffuseness, melmsc.
    #[arg(long, value_delimiter = ',', value_parser = parse_feature)]
    pub features: Option<Vec<Feature>>,
    /// Delta order of the spectral features (0, 1 or 2).
    #[arg(long)]
    pub deltas: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Input WAV file(s).
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Output file, or a directory when several inputs are given.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Per-utterance mean and variance normalization.
    #[arg(long)]
    pub mvn: bool,
    /// Splice ±N neighbouring frames.
    #[arg(long)]
    pub splice: Option<usize>,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
    /// Also write a PGM image of one feature block.
    #[arg(long, value_name = "PGM")]
    pub heatmap: Option<PathBuf>,
    /// Block shown by --heatmap; defaults to the first ratio feature.
    #[arg(long)]
    pub heatmap_feature: Option<String>,
    /// Worker threads for multiple inputs.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the per-frame mean diffuseness as CSV.
    #[arg(long, value_name = "CSV")]
    pub diffuseness: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub duration: f64,
    /// Coherent-to-diffuse power ratio in dB.
    #[arg(
        long = "snr-db",
        alias = "snr",
        default_value_t = 10.0,
        allow_negative_numbers = true
    )]
    pub snr_db: f64,
    /// Direction of arrival in degrees (90 = broadside).
    #[arg(long, default_value_t = 90.0)]
    pub doa: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 128)]
    pub waves: usize,
    #[arg(long, default_value_t = 0.08)]
    pub d: f64,
    #[arg(long, conflicts_with = "coherent_only")]
    pub diffuse_only: bool,
    #[arg(long)]
    pub coherent_only: bool,
    /// Reverberant burst scene instead of a stationary field.
    #[arg(long, conflicts_with_all = ["diffuse_only", "coherent_only"])]
    pub bursts: bool,
    #[arg(long, value_enum, default_value = "float32")]
    pub wav_format: WavFormatArg,
}

#[derive(Debug, Args)]
pub struct StreamArgs {
    #[command(flatten)]
    pub features: FeatureArgs,
    #[command(flatten)]
    pub common: CommonArgs,
    /// Interleaved channels on stdin.
    #[arg(long, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, value_enum, default_value = "binary")]
    pub format: FormatArg,
    /// Samples per channel read at a time.
    #[arg(long, default_value_t = 160)]
    pub block: usize,
    /// Rejected: needs the whole utterance.
    #[arg(long, hide = true)]
    pub mvn: bool,
    /// Rejected: needs the whole utterance.
    #[arg(long, hide = true)]
    pub splice: Option<usize>,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_feature(s: &str) -> std::result::Result<Feature, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolve(common: &CommonArgs, feats: Option<&FeatureArgs>) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    let file = common.config.clone().or_else(|| {
        std::env::var_os(CONFIG_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
    });
    if let Some(path) = file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.merge_text(&text)?;
    }
    if let Some(f) = feats {
        if let Some(p) = f.preset {
            cfg.apply_preset(p);
        }
        if let Some(list) = &f.features {
            cfg.set(
                "features",
                &list.iter().map(|f| f.name()).collect::<Vec<_>>().join(","),
            )?;
        }
        if let Some(d) = f.deltas {
            cfg.delta_order = d;
        }
    }
    if let Some(v) = common.lambda {
        cfg.coherence.forgetting_factor = v;
    }
    if let Some(v) = common.d {
        cfg.coherence.mic_spacing_m = v;
    }
    if let Some(v) = common.gmin {
        cfg.enhance.gain_floor = v;
    }
    if let Some(v) = common.mu {
        cfg.enhance.overestimation = v;
    }
    Ok(cfg)
}

fn output_path(out: &Path, input: &Path, many: bool, format: FeatureFormat) -> PathBuf {
    if !many {
        return out.to_path_buf();
    }
    let ext = match format {
        FeatureFormat::Binary => "feat",
        FeatureFormat::Csv => "csv",
    };
    out.join(input.file_stem().unwrap_or_default())
        .with_extension(ext)
}

/// A feature block and its pixel range (`None` for auto-scaling).
type HeatmapBlock = (Vec<Vec<f64>>, Option<(f64, f64)>);

fn heatmap_block(
    m: &FeatureMatrix,
    cfg: &PipelineConfig,
    name: Option<&str>,
) -> Result<HeatmapBlock> {
    let name = match name {
        Some(n) => n.to_string(),
        None => cfg
            .ratio_features()
            .next()
            .map(|f| f.name().to_string())
            .unwrap_or_else(|| m.layout[0].0.clone()),
    };
    let rows = m
        .block(&name)
        .ok_or_else(|| Error::Config(format!("no feature block named '{name}'")))?;
    let is_ratio = name
        .parse::<Feature>()
        .map(|f| !f.is_spectral())
        .unwrap_or(false);
    Ok((rows, (is_ratio && !cfg.mvn).then_some((0.0, 1.0))))
}

fn run_extract(a: &ExtractArgs) -> Result<()> {
    let mut cfg = resolve(&a.common, Some(&a.features))?;
    cfg.mvn |= a.mvn;
    if let Some(s) = a.splice {
        cfg.splice = s;
    }
    cfg.validate()?;
    let format = match a.format {
        FormatArg::Binary => FeatureFormat::Binary,
        FormatArg::Csv => FeatureFormat::Csv,
    };
    let many = a.inputs.len() > 1;
    if many {
        if a.heatmap.is_some() {
            return Err(Error::Config("--heatmap needs a single input".into()));
        }
        std::fs::create_dir_all(&a.out)?;
    }
    let digest = cfg.digest();
    let one = |input: &PathBuf| -> Result<()> {
        let (spec, channels) =
            read_wav_expect(input, cfg.analysis.sample_rate_hz, a.common.strict_rate)?;
        log::info!(
            "{}: {} ch, {} samples at {} Hz",
            input.display(),
            spec.channels,
            spec.n_samples,
            spec.sample_rate_hz
        );
        let m = extract(&channels, &cfg)?;
        write_features(&m, digest, output_path(&a.out, input, many, format), format)?;
        if let Some(pgm) = &a.heatmap {
            let (rows, range) = heatmap_block(&m, &cfg, a.heatmap_feature.as_deref())?;
            write_heatmap(&rows, pgm, range)?;
        }
        Ok(())
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| a.inputs.par_iter().map(one).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn run_enhance(a: &EnhanceArgs) -> Result<()> {
    let cfg = resolve(&a.common, None)?;
    cfg.analysis.validate()?;
    cfg.coherence.validate()?;
    cfg.enhance.validate()?;
    let (spec, channels) =
        read_wav_expect(&a.input, cfg.analysis.sample_rate_hz, a.common.strict_rate)?;
    let e = enhance_signal(&channels, &cfg)?;
    if let Some(i) = e.channels.iter().flatten().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            feature: "enhanced audio".into(),
            frame: i / cfg.analysis.hop,
        });
    }
    let mean_d = e.frame_diffuseness.iter().sum::<f64>() / e.frame_diffuseness.len().max(1) as f64;
    log::info!(
        "mean diffuseness {mean_d:.3} over {} frames",
        e.frame_diffuseness.len()
    );
    write_wav(&a.out, &e.channels, spec.sample_rate_hz, spec.format)?;
    if let Some(path) = &a.diffuseness {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "frame,time_s,diffuseness")?;
        for (t, (d, time)) in e.frame_diffuseness.iter().zip(&e.frame_times_s).enumerate() {
            writeln!(w, "{t},{time:.4},{d:.6}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn run_synth(a: &SynthArgs) -> Result<()> {
    let field = SynthConfig {
        duration_s: a.duration,
        snr_db: a.snr_db,
        doa_deg: a.doa,
        n_diffuse_waves: a.waves,
        seed: a.seed,
        mic_spacing_m: a.d,
        ..Default::default()
    };
    let fs = field.sample_rate_hz;
    let mut stdout = io::stdout().lock();
    if a.bursts {
        let scene = burst_scene(&BurstConfig {
            field,
            ..Default::default()
        })?;
        write_wav(&a.out, &scene.channels, fs, a.wav_format.into())?;
        for (s, e) in &scene.bursts {
            writeln!(stdout, "burst {s} {e}")?;
        }
        return Ok(());
    }
    let kind = if a.diffuse_only {
        FieldKind::DiffuseOnly
    } else if a.coherent_only {
        FieldKind::CoherentOnly
    } else {
        FieldKind::Mixture
    };
    let m = generate(&field, kind)?;
    write_wav(&a.out, &m.channels, fs, a.wav_format.into())?;
    writeln!(stdout, "coherent_power {:.6e}", m.coherent_power)?;
    writeln!(stdout, "diffuse_power {:.6e}", m.diffuse_power)?;
    writeln!(
        stdout,
        "channel_power {:.6e} {:.6e}",
        mean_power(&m.channels[0]),
        mean_power(&m.channels[1])
    )?;
    Ok(())
}

fn write_row(out: &mut impl Write, row: &[f64], format: FormatArg) -> Result<()> {
    match format {
        FormatArg::Binary => {
            for v in row {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        FormatArg::Csv => {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.8e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
    }
    Ok(())
}

/// Streams features for interleaved PCM16 read from `input` into `output`.
/// Rows are written as soon as they are final.
pub fn stream(
    cfg: &PipelineConfig,
    n_channels: usize,
    block: usize,
    format: FormatArg,
    input: impl Read,
    output: impl Write,
) -> Result<()> {
    let mut ex = StreamingExtractor::new(cfg, n_channels)?;
    let mut input = BufReader::new(input);
    let mut out = BufWriter::new(output);
    let frame_bytes = 2 * n_channels;
    let mut buf = vec![0u8; block.max(1) * frame_bytes];
    let mut carry = 0usize;
    loop {
        let got = input.read(&mut buf[carry..])?;
        let avail = carry + got;
        let whole = avail / frame_bytes;
        if whole > 0 {
            let mut chans = vec![Vec::with_capacity(whole); n_channels];
            for (i, s) in buf[..whole * frame_bytes].chunks_exact(2).enumerate() {
                chans[i % n_channels].push(i16::from_le_bytes([s[0], s[1]]) as f64 / 32768.0);
            }
            for row in ex.push(&chans)? {
                write_row(&mut out, &row, format)?;
            }
            out.flush()?;
            buf.copy_within(whole * frame_bytes..avail, 0);
        }
        carry = avail - whole * frame_bytes;
        if got == 0 {
            break;
        }
    }
    if carry != 0 {
        out.flush()?;
        return Err(Error::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("stream ends inside a sample frame ({carry} trailing byte(s))"),
        )));
    }
    for row in ex.finish()? {
        write_row(&mut out, &row, format)?;
    }
    out.flush()?;
    Ok(())
}

fn run_stream(a: &StreamArgs) -> Result<()> {
    if a.mvn || a.splice.is_some_and(|s| s > 0) {
        return Err(Error::Config(
            "stream mode emits frame-level features; --mvn and --splice are not available".into(),
        ));
    }
    let mut cfg = resolve(&a.common, Some(&a.features))?;
    cfg.mvn = false;
    cfg.splice = 0;
    cfg.validate_for_channels(a.channels)?;
    let layout: Vec<String> = cfg
        .frame_layout()
        .iter()
        .map(|(n, d)| format!("{n}:{d}"))
        .collect();
    log::info!("stream layout {}", layout.join(","));
    stream(
        &cfg,
        a.channels,
        a.block,
        a.format,
        io::stdin().lock(),
        io::stdout().lock(),
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Extract(a) => run_extract(a),
        Command::Enhance(a) => run_enhance(a),
        Command::Synth(a) => run_synth(a),
        Command::Stream(a) => run_stream(a),
    }
}

/// Parses arguments and runs; returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            if matches!(&e, Error::Io(io) if io.kind() == io::ErrorKind::BrokenPipe) {
                return 0;
            }
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
