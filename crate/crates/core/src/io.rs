//! WAV input/output, feature files and heatmaps.
//!
//! # `CDRFEAT1` binary feature files
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic           8 bytes   "CDRFEAT1"
//! n_blocks        u32
//! per block:      u16 name length, UTF-8 name, u32 dim
//! frame_count     u64
//! frame_period_s  f64
//! config_digest   32 bytes  SHA-256 of the canonical configuration text
//! payload         frame_count × total_dim × f32, row-major
//! ```
//!
//! # CSV
//!
//! One comment line `# layout=name:dim,...;frame_period_s=...;frames=...;digest=<hex>`
//! followed by one line per frame with values printed to 9 significant
//! digits.
//!
//! # Heatmaps
//!
//! Binary 8-bit PGM (`P5`). Columns are frames, rows are feature dimensions
//! with index 0 at the bottom. Values are mapped linearly from `[lo, hi]` to
//! `[0, 255]` and rounded half away from zero; a constant block maps to 128.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::melfeat::FeatureMatrix;

pub const FEATURE_MAGIC: &[u8; 8] = b"CDRFEAT1";
pub type ConfigDigest = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Pcm32,
    Float32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavSpec {
    pub sample_rate_hz: u32,
    pub channels: u16,
    pub format: SampleFormat,
    /// Samples per channel.
    pub n_samples: usize,
}

fn wav_err(path: &Path, source: hound::Error) -> Error {
    match source {
        hound::Error::IoError(e) if e.kind() != std::io::ErrorKind::UnexpectedEof => Error::Io(e),
        source => Error::Wav {
            path: path.to_path_buf(),
            source,
        },
    }
}

/// Reads a mono or stereo PCM16 / PCM32 / float32 WAV file. Integer
/// samples are scaled by `1 / 2^(bits-1)`; channels are de-interleaved.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(WavSpec, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    read_wav_from(reader).map_err(|e| match e {
        Error::Wav { source, .. } => wav_err(path, source),
        other => other,
    })
}

fn read_wav_from<R: Read>(mut reader: hound::WavReader<R>) -> Result<(WavSpec, Vec<Vec<f64>>)> {
    let hs = reader.spec();
    if !(1..=2).contains(&hs.channels) {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels",
            hs.channels
        )));
    }
    let format = match (hs.sample_format, hs.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => SampleFormat::Pcm16,
        (hound::SampleFormat::Int, 32) => SampleFormat::Pcm32,
        (hound::SampleFormat::Float, 32) => SampleFormat::Float32,
        (f, b) => return Err(Error::UnsupportedFormat(format!("{f:?} with {b} bits"))),
    };
    let n_ch = hs.channels as usize;
    let to_err = |source| Error::Wav {
        path: Default::default(),
        source,
    };
    let interleaved: Vec<f64> = match format {
        SampleFormat::Pcm16 => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(to_err)?,
        SampleFormat::Pcm32 => reader
            .samples::<i32>()
            .map(|s| s.map(|v| v as f64 / 2147483648.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(to_err)?,
        SampleFormat::Float32 => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(to_err)?,
    };
    if !interleaved.len().is_multiple_of(n_ch) {
        return Err(Error::UnsupportedFormat("truncated sample frame".into()));
    }
    let n = interleaved.len() / n_ch;
    let channels = (0..n_ch)
        .map(|c| interleaved.iter().skip(c).step_by(n_ch).copied().collect())
        .collect();
    Ok((
        WavSpec {
            sample_rate_hz: hs.sample_rate,
            channels: hs.channels,
            format,
            n_samples: n,
        },
        channels,
    ))
}

/// [`read_wav`] with a sample-rate check: a mismatch is an error when
/// `strict`, otherwise a logged warning.
pub fn read_wav_expect(
    path: impl AsRef<Path>,
    expected_rate_hz: u32,
    strict: bool,
) -> Result<(WavSpec, Vec<Vec<f64>>)> {
    let path = path.as_ref();
    let (spec, ch) = read_wav(path)?;
    if spec.sample_rate_hz != expected_rate_hz {
        if strict {
            return Err(Error::SampleRateMismatch {
                expected: expected_rate_hz,
                actual: spec.sample_rate_hz,
            });
        }
        log::warn!(
            "{}: sample rate {} Hz differs from configured {} Hz",
            path.display(),
            spec.sample_rate_hz,
            expected_rate_hz
        );
    }
    Ok((spec, ch))
}

pub fn pcm16_from_f64(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav<S: AsRef<[f64]>>(
    path: impl AsRef<Path>,
    channels: &[S],
    sample_rate_hz: u32,
    format: SampleFormat,
) -> Result<()> {
    let path = path.as_ref();
    if !(1..=2).contains(&channels.len()) {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels",
            channels.len()
        )));
    }
    let n = channels[0].as_ref().len();
    for (channel, c) in channels.iter().enumerate() {
        if c.as_ref().len() != n {
            return Err(Error::ChannelLengthMismatch {
                channel,
                len: c.as_ref().len(),
                expected: n,
            });
        }
    }
    let (bits, sample_format) = match format {
        SampleFormat::Pcm16 => (16, hound::SampleFormat::Int),
        SampleFormat::Pcm32 => (32, hound::SampleFormat::Int),
        SampleFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: channels.len() as u16,
        sample_rate: sample_rate_hz,
        bits_per_sample: bits,
        sample_format,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..n {
        for c in channels {
            let v = c.as_ref()[i];
            let r = match format {
                SampleFormat::Pcm16 => w.write_sample(pcm16_from_f64(v)),
                SampleFormat::Pcm32 => w.write_sample(
                    (v * 2147483648.0)
                        .round()
                        .clamp(-2147483648.0, 2147483647.0) as i32,
                ),
                SampleFormat::Float32 => w.write_sample(v as f32),
            };
            r.map_err(|e| wav_err(path, e))?;
        }
    }
    w.finalize().map_err(|e| wav_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFileHeader {
    pub layout: Vec<(String, usize)>,
    pub frame_count: u64,
    pub frame_period_s: f64,
    pub config_digest: ConfigDigest,
}

impl FeatureFileHeader {
    pub fn for_matrix(m: &FeatureMatrix, config_digest: ConfigDigest) -> Self {
        Self {
            layout: m.layout.clone(),
            frame_count: m.n_frames() as u64,
            frame_period_s: m.frame_period_s,
            config_digest,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.layout.iter().map(|(_, d)| d).sum()
    }

    pub fn payload_bytes(&self) -> u64 {
        self.frame_count * self.total_dim() as u64 * 4
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&(self.layout.len() as u32).to_le_bytes());
        for (name, dim) in &self.layout {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(*dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out.extend_from_slice(&self.frame_period_s.to_le_bytes());
        out.extend_from_slice(&self.config_digest);
        out
    }

    pub fn decode<R: Read>(r: &mut R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut b = [0u8; N];
            r.read_exact(&mut b)
                .map_err(|_| Error::MalformedFeatureFile("truncated header".into()))?;
            Ok(b)
        }
        if &take::<8, _>(r)? != FEATURE_MAGIC {
            return Err(Error::MalformedFeatureFile("bad magic".into()));
        }
        let n_blocks = u32::from_le_bytes(take(r)?) as usize;
        let mut layout = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            let len = u16::from_le_bytes(take(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)
                .map_err(|_| Error::MalformedFeatureFile("truncated layout".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::MalformedFeatureFile("layout name is not UTF-8".into()))?;
            let dim = u32::from_le_bytes(take(r)?) as usize;
            layout.push((name, dim));
        }
        Ok(Self {
            layout,
            frame_count: u64::from_le_bytes(take(r)?),
            frame_period_s: f64::from_le_bytes(take(r)?),
            config_digest: take(r)?,
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-major little-endian `f32` payload.
pub fn encode_payload(m: &FeatureMatrix) -> Vec<u8> {
    m.data()
        .iter()
        .flat_map(|&v| (v as f32).to_le_bytes())
        .collect()
}

pub fn encode_binary(m: &FeatureMatrix, digest: ConfigDigest) -> Vec<u8> {
    let mut out = FeatureFileHeader::for_matrix(m, digest).encode();
    out.extend(encode_payload(m));
    out
}

fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn encode_csv(m: &FeatureMatrix, digest: ConfigDigest) -> String {
    let layout: Vec<String> = m.layout.iter().map(|(n, d)| format!("{n}:{d}")).collect();
    let mut out = format!(
        "# layout={};frame_period_s={};frames={};digest={}\n",
        layout.join(","),
        m.frame_period_s,
        m.n_frames(),
        hex(&digest)
    );
    for row in m.rows().take(m.n_frames()) {
        let cells: Vec<String> = row.iter().map(|&v| format_sig9(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes a feature matrix. Non-finite values are rejected.
pub fn write_features(
    m: &FeatureMatrix,
    digest: ConfigDigest,
    path: impl AsRef<Path>,
    format: FeatureFormat,
) -> Result<()> {
    m.check_finite()?;
    let bytes = match format {
        FeatureFormat::Binary => encode_binary(m, digest),
        FeatureFormat::Csv => encode_csv(m, digest).into_bytes(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn decode_binary<R: Read>(r: &mut R) -> Result<(FeatureFileHeader, FeatureMatrix)> {
    let header = FeatureFileHeader::decode(r)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() as u64 != header.payload_bytes() {
        return Err(Error::MalformedFeatureFile(format!(
            "payload has {} bytes, header implies {}",
            payload.len(),
            header.payload_bytes()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let m = FeatureMatrix::from_raw(header.layout.clone(), header.frame_period_s, data)?;
    Ok((header, m))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<(FeatureFileHeader, FeatureMatrix)> {
    decode_binary(&mut BufReader::new(File::open(path)?))
}

pub fn read_features_csv(path: impl AsRef<Path>) -> Result<(FeatureFileHeader, FeatureMatrix)> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::MalformedFeatureFile("empty CSV".into()))??;
    let meta = first
        .strip_prefix("# ")
        .ok_or_else(|| Error::MalformedFeatureFile("missing header comment".into()))?;
    let bad = |what: &str| Error::MalformedFeatureFile(format!("bad CSV header field {what}"));

    let mut layout = Vec::new();
    let mut period = 0.0;
    let mut frames = 0u64;
    let mut digest = [0u8; 32];
    for field in meta.split(';') {
        let (k, v) = field.split_once('=').ok_or_else(|| bad(field))?;
        match k {
            "layout" => {
                for item in v.split(',').filter(|s| !s.is_empty()) {
                    let (n, d) = item.rsplit_once(':').ok_or_else(|| bad(item))?;
                    layout.push((n.to_string(), d.parse().map_err(|_| bad(item))?));
                }
            }
            "frame_period_s" => period = v.parse().map_err(|_| bad(k))?,
            "frames" => frames = v.parse().map_err(|_| bad(k))?,
            "digest" => {
                if v.len() != 64 {
                    return Err(bad(k));
                }
                for (i, b) in digest.iter_mut().enumerate() {
                    *b = u8::from_str_radix(&v[2 * i..2 * i + 2], 16).map_err(|_| bad(k))?;
                }
            }
            _ => {}
        }
    }
    let mut data = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        for cell in line.split(',') {
            data.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::MalformedFeatureFile(format!("bad value '{cell}'")))?,
            );
        }
    }
    let m = FeatureMatrix::from_raw(layout.clone(), period, data)?;
    if m.n_frames() as u64 != frames {
        return Err(Error::MalformedFeatureFile(format!(
            "header says {frames} frames, found {}",
            m.n_frames()
        )));
    }
    let header = FeatureFileHeader {
        layout,
        frame_count: frames,
        frame_period_s: period,
        config_digest: digest,
    };
    Ok((header, m))
}

/// Encodes `rows` (frames × dims) as a PGM image. With `range = None` the
/// block's own min/max is used.
pub fn encode_heatmap(rows: &[Vec<f64>], range: Option<(f64, f64)>) -> Result<Vec<u8>> {
    let width = rows.len();
    let height = rows.first().map_or(0, Vec::len);
    if width == 0 || height == 0 {
        return Err(Error::Config(
            "heatmap needs at least one frame and one dimension".into(),
        ));
    }
    if rows.iter().any(|r| r.len() != height) {
        return Err(Error::Config("ragged heatmap block".into()));
    }
    let (lo, hi) = range.unwrap_or_else(|| {
        rows.iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    });
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for dim in (0..height).rev() {
        for row in rows {
            let px = if !(span > 0.0) {
                128
            } else {
                ((row[dim] - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            };
            out.push(px);
        }
    }
    Ok(out)
}

pub fn write_heatmap(
    rows: &[Vec<f64>],
    path: impl AsRef<Path>,
    range: Option<(f64, f64)>,
) -> Result<()> {
    let bytes = encode_heatmap(rows, range)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
