//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frame `t` covers samples `[t * hop, t * hop + window_len)`. The signal is
//! not padded at either edge: the first frame starts at sample 0 and a
//! trailing partial frame is dropped, exactly as a real-time front-end that
//! cannot look ahead would behave. Each frame is multiplied by a periodic
//! Hann window, zero-padded at the tail to `dft_size` and transformed with an
//! unnormalized forward DFT; bins `0..=dft_size/2` are kept.
//!
//! The streaming [`Analyzer`] and the batch [`analyze`] share the per-frame
//! transform, so they produce bit-identical frames for the same input.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};

/// Smallest summed-squared-window value used as the overlap-add denominator.
pub const OLA_DENOMINATOR_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WindowKind {
    #[default]
    Hann,
}

impl WindowKind {
    /// Periodic window of length `len`.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub sample_rate_hz: u32,
    pub window_len: usize,
    pub hop: usize,
    pub dft_size: usize,
    pub window: WindowKind,
}

impl Default for AnalysisConfig {
    /// 16 kHz, 25 ms window, 10 ms shift, 512-point DFT.
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            window_len: 400,
            hop: 160,
            dft_size: 512,
            window: WindowKind::Hann,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        if self.hop == 0 {
            return Err(Error::Config("hop must be positive".into()));
        }
        if !self.dft_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "dft_size must be a power of two, got {}",
                self.dft_size
            )));
        }
        if !(self.hop <= self.window_len && self.window_len <= self.dft_size) {
            return Err(Error::Config(format!(
                "need hop <= window_len <= dft_size, got {} / {} / {}",
                self.hop, self.window_len, self.dft_size
            )));
        }
        Ok(())
    }

    /// Number of retained bins, `dft_size / 2 + 1`.
    pub fn n_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    /// Center frequency of each retained bin, `m * fs / dft_size`.
    pub fn bin_freqs(&self) -> Vec<f64> {
        let df = self.sample_rate_hz as f64 / self.dft_size as f64;
        (0..self.n_bins()).map(|m| m as f64 * df).collect()
    }

    pub fn frame_period_s(&self) -> f64 {
        self.hop as f64 / self.sample_rate_hz as f64
    }
}

/// Complex spectra of all channels for one analysis frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrame {
    pub index: usize,
    /// `bins[channel][bin]`
    pub bins: Vec<Vec<Complex64>>,
}

impl StftFrame {
    pub fn n_channels(&self) -> usize {
        self.bins.len()
    }

    pub fn n_bins(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }

    pub fn channel(&self, ch: usize) -> &[Complex64] {
        &self.bins[ch]
    }
}

struct FrameTransform {
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
    input: Vec<f64>,
    scratch: Vec<Complex64>,
}

impl FrameTransform {
    fn new(cfg: &AnalysisConfig) -> Self {
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(cfg.dft_size);
        let scratch = fft.make_scratch_vec();
        Self {
            window: cfg.window.coefficients(cfg.window_len),
            input: vec![0.0; cfg.dft_size],
            fft,
            scratch,
        }
    }

    fn run<I>(&mut self, segment: I) -> Vec<Complex64>
    where
        I: IntoIterator<Item = f64>,
    {
        let wl = self.window.len();
        for ((dst, x), w) in self.input[..wl].iter_mut().zip(segment).zip(&self.window) {
            *dst = x * w;
        }
        self.input[wl..].fill(0.0);
        let mut out = self.fft.make_output_vec();
        self.fft
            .process_with_scratch(&mut self.input, &mut out, &mut self.scratch)
            .expect("buffer sizes are fixed at plan time");
        out
    }
}

fn check_equal_lengths<S: AsRef<[f64]>>(channels: &[S]) -> Result<usize> {
    let expected = channels.first().map_or(0, |c| c.as_ref().len());
    for (channel, c) in channels.iter().enumerate() {
        let len = c.as_ref().len();
        if len != expected {
            return Err(Error::ChannelLengthMismatch {
                channel,
                len,
                expected,
            });
        }
    }
    Ok(expected)
}

/// Batch analysis of a complete multichannel signal.
pub fn analyze<S: AsRef<[f64]>>(channels: &[S], cfg: &AnalysisConfig) -> Result<Vec<StftFrame>> {
    cfg.validate()?;
    let len = check_equal_lengths(channels)?;
    let mut transform = FrameTransform::new(cfg);
    let frames = (0..cfg.frame_count(len))
        .map(|t| {
            let start = t * cfg.hop;
            let bins = channels
                .iter()
                .map(|c| {
                    let seg = &c.as_ref()[start..start + cfg.window_len];
                    transform.run(seg.iter().copied())
                })
                .collect();
            StftFrame { index: t, bins }
        })
        .collect();
    Ok(frames)
}

/// Streaming analysis: accepts arbitrarily sized blocks and emits every
/// frame as soon as its last sample has arrived.
pub struct Analyzer {
    cfg: AnalysisConfig,
    transform: FrameTransform,
    pending: Vec<VecDeque<f64>>,
    next_index: usize,
}

impl Analyzer {
    pub fn new(cfg: AnalysisConfig, n_channels: usize) -> Result<Self> {
        cfg.validate()?;
        if n_channels == 0 {
            return Err(Error::Config("need at least one channel".into()));
        }
        Ok(Self {
            transform: FrameTransform::new(&cfg),
            pending: vec![VecDeque::with_capacity(2 * cfg.window_len); n_channels],
            next_index: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.cfg
    }

    pub fn n_channels(&self) -> usize {
        self.pending.len()
    }

    /// Number of frames emitted so far.
    pub fn frames_emitted(&self) -> usize {
        self.next_index
    }

    pub fn push<S: AsRef<[f64]>>(&mut self, block: &[S]) -> Result<Vec<StftFrame>> {
        if block.len() != self.pending.len() {
            return Err(Error::ChannelCount {
                expected: self.pending.len(),
                got: block.len(),
            });
        }
        check_equal_lengths(block)?;
        for (buf, c) in self.pending.iter_mut().zip(block) {
            buf.extend(c.as_ref().iter().copied());
        }

        let mut frames = Vec::new();
        while self.pending[0].len() >= self.cfg.window_len {
            let wl = self.cfg.window_len;
            let bins = self
                .pending
                .iter()
                .map(|buf| self.transform.run(buf.range(..wl).copied()))
                .collect();
            frames.push(StftFrame {
                index: self.next_index,
                bins,
            });
            self.next_index += 1;
            for buf in &mut self.pending {
                buf.drain(..self.cfg.hop);
            }
        }
        Ok(frames)
    }
}

/// Streaming weighted overlap-add synthesis for a single channel.
///
/// The synthesis window equals the analysis window and every output sample is
/// divided by the summed squared window at that position, floored at
/// [`OLA_DENOMINATOR_FLOOR`].
pub struct Synthesizer {
    cfg: AnalysisConfig,
    window: Vec<f64>,
    ifft: Arc<dyn ComplexToReal<f64>>,
    spectrum: Vec<Complex64>,
    time: Vec<f64>,
    scratch: Vec<Complex64>,
    acc: Vec<f64>,
    norm: Vec<f64>,
    frames_seen: usize,
}

impl Synthesizer {
    pub fn new(cfg: AnalysisConfig) -> Result<Self> {
        cfg.validate()?;
        let mut planner = RealFftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(cfg.dft_size);
        Ok(Self {
            window: cfg.window.coefficients(cfg.window_len),
            spectrum: ifft.make_input_vec(),
            time: ifft.make_output_vec(),
            scratch: ifft.make_scratch_vec(),
            acc: vec![0.0; cfg.window_len],
            norm: vec![0.0; cfg.window_len],
            frames_seen: 0,
            ifft,
            cfg,
        })
    }

    /// Adds one frame and returns the `hop` samples that no later frame can
    /// still modify.
    pub fn push(&mut self, bins: &[Complex64]) -> Result<Vec<f64>> {
        if bins.len() != self.cfg.n_bins() {
            return Err(Error::BinCount {
                expected: self.cfg.n_bins(),
                got: bins.len(),
            });
        }
        self.spectrum.copy_from_slice(bins);
        // a real signal has purely real DC and Nyquist bins
        let last = self.spectrum.len() - 1;
        self.spectrum[0].im = 0.0;
        self.spectrum[last].im = 0.0;
        self.ifft
            .process_with_scratch(&mut self.spectrum, &mut self.time, &mut self.scratch)
            .expect("buffer sizes are fixed at plan time");

        let scale = 1.0 / self.cfg.dft_size as f64;
        for (n, &w) in self.window.iter().enumerate() {
            self.acc[n] += self.time[n] * scale * w;
            self.norm[n] += w * w;
        }
        self.frames_seen += 1;

        let hop = self.cfg.hop;
        let out = self.drain(hop);
        self.acc.extend(std::iter::repeat_n(0.0, hop));
        self.norm.extend(std::iter::repeat_n(0.0, hop));
        Ok(out)
    }

    /// Flushes the tail of the last frame. Returns nothing if no frame was
    /// ever pushed.
    pub fn finish(mut self) -> Vec<f64> {
        if self.frames_seen == 0 {
            return Vec::new();
        }
        let tail = self.cfg.window_len - self.cfg.hop;
        self.drain(tail)
    }

    fn drain(&mut self, n: usize) -> Vec<f64> {
        let out = self
            .acc
            .drain(..n)
            .zip(self.norm.drain(..n))
            .map(|(a, d)| a / d.max(OLA_DENOMINATOR_FLOOR))
            .collect();
        out
    }
}

/// Batch overlap-add resynthesis of a single channel. The output has
/// `(frames - 1) * hop + window_len` samples (zero for an empty stream).
pub fn synthesize<S: AsRef<[Complex64]>>(frames: &[S], cfg: &AnalysisConfig) -> Result<Vec<f64>> {
    let mut synth = Synthesizer::new(cfg.clone())?;
    let mut out = Vec::with_capacity(frames.len() * cfg.hop + cfg.window_len);
    for f in frames {
        out.extend(synth.push(f.as_ref())?);
    }
    out.extend(synth.finish());
    Ok(out)
}
