//! Mel filterbank and frame-level features, plus the utterance-level
//! post-processing (deltas, mean/variance normalization, splicing).
//!
//! Power features (`logmelspec`) use the raw triangular weights. Ratio
//! features (`meldiffuseness`, `melmsc`) use the same triangles divided by
//! their row sums when [`MelConfig::normalize_rows_for_ratios`] is set, so
//! they remain weighted means in `[0, 1]`.

use std::collections::VecDeque;

use crate::coherence::DiffusenessFrame;
use crate::error::{Error, Result};
use crate::stft::{AnalysisConfig, StftFrame};

/// Regression half-width used for delta features.
pub const DELTA_WINDOW: usize = 2;
/// Standard-deviation floor used by [`mvn`].
pub const MVN_STD_FLOOR: f64 = 1e-8;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub n_mel: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub log_floor: f64,
    pub normalize_rows_for_ratios: bool,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mel: 24,
            f_min_hz: 64.0,
            f_max_hz: 8000.0,
            log_floor: 1e-10,
            normalize_rows_for_ratios: true,
        }
    }
}

impl MelConfig {
    pub fn validate(&self, sample_rate_hz: u32) -> Result<()> {
        if self.n_mel == 0 {
            return Err(Error::Config("n_mel must be at least 1".into()));
        }
        let nyquist = sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.f_min_hz && self.f_min_hz < self.f_max_hz && self.f_max_hz <= nyquist) {
            return Err(Error::Config(format!(
                "need 0 <= f_min < f_max <= {nyquist} Hz, got {} .. {}",
                self.f_min_hz, self.f_max_hz
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Triangular Mel weights, `n_mel` rows by `n_bins` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Vec<Vec<f64>>,
    row_sums: Vec<f64>,
    /// Half-open bin range of each row's nonzero support.
    support: Vec<(usize, usize)>,
    edges_hz: Vec<f64>,
    log_floor: f64,
    normalize_ratios: bool,
}

impl MelFilterbank {
    /// Builds `n_mel` triangles on `n_mel + 2` edges equally spaced in Mel
    /// between `f_min` and `f_max`, evaluated at the DFT bin centres.
    pub fn new(mel: &MelConfig, analysis: &AnalysisConfig) -> Result<Self> {
        analysis.validate()?;
        mel.validate(analysis.sample_rate_hz)?;

        let (m_lo, m_hi) = (hz_to_mel(mel.f_min_hz), hz_to_mel(mel.f_max_hz));
        let n_edges = mel.n_mel + 2;
        let edges_hz: Vec<f64> = (0..n_edges)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_edges - 1) as f64))
            .collect();
        let freqs = analysis.bin_freqs();

        let mut weights = Vec::with_capacity(mel.n_mel);
        let mut row_sums = Vec::with_capacity(mel.n_mel);
        let mut support = Vec::with_capacity(mel.n_mel);
        for j in 0..mel.n_mel {
            let (lo, peak, hi) = (edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]);
            let row: Vec<f64> = freqs
                .iter()
                .map(|&f| {
                    if f > lo && f <= peak {
                        (f - lo) / (peak - lo)
                    } else if f > peak && f < hi {
                        (hi - f) / (hi - peak)
                    } else {
                        0.0
                    }
                })
                .collect();
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(Error::Config(format!(
                    "Mel filter {j} ({lo:.1}-{hi:.1} Hz) covers no DFT bin; \
                     reduce n_mel or widen the frequency range"
                )));
            }
            let first = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = row.iter().rposition(|&w| w > 0.0).unwrap_or(0);
            support.push((first, last + 1));
            weights.push(row);
            row_sums.push(sum);
        }

        Ok(Self {
            weights,
            row_sums,
            support,
            edges_hz,
            log_floor: mel.log_floor,
            normalize_ratios: mel.normalize_rows_for_ratios,
        })
    }

    pub fn n_mel(&self) -> usize {
        self.weights.len()
    }

    pub fn n_bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    pub fn log_floor(&self) -> f64 {
        self.log_floor
    }

    /// Raw weighted sums `Σ_f w[j,f]·x[f]`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.support)
            .map(|(row, &(a, b))| row[a..b].iter().zip(&x[a..b]).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// Weighted means for ratio-type inputs (plain sums when row
    /// normalization is disabled).
    pub fn apply_ratio(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.apply(x);
        if self.normalize_ratios {
            for (v, s) in out.iter_mut().zip(&self.row_sums) {
                *v /= s;
            }
        }
        out
    }

    /// `ln(max(floor, Σ w·P))` for a power spectrum `P`.
    pub fn log_mel_power(&self, power: &[f64]) -> Vec<f64> {
        self.apply(power)
            .into_iter()
            .map(|e| e.max(self.log_floor).ln())
            .collect()
    }
}

/// Power spectrum averaged over all channels of a frame.
pub fn averaged_power(frame: &StftFrame) -> Vec<f64> {
    let n = frame.n_channels() as f64;
    (0..frame.n_bins())
        .map(|f| frame.bins.iter().map(|ch| ch[f].norm_sqr()).sum::<f64>() / n)
        .collect()
}

pub fn logmelspec(frame: &StftFrame, fb: &MelFilterbank) -> Vec<f64> {
    fb.log_mel_power(&averaged_power(frame))
}

pub fn meldiffuseness(frame: &DiffusenessFrame, fb: &MelFilterbank) -> Vec<f64> {
    fb.apply_ratio(&frame.diffuseness)
}

pub fn melmsc(frame: &DiffusenessFrame, fb: &MelFilterbank) -> Vec<f64> {
    let msc: Vec<f64> = frame.coherence.iter().map(|g| g.norm_sqr()).collect();
    fb.apply_ratio(&msc)
}

/// Frames-by-dims feature matrix with a named column layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub layout: Vec<(String, usize)>,
    pub frame_period_s: f64,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(layout: Vec<(String, usize)>, frame_period_s: f64) -> Self {
        Self {
            layout,
            frame_period_s,
            data: Vec::new(),
        }
    }

    /// Single-block matrix from a list of equally sized rows.
    pub fn from_rows(name: &str, rows: &[Vec<f64>], frame_period_s: f64) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut m = Self::new(vec![(name.to_string(), dim)], frame_period_s);
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    pub fn from_raw(
        layout: Vec<(String, usize)>,
        frame_period_s: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        let m = Self {
            layout,
            frame_period_s,
            data,
        };
        let dim = m.total_dim();
        if (dim == 0 && !m.data.is_empty()) || (dim > 0 && !m.data.len().is_multiple_of(dim)) {
            return Err(Error::LengthMismatch(m.data.len(), dim));
        }
        Ok(m)
    }

    pub fn total_dim(&self) -> usize {
        self.layout.iter().map(|(_, d)| d).sum()
    }

    pub fn n_frames(&self) -> usize {
        match self.total_dim() {
            0 => 0,
            d => self.data.len() / d,
        }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.total_dim() {
            return Err(Error::LengthMismatch(row.len(), self.total_dim()));
        }
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let d = self.total_dim();
        &self.data[t * d..(t + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.total_dim().max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Column range of the first layout entry named `name`.
    pub fn block_range(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut start = 0;
        for (n, d) in &self.layout {
            if n == name {
                return Some(start..start + d);
            }
            start += d;
        }
        None
    }

    /// Rows of one named block.
    pub fn block(&self, name: &str) -> Option<Vec<Vec<f64>>> {
        let r = self.block_range(name)?;
        Some(self.rows().map(|row| row[r.clone()].to_vec()).collect())
    }

    /// Returns an error naming the first non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        let d = self.total_dim().max(1);
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            let col = i % d;
            let mut start = 0;
            let mut feature = String::new();
            for (n, dim) in &self.layout {
                if col < start + dim {
                    feature = n.clone();
                    break;
                }
                start += dim;
            }
            return Err(Error::NonFinite {
                feature,
                frame: i / d,
            });
        }
        Ok(())
    }
}

/// Delta of the centre frame of a five-frame context `c[t-2..=t+2]`.
pub fn delta_kernel(ctx: [&[f64]; 2 * DELTA_WINDOW + 1]) -> Vec<f64> {
    let [m2, m1, _, p1, p2] = ctx;
    (0..m2.len())
        .map(|i| (1.0 * (p1[i] - m1[i]) + 2.0 * (p2[i] - m2[i])) / 10.0)
        .collect()
}

fn delta_once(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = frames.len() as isize;
    let at = |i: isize| frames[i.clamp(0, n - 1) as usize].as_slice();
    (0..n)
        .map(|t| delta_kernel([at(t - 2), at(t - 1), at(t), at(t + 1), at(t + 2)]))
        .collect()
}

/// Regression deltas (`W = 2`, edge replication). `order = 1` returns
/// `[Δ]`, `order = 2` returns `[Δ, ΔΔ]`.
pub fn deltas(frames: &[Vec<f64>], order: usize) -> Vec<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<Vec<f64>>> = Vec::with_capacity(order);
    for k in 0..order {
        let src = if k == 0 { frames } else { &out[k - 1] };
        if src.is_empty() {
            out.push(Vec::new());
            continue;
        }
        let d = delta_once(src);
        out.push(d);
    }
    out
}

/// Causal delta stage. Emits `(c_t, Δ_t)` once `c_{t+2}` is known, or at
/// [`StreamingDelta::finish`] with end replication; the arithmetic is that
/// of [`deltas`], so results match the batch computation bit-for-bit.
#[derive(Debug, Default)]
pub struct StreamingDelta {
    history: VecDeque<Vec<f64>>,
    first_index: usize,
    next_emit: usize,
    received: usize,
}

impl StreamingDelta {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, frame: Vec<f64>) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.history.push_back(frame);
        self.received += 1;
        let mut out = Vec::new();
        while self.next_emit + DELTA_WINDOW < self.received {
            out.push(self.emit(self.received - 1));
        }
        out
    }

    pub fn finish(mut self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        while self.next_emit < self.received {
            out.push(self.emit(self.received - 1));
        }
        out
    }

    fn emit(&mut self, last_known: usize) -> (Vec<f64>, Vec<f64>) {
        let t = self.next_emit as isize;
        let get = |i: isize| {
            let i = i.clamp(0, last_known as isize) as usize;
            self.history[i - self.first_index].as_slice()
        };
        let d = delta_kernel([get(t - 2), get(t - 1), get(t), get(t + 1), get(t + 2)]);
        let centre = get(t).to_vec();
        self.next_emit += 1;
        while self.first_index + DELTA_WINDOW < self.next_emit {
            self.history.pop_front();
            self.first_index += 1;
        }
        (centre, d)
    }
}

/// Per-dimension mean and variance normalization over the utterance,
/// using the population standard deviation floored at [`MVN_STD_FLOOR`].
pub fn mvn(features: &FeatureMatrix) -> Result<FeatureMatrix> {
    let n = features.n_frames();
    if n < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: n });
    }
    let d = features.total_dim();
    let mut mean = vec![0.0; d];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in features.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|s| (s / n as f64).sqrt().max(MVN_STD_FLOOR))
        .collect();

    let data = features
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(&mean)
                .zip(&std)
                .map(|((v, m), s)| (v - m) / s)
                .collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix::from_raw(features.layout.clone(), features.frame_period_s, data)
}

/// Concatenates frames `t-context ..= t+context` (edge replication) into
/// each output frame.
pub fn splice(features: &FeatureMatrix, context: usize) -> FeatureMatrix {
    if context == 0 {
        return features.clone();
    }
    let c = context as isize;
    let layout = (-c..=c)
        .flat_map(|off| {
            features
                .layout
                .iter()
                .map(move |(name, dim)| (format!("{name}@{off:+}"), *dim))
        })
        .collect();
    let n = features.n_frames() as isize;
    let mut data = Vec::with_capacity(features.data.len() * (2 * context + 1));
    for t in 0..n {
        for off in -c..=c {
            data.extend_from_slice(features.row((t + off).clamp(0, n - 1) as usize));
        }
    }
    FeatureMatrix {
        layout,
        frame_period_s: features.frame_period_s,
        data,
    }
}
