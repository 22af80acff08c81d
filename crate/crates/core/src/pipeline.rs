//! Feature extraction and enhancement drivers.
//!
//! [`extract`] processes a whole utterance; [`StreamingExtractor`] consumes
//! audio block by block and emits frame-level rows as soon as their deltas
//! are final. Both share [`FrameProcessor`], so the frame-level rows agree
//! bit-for-bit.

use std::collections::VecDeque;

use crate::coherence::{DiffusenessEstimator, DiffusenessFrame};
use crate::config::{Feature, PipelineConfig};
use crate::enhance::{apply_gain_power, apply_gain_spectrum, gain_from_diffuseness};
use crate::error::{Error, Result};
use crate::melfeat::{
    averaged_power, deltas, meldiffuseness, melmsc, mvn, splice, FeatureMatrix, MelFilterbank,
    StreamingDelta, DELTA_WINDOW,
};
use crate::stft::{analyze, Analyzer, StftFrame, Synthesizer};

/// Static (pre-delta) features of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticFrame {
    pub index: usize,
    /// Spectral features concatenated in selection order.
    pub spectral: Vec<f64>,
    /// Ratio features concatenated in selection order.
    pub ratio: Vec<f64>,
}

/// Per-frame computation of the selected static features.
#[derive(Debug, Clone)]
pub struct FrameProcessor {
    cfg: PipelineConfig,
    fb: MelFilterbank,
    estimator: Option<DiffusenessEstimator>,
}

impl FrameProcessor {
    pub fn new(cfg: &PipelineConfig, n_channels: usize) -> Result<Self> {
        cfg.validate_for_channels(n_channels)?;
        let fb = MelFilterbank::new(&cfg.mel, &cfg.analysis)?;
        let estimator = if cfg.needs_coherence() {
            Some(DiffusenessEstimator::new(
                cfg.coherence.clone(),
                &cfg.analysis.bin_freqs(),
            )?)
        } else {
            None
        };
        Ok(Self {
            cfg: cfg.clone(),
            fb,
            estimator,
        })
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.fb
    }

    pub fn process(&mut self, frame: &StftFrame) -> Result<StaticFrame> {
        check_spectrum(frame)?;
        let est: Option<DiffusenessFrame> = match &mut self.estimator {
            Some(e) => Some(e.process(frame)?),
            None => None,
        };
        let power = averaged_power(frame);
        let mut spectral = Vec::new();
        let mut ratio = Vec::new();
        for &f in &self.cfg.features {
            match f {
                Feature::Logmelspec => spectral.extend(self.fb.log_mel_power(&power)),
                Feature::LogmelspecEnh => {
                    let d = est
                        .as_ref()
                        .expect("estimator present for spatial features");
                    let gain = gain_from_diffuseness(&d.diffuseness, &self.cfg.enhance);
                    let mut p = power.clone();
                    apply_gain_power(&mut p, &gain)?;
                    spectral.extend(self.fb.log_mel_power(&p));
                }
                Feature::Meldiffuseness => {
                    ratio.extend(meldiffuseness(est.as_ref().expect("estimator"), &self.fb))
                }
                Feature::Melmsc => ratio.extend(melmsc(est.as_ref().expect("estimator"), &self.fb)),
            }
        }
        Ok(StaticFrame {
            index: frame.index,
            spectral,
            ratio,
        })
    }
}

/// Non-finite input would otherwise be hidden by the log floor and the CDR
/// clamp.
fn check_spectrum(frame: &StftFrame) -> Result<()> {
    let finite = frame
        .bins
        .iter()
        .flatten()
        .all(|x| x.re.is_finite() && x.im.is_finite());
    if finite {
        Ok(())
    } else {
        Err(Error::NonFinite {
            feature: "spectrum".into(),
            frame: frame.index,
        })
    }
}

fn assemble(spectral: &[f64], d1: Option<&[f64]>, d2: Option<&[f64]>, ratio: &[f64]) -> Vec<f64> {
    let mut row = spectral.to_vec();
    if let Some(d) = d1 {
        row.extend_from_slice(d);
    }
    if let Some(d) = d2 {
        row.extend_from_slice(d);
    }
    row.extend_from_slice(ratio);
    row
}

/// Frame-level features of a whole utterance, before MVN and splicing.
pub fn extract_frame_level<S: AsRef<[f64]>>(
    channels: &[S],
    cfg: &PipelineConfig,
) -> Result<FeatureMatrix> {
    let mut proc = FrameProcessor::new(cfg, channels.len())?;
    let frames = analyze(channels, &cfg.analysis)?;
    let statics = frames
        .iter()
        .map(|f| proc.process(f))
        .collect::<Result<Vec<_>>>()?;
    let spectral: Vec<Vec<f64>> = statics.iter().map(|s| s.spectral.clone()).collect();
    let dl = deltas(&spectral, cfg.delta_order);

    let mut m = FeatureMatrix::new(cfg.frame_layout(), cfg.analysis.frame_period_s());
    for (t, s) in statics.iter().enumerate() {
        let d1 = dl.first().map(|d| d[t].as_slice());
        let d2 = dl.get(1).map(|d| d[t].as_slice());
        m.push_row(&assemble(&s.spectral, d1, d2, &s.ratio))?;
    }
    m.check_finite()?;
    Ok(m)
}

/// Full feature extraction: frame-level features, then MVN and splicing
/// when configured.
pub fn extract<S: AsRef<[f64]>>(channels: &[S], cfg: &PipelineConfig) -> Result<FeatureMatrix> {
    let mut m = extract_frame_level(channels, cfg)?;
    if cfg.mvn {
        m = mvn(&m)?;
    }
    if cfg.splice > 0 {
        m = splice(&m, cfg.splice);
    }
    m.check_finite()?;
    Ok(m)
}

/// Block-wise frame-level feature extraction.
///
/// Rows are delayed by `DELTA_WINDOW` frames per delta order. MVN and
/// splicing need the whole utterance and are not applied here.
pub struct StreamingExtractor {
    cfg: PipelineConfig,
    analyzer: Analyzer,
    proc: FrameProcessor,
    delta1: Option<StreamingDelta>,
    delta2: Option<StreamingDelta>,
    ratio_queue: VecDeque<Vec<f64>>,
    centre_queue: VecDeque<Vec<f64>>,
    emitted: usize,
}

impl StreamingExtractor {
    pub fn new(cfg: &PipelineConfig, n_channels: usize) -> Result<Self> {
        let proc = FrameProcessor::new(cfg, n_channels)?;
        Ok(Self {
            analyzer: Analyzer::new(cfg.analysis.clone(), n_channels)?,
            proc,
            delta1: (cfg.delta_order >= 1).then(StreamingDelta::new),
            delta2: (cfg.delta_order >= 2).then(StreamingDelta::new),
            ratio_queue: VecDeque::new(),
            centre_queue: VecDeque::new(),
            emitted: 0,
            cfg: cfg.clone(),
        })
    }

    pub fn layout(&self) -> Vec<(String, usize)> {
        self.cfg.frame_layout()
    }

    /// Output latency in frames beyond the analysis window.
    pub fn latency_frames(&self) -> usize {
        DELTA_WINDOW * self.cfg.delta_order
    }

    pub fn rows_emitted(&self) -> usize {
        self.emitted
    }

    pub fn push<S: AsRef<[f64]>>(&mut self, block: &[S]) -> Result<Vec<Vec<f64>>> {
        let frames = self.analyzer.push(block)?;
        let mut out = Vec::new();
        for f in &frames {
            let s = self.proc.process(f)?;
            self.ratio_queue.push_back(s.ratio);
            let stage1 = match &mut self.delta1 {
                Some(d) => d.push(s.spectral),
                None => vec![(s.spectral, Vec::new())],
            };
            self.route(stage1, &mut out)?;
        }
        Ok(out)
    }

    /// Flushes the frames held back for delta look-ahead.
    pub fn finish(mut self) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        if let Some(d) = self.delta1.take() {
            let rest = d.finish();
            self.route(rest, &mut out)?;
        }
        if let Some(d) = self.delta2.take() {
            let rest = d.finish();
            self.route_second(rest, &mut out)?;
        }
        Ok(out)
    }

    fn route(&mut self, stage1: Vec<(Vec<f64>, Vec<f64>)>, out: &mut Vec<Vec<f64>>) -> Result<()> {
        for (c, d1) in stage1 {
            match &mut self.delta2 {
                Some(d2) => {
                    self.centre_queue.push_back(c);
                    let ready = d2.push(d1);
                    self.route_second(ready, out)?;
                }
                None => {
                    let ratio = self.pop_ratio()?;
                    let d1 = (self.cfg.delta_order >= 1).then_some(d1.as_slice());
                    out.push(self.finalize(assemble(&c, d1, None, &ratio))?);
                }
            }
        }
        Ok(())
    }

    fn route_second(
        &mut self,
        ready: Vec<(Vec<f64>, Vec<f64>)>,
        out: &mut Vec<Vec<f64>>,
    ) -> Result<()> {
        for (d1, d2) in ready {
            let c = self
                .centre_queue
                .pop_front()
                .expect("centre frame queued before its delta");
            let ratio = self.pop_ratio()?;
            out.push(self.finalize(assemble(&c, Some(&d1), Some(&d2), &ratio))?);
        }
        Ok(())
    }

    fn pop_ratio(&mut self) -> Result<Vec<f64>> {
        self.ratio_queue
            .pop_front()
            .ok_or_else(|| Error::Config("internal frame queue underrun".into()))
    }

    fn finalize(&mut self, row: Vec<f64>) -> Result<Vec<f64>> {
        if let Some(i) = row.iter().position(|v| !v.is_finite()) {
            let names = self.cfg.frame_layout();
            let mut off = 0;
            let feature = names
                .iter()
                .find(|(_, d)| {
                    off += d;
                    i < off
                })
                .map(|(n, _)| n.clone())
                .unwrap_or_default();
            return Err(Error::NonFinite {
                feature,
                frame: self.emitted,
            });
        }
        self.emitted += 1;
        Ok(row)
    }
}

/// Runs [`StreamingExtractor`] over a whole signal in blocks of
/// `block_len` samples and collects the rows.
pub fn extract_streaming<S: AsRef<[f64]>>(
    channels: &[S],
    cfg: &PipelineConfig,
    block_len: usize,
) -> Result<FeatureMatrix> {
    let block_len = block_len.max(1);
    let mut ex = StreamingExtractor::new(cfg, channels.len())?;
    let mut m = FeatureMatrix::new(ex.layout(), cfg.analysis.frame_period_s());
    let len = channels.first().map(|c| c.as_ref().len()).unwrap_or(0);
    let mut start = 0;
    while start < len {
        let end = (start + block_len).min(len);
        let block: Vec<&[f64]> = channels.iter().map(|c| &c.as_ref()[start..end]).collect();
        for row in ex.push(&block)? {
            m.push_row(&row)?;
        }
        start = end;
    }
    for row in ex.finish()? {
        m.push_row(&row)?;
    }
    Ok(m)
}

/// Enhanced two-channel audio and the per-frame mean diffuseness.
#[derive(Debug, Clone)]
pub struct Enhanced {
    pub channels: Vec<Vec<f64>>,
    /// Mean of the per-bin diffuseness over the Mel band, per frame.
    pub frame_diffuseness: Vec<f64>,
    /// Centre of each frame in seconds, relative to the input.
    pub frame_times_s: Vec<f64>,
}

/// Applies the coherence-based gain to both channels and resynthesizes.
///
/// The input is zero-padded by `window_len - hop` samples in front and
/// `window_len` behind, so every input sample lies under a full set of
/// overlapping windows. Without this the first and last samples would be
/// divided by a near-zero window sum once the gain is not 1. The output has
/// the input length.
pub fn enhance_signal<S: AsRef<[f64]>>(channels: &[S], cfg: &PipelineConfig) -> Result<Enhanced> {
    if channels.len() != 2 {
        return Err(Error::ChannelCount {
            expected: 2,
            got: channels.len(),
        });
    }
    cfg.analysis.validate()?;
    cfg.enhance.validate()?;
    let a = &cfg.analysis;
    let freqs = a.bin_freqs();
    let band: Vec<usize> = (0..freqs.len())
        .filter(|&k| freqs[k] >= cfg.mel.f_min_hz && freqs[k] <= cfg.mel.f_max_hz)
        .collect();
    let mut est = DiffusenessEstimator::new(cfg.coherence.clone(), &freqs)?;
    let mut synth = [Synthesizer::new(a.clone())?, Synthesizer::new(a.clone())?];
    let len = channels[0].as_ref().len();
    if channels[1].as_ref().len() != len {
        return Err(Error::ChannelLengthMismatch {
            channel: 1,
            len: channels[1].as_ref().len(),
            expected: len,
        });
    }
    let lead = a.window_len - a.hop;
    let padded: Vec<Vec<f64>> = channels
        .iter()
        .map(|c| {
            let mut v = vec![0.0; lead];
            v.extend_from_slice(c.as_ref());
            v.resize(lead + len + a.window_len, 0.0);
            v
        })
        .collect();
    let mut out: Vec<Vec<f64>> = vec![Vec::new(); 2];
    let mut frame_d = Vec::new();
    let mut frame_t = Vec::new();

    let fs = a.sample_rate_hz as f64;
    let frames = analyze(&padded, a)?;
    for mut f in frames {
        frame_t
            .push((f.index as f64 * a.hop as f64 + a.window_len as f64 / 2.0 - lead as f64) / fs);
        check_spectrum(&f)?;
        let d = est.process(&f)?;
        frame_d
            .push(band.iter().map(|&k| d.diffuseness[k]).sum::<f64>() / band.len().max(1) as f64);
        let gain = gain_from_diffuseness(&d.diffuseness, &cfg.enhance);
        for ch in f.bins.iter_mut() {
            apply_gain_spectrum(ch, &gain)?;
        }
        for ((ch, s), o) in f.bins.iter().zip(synth.iter_mut()).zip(out.iter_mut()) {
            o.extend(s.push(ch)?);
        }
    }
    for (s, o) in synth.into_iter().zip(out.iter_mut()) {
        o.extend(s.finish());
        o.resize(lead + len, 0.0);
        o.drain(..lead);
    }
    Ok(Enhanced {
        channels: out,
        frame_diffuseness: frame_d,
        frame_times_s: frame_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::synth::{generate, FieldKind, SynthConfig};

    fn stereo(seed: u64, secs: f64) -> Vec<Vec<f64>> {
        let cfg = SynthConfig {
            duration_s: secs,
            snr_db: 5.0,
            seed,
            ..Default::default()
        };
        generate(&cfg, FieldKind::Mixture)
            .unwrap()
            .channels
            .to_vec()
    }

    #[test]
    fn preset_dimensions() {
        let x = stereo(1, 0.5);
        for p in Preset::ALL {
            let mut cfg = PipelineConfig::preset(p);
            let m = extract(&x, &cfg).unwrap();
            assert_eq!(m.total_dim(), 72, "{}", p.name());
            assert_eq!(m.n_frames(), cfg.analysis.frame_count(x[0].len()));
            cfg.mvn = true;
            cfg.splice = 5;
            let m = extract(&x, &cfg).unwrap();
            assert_eq!(m.total_dim(), 792);
        }
    }

    #[test]
    fn streaming_matches_batch_bitwise() {
        let x = stereo(7, 0.7);
        for p in Preset::ALL {
            let cfg = PipelineConfig::preset(p);
            let batch = extract_frame_level(&x, &cfg).unwrap();
            for block in [1, 160, 333, 4096] {
                let s = extract_streaming(&x, &cfg, block).unwrap();
                assert_eq!(s.layout, batch.layout);
                assert_eq!(s.data(), batch.data(), "{} block {block}", p.name());
            }
        }
    }

    #[test]
    fn streaming_short_inputs() {
        let cfg = PipelineConfig::preset(Preset::PaperNoisy);
        for len in [0, 399, 400, 560, 880] {
            let x = vec![stereo(3, 0.1)[0][..len].to_vec(); 2];
            let b = extract_frame_level(&x, &cfg).unwrap();
            let s = extract_streaming(&x, &cfg, 100).unwrap();
            assert_eq!(b.n_frames(), s.n_frames());
            assert_eq!(b.data(), s.data());
        }
    }

    #[test]
    fn mono_logmelspec_only() {
        let x = vec![stereo(2, 0.3)[0].clone()];
        let cfg = PipelineConfig::preset(Preset::PaperNoisy);
        assert_eq!(extract(&x, &cfg).unwrap().total_dim(), 72);
        let bad = PipelineConfig::preset(Preset::PaperMsc);
        assert!(matches!(extract(&x, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn ratio_features_bounded() {
        let x = stereo(4, 0.5);
        let cfg = PipelineConfig {
            features: vec![Feature::Meldiffuseness, Feature::Melmsc],
            delta_order: 0,
            ..Default::default()
        };
        let m = extract(&x, &cfg).unwrap();
        assert!(m
            .data()
            .iter()
            .all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn enhanced_is_at_most_noisy() {
        let x = stereo(5, 0.5);
        let cfg = PipelineConfig {
            features: vec![Feature::Logmelspec, Feature::LogmelspecEnh],
            delta_order: 0,
            ..Default::default()
        };
        let m = extract(&x, &cfg).unwrap();
        let noisy = m.block("logmelspec").unwrap();
        let enh = m.block("logmelspec_enh").unwrap();
        for (a, b) in noisy.iter().flatten().zip(enh.iter().flatten()) {
            assert!(b <= a);
            assert!(*b >= a + 2.0 * 0.1f64.ln() - 1e-9);
        }
    }

    #[test]
    fn enhance_keeps_length_and_passes_coherent() {
        let cfg = SynthConfig {
            duration_s: 0.5,
            doa_deg: 90.0,
            seed: 11,
            ..Default::default()
        };
        let x = generate(&cfg, FieldKind::CoherentOnly)
            .unwrap()
            .channels
            .to_vec();
        let e = enhance_signal(&x, &PipelineConfig::default()).unwrap();
        assert_eq!(e.channels[0].len(), x[0].len());
        let (lo, hi) = (0, x[0].len());
        let err: f64 = (lo..hi)
            .map(|i| (e.channels[0][i] - x[0][i]).powi(2))
            .sum::<f64>();
        let pow: f64 = (lo..hi).map(|i| x[0][i].powi(2)).sum::<f64>();
        assert!(err / pow < 1e-3, "{}", err / pow);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut x = stereo(6, 0.3);
        // first window covering sample 1234 starts at 6 · 160
        x[1][1234] = f64::NAN;
        let err = extract(&x, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { frame: 6, .. }), "{err}");
        assert!(extract_streaming(&x, &PipelineConfig::default(), 100).is_err());
        assert!(enhance_signal(&x, &PipelineConfig::default()).is_err());
    }

    #[test]
    fn enhance_has_no_edge_blowup() {
        let x = stereo(12, 0.6);
        let e = enhance_signal(&x, &PipelineConfig::default()).unwrap();
        let peak = |v: &[f64]| v.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let power = |v: &[f64]| v.iter().map(|s| s * s).sum::<f64>();
        for c in 0..2 {
            assert!(peak(&e.channels[c]) <= peak(&x[c]));
            assert!(power(&e.channels[c]) < power(&x[c]));
            assert!(peak(&e.channels[c][..160]) <= 1.5 * peak(&x[c][..160]));
        }
        assert_eq!(e.frame_times_s.len(), e.frame_diffuseness.len());
    }

    #[test]
    fn enhance_rejects_mono() {
        let x = vec![vec![0.0; 1000]];
        assert!(enhance_signal(&x, &PipelineConfig::default()).is_err());
    }
}
