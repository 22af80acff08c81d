//! Pipeline configuration with a flat `key = value` text form.
//!
//! Lines are `key = value`; `#` starts a comment. Every key listed in
//! [`KEYS`] may appear in a file; the command-line flags map onto the same
//! keys and override file values. [`PipelineConfig::canonical_text`] prints
//! every key in a fixed order, and its SHA-256 is the digest stored in
//! feature files.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::coherence::CoherenceConfig;
use crate::enhance::EnhanceConfig;
use crate::error::{Error, Result};
use crate::io::ConfigDigest;
use crate::melfeat::MelConfig;
use crate::stft::{AnalysisConfig, WindowKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Feature {
    Logmelspec,
    LogmelspecEnh,
    Meldiffuseness,
    Melmsc,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Logmelspec,
        Feature::LogmelspecEnh,
        Feature::Meldiffuseness,
        Feature::Melmsc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Logmelspec => "logmelspec",
            Feature::LogmelspecEnh => "logmelspec_enh",
            Feature::Meldiffuseness => "meldiffuseness",
            Feature::Melmsc => "melmsc",
        }
    }

    /// Needs the inter-channel coherence, hence two channels.
    pub fn is_spatial(self) -> bool {
        !matches!(self, Feature::Logmelspec)
    }

    /// Log-power features; deltas are taken of these.
    pub fn is_spectral(self) -> bool {
        matches!(self, Feature::Logmelspec | Feature::LogmelspecEnh)
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown feature '{s}'")))
    }
}

/// The four feature configurations compared in the recognition
/// experiments, each `3 × n_mel` dimensional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    PaperNoisy,
    PaperEnhanced,
    PaperDiffuseness,
    PaperMsc,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::PaperNoisy,
        Preset::PaperEnhanced,
        Preset::PaperDiffuseness,
        Preset::PaperMsc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::PaperNoisy => "paper-noisy",
            Preset::PaperEnhanced => "paper-enhanced",
            Preset::PaperDiffuseness => "paper-diffuseness",
            Preset::PaperMsc => "paper-msc",
        }
    }

    pub fn features(self) -> (Vec<Feature>, usize) {
        match self {
            Preset::PaperNoisy => (vec![Feature::Logmelspec], 2),
            Preset::PaperEnhanced => (vec![Feature::LogmelspecEnh], 2),
            Preset::PaperDiffuseness => (vec![Feature::Logmelspec, Feature::Meldiffuseness], 1),
            Preset::PaperMsc => (vec![Feature::Logmelspec, Feature::Melmsc], 1),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }
}

/// Canonical configuration keys, in canonical order.
pub const KEYS: &[&str] = &[
    "sample_rate_hz",
    "window_len",
    "hop",
    "dft_size",
    "window",
    "forgetting_factor",
    "mic_spacing_m",
    "sound_speed_mps",
    "cdr_max",
    "gamma_clip_eps",
    "n_mel",
    "f_min_hz",
    "f_max_hz",
    "log_floor",
    "normalize_rows_for_ratios",
    "gain_floor",
    "overestimation",
    "features",
    "deltas",
    "mvn",
    "splice",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub analysis: AnalysisConfig,
    pub coherence: CoherenceConfig,
    pub mel: MelConfig,
    pub enhance: EnhanceConfig,
    pub features: Vec<Feature>,
    /// 0 (none), 1 (Δ) or 2 (Δ and ΔΔ) of the spectral features.
    pub delta_order: usize,
    pub mvn: bool,
    pub splice: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::preset(Preset::PaperDiffuseness)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "invalid boolean '{value}' for '{key}'"
        ))),
    }
}

/// Splits `key = value` lines, dropping comments and blank lines.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected 'key = value', got '{raw}'",
                lineno + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn preset(preset: Preset) -> Self {
        let (features, delta_order) = preset.features();
        Self {
            analysis: AnalysisConfig::default(),
            coherence: CoherenceConfig::default(),
            mel: MelConfig::default(),
            enhance: EnhanceConfig::default(),
            features,
            delta_order,
            mvn: false,
            splice: 0,
        }
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let (features, delta_order) = preset.features();
        self.features = features;
        self.delta_order = delta_order;
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "sample_rate_hz" => self.analysis.sample_rate_hz = parse(key, value)?,
            "window_len" => self.analysis.window_len = parse(key, value)?,
            "hop" => self.analysis.hop = parse(key, value)?,
            "dft_size" => self.analysis.dft_size = parse(key, value)?,
            "window" => {
                self.analysis.window = match value.trim() {
                    "hann" => WindowKind::Hann,
                    other => return Err(Error::Config(format!("unknown window '{other}'"))),
                }
            }
            "forgetting_factor" => self.coherence.forgetting_factor = parse(key, value)?,
            "mic_spacing_m" => self.coherence.mic_spacing_m = parse(key, value)?,
            "sound_speed_mps" => self.coherence.sound_speed_mps = parse(key, value)?,
            "cdr_max" => self.coherence.cdr_max = parse(key, value)?,
            "gamma_clip_eps" => self.coherence.gamma_clip_eps = parse(key, value)?,
            "n_mel" => self.mel.n_mel = parse(key, value)?,
            "f_min_hz" => self.mel.f_min_hz = parse(key, value)?,
            "f_max_hz" => self.mel.f_max_hz = parse(key, value)?,
            "log_floor" => self.mel.log_floor = parse(key, value)?,
            "normalize_rows_for_ratios" => {
                self.mel.normalize_rows_for_ratios = parse_bool(key, value)?
            }
            "gain_floor" => self.enhance.gain_floor = parse(key, value)?,
            "overestimation" => self.enhance.overestimation = parse(key, value)?,
            "features" => {
                let mut feats = Vec::new();
                for f in value.split(',').filter(|s| !s.trim().is_empty()) {
                    let f: Feature = f.parse()?;
                    if !feats.contains(&f) {
                        feats.push(f);
                    }
                }
                self.features = feats;
            }
            "preset" => self.apply_preset(value.parse()?),
            "deltas" => self.delta_order = parse(key, value)?,
            "mvn" => self.mvn = parse_bool(key, value)?,
            "splice" => self.splice = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown configuration key '{other}'"
                )))
            }
        }
        Ok(())
    }

    /// Applies a configuration file's text on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        Ok(cfg)
    }

    pub fn canonical_text(&self) -> String {
        let a = &self.analysis;
        let c = &self.coherence;
        let m = &self.mel;
        let e = &self.enhance;
        let feats: Vec<&str> = self.features.iter().map(|f| f.name()).collect();
        let values: Vec<String> = vec![
            a.sample_rate_hz.to_string(),
            a.window_len.to_string(),
            a.hop.to_string(),
            a.dft_size.to_string(),
            a.window.name().to_string(),
            format!("{:?}", c.forgetting_factor),
            format!("{:?}", c.mic_spacing_m),
            format!("{:?}", c.sound_speed_mps),
            format!("{:?}", c.cdr_max),
            format!("{:?}", c.gamma_clip_eps),
            m.n_mel.to_string(),
            format!("{:?}", m.f_min_hz),
            format!("{:?}", m.f_max_hz),
            format!("{:?}", m.log_floor),
            m.normalize_rows_for_ratios.to_string(),
            format!("{:?}", e.gain_floor),
            format!("{:?}", e.overestimation),
            feats.join(","),
            self.delta_order.to_string(),
            self.mvn.to_string(),
            self.splice.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn digest(&self) -> ConfigDigest {
        Sha256::digest(self.canonical_text().as_bytes()).into()
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        self.coherence.validate()?;
        self.mel.validate(self.analysis.sample_rate_hz)?;
        self.enhance.validate()?;
        if self.features.is_empty() {
            return Err(Error::Config("select at least one feature".into()));
        }
        if self.delta_order > 2 {
            return Err(Error::Config(format!(
                "deltas must be 0, 1 or 2, got {}",
                self.delta_order
            )));
        }
        if self.delta_order > 0 && !self.features.iter().any(|f| f.is_spectral()) {
            return Err(Error::Config(
                "deltas are computed from logmelspec / logmelspec_enh; select one of them".into(),
            ));
        }
        Ok(())
    }

    /// Rejects spatial features for mono input.
    pub fn validate_for_channels(&self, n_channels: usize) -> Result<()> {
        self.validate()?;
        if !(1..=2).contains(&n_channels) {
            return Err(Error::ChannelCount {
                expected: 2,
                got: n_channels,
            });
        }
        if n_channels < 2 {
            if let Some(f) = self.features.iter().find(|f| f.is_spatial()) {
                return Err(Error::Config(format!(
                    "feature '{f}' requires a two-channel (stereo) input, got mono"
                )));
            }
        }
        Ok(())
    }

    pub fn needs_coherence(&self) -> bool {
        self.features.iter().any(|f| f.is_spatial())
    }

    pub fn spectral_features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.features.iter().copied().filter(|f| f.is_spectral())
    }

    pub fn ratio_features(&self) -> impl Iterator<Item = Feature> + '_ {
        self.features.iter().copied().filter(|f| !f.is_spectral())
    }

    /// Column layout of the frame-level features (before MVN and splicing).
    pub fn frame_layout(&self) -> Vec<(String, usize)> {
        let n = self.mel.n_mel;
        let mut layout: Vec<(String, usize)> = self
            .spectral_features()
            .map(|f| (f.name().to_string(), n))
            .collect();
        let spectral_dim = layout.len() * n;
        if self.delta_order >= 1 {
            layout.push(("delta".into(), spectral_dim));
        }
        if self.delta_order >= 2 {
            layout.push(("delta_delta".into(), spectral_dim));
        }
        layout.extend(self.ratio_features().map(|f| (f.name().to_string(), n)));
        layout
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_layout().iter().map(|(_, d)| d).sum()
    }

    /// Dimension after splicing.
    pub fn output_dim(&self) -> usize {
        self.frame_dim() * (2 * self.splice + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_parameters() {
        let c = PipelineConfig::default();
        assert_eq!(c.coherence.forgetting_factor, 0.68);
        assert_eq!(c.coherence.mic_spacing_m, 0.08);
        assert_eq!(c.mel.n_mel, 24);
        assert_eq!(c.mel.f_min_hz, 64.0);
        assert_eq!(c.mel.f_max_hz, 8000.0);
        assert_eq!(c.analysis.window_len, 400);
        assert_eq!(c.analysis.hop, 160);
        assert_eq!(c.analysis.dft_size, 512);
        assert_eq!(c.analysis.n_bins(), 257);
    }

    #[test]
    fn preset_layouts() {
        let l = PipelineConfig::preset(Preset::PaperDiffuseness).frame_layout();
        assert_eq!(
            l,
            vec![
                ("logmelspec".to_string(), 24),
                ("delta".to_string(), 24),
                ("meldiffuseness".to_string(), 24)
            ]
        );
        for p in Preset::ALL {
            let mut c = PipelineConfig::preset(p);
            assert_eq!(c.frame_dim(), 72, "{}", p.name());
            c.splice = 5;
            assert_eq!(c.output_dim(), 792);
        }
    }

    #[test]
    fn text_roundtrip() {
        let mut c = PipelineConfig::preset(Preset::PaperMsc);
        c.mvn = true;
        c.splice = 5;
        c.coherence.forgetting_factor = 0.1 + 0.2;
        let back = PipelineConfig::from_text(&c.canonical_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn file_syntax() {
        let text = "# comment\n\nforgetting_factor = 0.5  # trailing\nfeatures = logmelspec, melmsc\nmvn = yes\n";
        let c = PipelineConfig::from_text(text).unwrap();
        assert_eq!(c.coherence.forgetting_factor, 0.5);
        assert_eq!(c.features, vec![Feature::Logmelspec, Feature::Melmsc]);
        assert!(c.mvn);
        assert!(PipelineConfig::from_text("bogus = 1").is_err());
        assert!(PipelineConfig::from_text("no equals sign").is_err());
        assert!(PipelineConfig::from_text("hop = ten").is_err());
    }

    #[test]
    fn digest_tracks_changes() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.enhance.gain_floor = 0.2;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn mono_rejects_spatial() {
        let c = PipelineConfig::preset(Preset::PaperDiffuseness);
        let err = c.validate_for_channels(1).unwrap_err().to_string();
        assert!(err.contains("two-channel"), "{err}");
        assert!(PipelineConfig::preset(Preset::PaperNoisy)
            .validate_for_channels(1)
            .is_ok());
    }

    #[test]
    fn invalid_selections() {
        let mut c = PipelineConfig::default();
        c.features.clear();
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.features = vec![Feature::Meldiffuseness];
        assert!(c.validate().is_err());
        c.delta_order = 0;
        assert!(c.validate().is_ok());
        c.delta_order = 3;
        assert!(c.validate().is_err());
    }
}
