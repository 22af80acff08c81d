//! Spatial coherence estimation and the blind coherent-to-diffuse ratio
//! (CDR) estimator for a pair of omnidirectional microphones.
//!
//! The mixture coherence of a fully coherent plane wave (unknown direction)
//! plus a spherically isotropic noise field at power ratio `snr` is
//!
//! ```text
//! Γx = (snr·Γs + Γn) / (snr + 1),   |Γs| = 1,   Γn(f) = sin(2πfd/c) / (2πfd/c)
//! ```
//!
//! [`estimate_cdr`] inverts this relation for `snr` using only `Γn` and the
//! magnitude constraint on `Γs`, so the direction of arrival is never needed.
//!
//! **Sinc convention.** The diffuse-field coherence uses the *unnormalized*
//! sinc, `sin(x)/x` with `x = 2πfd/c`. Feeding `2πfd/c` into a normalized
//! `sin(πx)/(πx)` implementation would apply π twice and put the first zero
//! at `c/(4d)` instead of `c/(2d)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::StftFrame;

#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceConfig {
    /// Forgetting factor λ of the recursive spectral averages.
    pub forgetting_factor: f64,
    pub mic_spacing_m: f64,
    pub sound_speed_mps: f64,
    /// Saturation value standing in for an infinite CDR.
    pub cdr_max: f64,
    pub gamma_clip_eps: f64,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        Self {
            forgetting_factor: 0.68,
            mic_spacing_m: 0.08,
            sound_speed_mps: 343.0,
            cdr_max: 1e4,
            gamma_clip_eps: 1e-10,
        }
    }
}

impl CoherenceConfig {
    pub fn validate(&self) -> Result<()> {
        let lambda = self.forgetting_factor;
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Config(format!(
                "forgetting factor must lie in [0, 1), got {lambda}"
            )));
        }
        if !(self.mic_spacing_m > 0.0 && self.mic_spacing_m.is_finite()) {
            return Err(Error::Config(format!(
                "mic spacing must be positive, got {}",
                self.mic_spacing_m
            )));
        }
        if !(self.sound_speed_mps > 0.0 && self.sound_speed_mps.is_finite()) {
            return Err(Error::Config(format!(
                "speed of sound must be positive, got {}",
                self.sound_speed_mps
            )));
        }
        if !(self.cdr_max > 0.0 && self.cdr_max.is_finite()) {
            return Err(Error::Config("cdr_max must be positive and finite".into()));
        }
        if !(self.gamma_clip_eps > 0.0) {
            return Err(Error::Config("gamma_clip_eps must be positive".into()));
        }
        Ok(())
    }
}

/// `sin(x) / x` with the limit value 1 at the origin.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Coherence of a spherically isotropic field between two omnidirectional
/// microphones, per frequency.
pub fn diffuse_coherence_model(bin_freqs_hz: &[f64], cfg: &CoherenceConfig) -> Vec<f64> {
    let k = 2.0 * std::f64::consts::PI * cfg.mic_spacing_m / cfg.sound_speed_mps;
    bin_freqs_hz.iter().map(|&f| sinc(k * f)).collect()
}

/// Coherence of the mixed field for a given coherent-to-diffuse power ratio.
pub fn mixed_coherence_forward(snr: f64, gamma_s: Complex64, gamma_n: f64) -> Result<Complex64> {
    if (gamma_s.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::NotUnitModulus(gamma_s.norm()));
    }
    if !(snr >= 0.0) {
        return Err(Error::Config(format!(
            "snr must be non-negative, got {snr}"
        )));
    }
    Ok((gamma_s * snr + gamma_n) / (snr + 1.0))
}

/// Blind CDR estimate for one bin.
///
/// The square-root argument is clamped at zero, a vanishing denominator
/// (`|Γx| → 1`) saturates at `cdr_max`, and the result is clamped into
/// `[0, cdr_max]`.
pub fn cdr_blind(gamma_x: Complex64, gamma_n: f64, cfg: &CoherenceConfig) -> f64 {
    let re = gamma_x.re;
    let mag2 = gamma_x.norm_sqr();
    let gn2 = gamma_n * gamma_n;

    let denom = mag2 - 1.0;
    if denom.abs() < cfg.gamma_clip_eps {
        return cfg.cdr_max;
    }
    let radicand = gn2 * re * re - gn2 * mag2 + gn2 - 2.0 * gamma_n * re + mag2;
    let numer = gamma_n * re - mag2 - radicand.max(0.0).sqrt();
    let cdr = numer / denom;
    if cdr.is_nan() {
        0.0
    } else {
        cdr.clamp(0.0, cfg.cdr_max)
    }
}

pub fn estimate_cdr(gamma_x: &[Complex64], gamma_n: &[f64], cfg: &CoherenceConfig) -> Vec<f64> {
    debug_assert_eq!(gamma_x.len(), gamma_n.len());
    gamma_x
        .iter()
        .zip(gamma_n)
        .map(|(&gx, &gn)| cdr_blind(gx, gn, cfg))
        .collect()
}

pub fn cdr_to_diffuseness(cdr: &[f64]) -> Vec<f64> {
    cdr.iter().map(|&c| 1.0 / (c + 1.0)).collect()
}

/// Recursively averaged auto- and cross-power spectra of a microphone pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceState {
    pub phi11: Vec<f64>,
    pub phi22: Vec<f64>,
    pub phi12: Vec<Complex64>,
    pub frames_seen: u64,
}

impl CoherenceState {
    pub fn new(n_bins: usize) -> Self {
        Self {
            phi11: vec![0.0; n_bins],
            phi22: vec![0.0; n_bins],
            phi12: vec![Complex64::new(0.0, 0.0); n_bins],
            frames_seen: 0,
        }
    }

    pub fn n_bins(&self) -> usize {
        self.phi11.len()
    }

    /// Folds one two-channel frame into the averages and returns the
    /// per-bin coherence estimate.
    ///
    /// Bins whose `sqrt(Φ11·Φ22)` is below `gamma_clip_eps` (silence) get
    /// coherence 0. The magnitude is clamped to at most 1.
    ///
    /// Note that the blind estimator maps `Γx = 0` to `CDR = |Γn|`, not 0;
    /// [`DiffusenessEstimator`] therefore treats silent bins separately.
    pub fn update(&mut self, frame: &StftFrame, cfg: &CoherenceConfig) -> Result<Vec<Complex64>> {
        self.update_with_mask(frame, cfg).map(|(g, _)| g)
    }

    /// Like [`CoherenceState::update`], additionally flagging the bins whose
    /// power estimates were too small to define a coherence.
    pub fn update_with_mask(
        &mut self,
        frame: &StftFrame,
        cfg: &CoherenceConfig,
    ) -> Result<(Vec<Complex64>, Vec<bool>)> {
        if frame.n_channels() != 2 {
            return Err(Error::ChannelCount {
                expected: 2,
                got: frame.n_channels(),
            });
        }
        if frame.n_bins() != self.n_bins() {
            return Err(Error::BinCount {
                expected: self.n_bins(),
                got: frame.n_bins(),
            });
        }
        let lambda = cfg.forgetting_factor;
        let alpha = 1.0 - lambda;
        let (x1, x2) = (&frame.bins[0], &frame.bins[1]);

        let mut gamma = Vec::with_capacity(self.n_bins());
        let mut silent = Vec::with_capacity(self.n_bins());
        for f in 0..self.n_bins() {
            let p11 = lambda * self.phi11[f] + alpha * x1[f].norm_sqr();
            let p22 = lambda * self.phi22[f] + alpha * x2[f].norm_sqr();
            let p12 = self.phi12[f] * lambda + x1[f] * x2[f].conj() * alpha;
            self.phi11[f] = p11;
            self.phi22[f] = p22;
            self.phi12[f] = p12;

            let denom = (p11 * p22).sqrt();
            silent.push(denom < cfg.gamma_clip_eps);
            let g = if denom < cfg.gamma_clip_eps {
                Complex64::new(0.0, 0.0)
            } else {
                let g = p12 / denom;
                let mag = g.norm();
                if mag > 1.0 {
                    let g = g / mag;
                    // rounding can leave the rescaled norm one ulp above 1
                    if g.norm() > 1.0 {
                        g * (1.0 - f64::EPSILON)
                    } else {
                        g
                    }
                } else {
                    g
                }
            };
            gamma.push(g);
        }
        self.frames_seen += 1;
        Ok((gamma, silent))
    }
}

/// Per-bin estimates for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusenessFrame {
    pub index: usize,
    pub cdr: Vec<f64>,
    pub diffuseness: Vec<f64>,
    pub coherence: Vec<Complex64>,
}

/// Streaming estimator chaining the recursive coherence estimate, the blind
/// CDR estimator and the diffuseness mapping.
#[derive(Debug, Clone)]
pub struct DiffusenessEstimator {
    cfg: CoherenceConfig,
    gamma_n: Vec<f64>,
    state: CoherenceState,
}

impl DiffusenessEstimator {
    pub fn new(cfg: CoherenceConfig, bin_freqs_hz: &[f64]) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            gamma_n: diffuse_coherence_model(bin_freqs_hz, &cfg),
            state: CoherenceState::new(bin_freqs_hz.len()),
            cfg,
        })
    }

    pub fn config(&self) -> &CoherenceConfig {
        &self.cfg
    }

    pub fn diffuse_coherence(&self) -> &[f64] {
        &self.gamma_n
    }

    pub fn state(&self) -> &CoherenceState {
        &self.state
    }

    pub fn process(&mut self, frame: &StftFrame) -> Result<DiffusenessFrame> {
        let (coherence, silent) = self.state.update_with_mask(frame, &self.cfg)?;
        let mut cdr = estimate_cdr(&coherence, &self.gamma_n, &self.cfg);
        // no evidence of a coherent component: read as fully diffuse
        for (c, _) in cdr.iter_mut().zip(&silent).filter(|(_, &s)| s) {
            *c = 0.0;
        }
        let diffuseness = cdr_to_diffuseness(&cdr);
        Ok(DiffusenessFrame {
            index: frame.index,
            cdr,
            diffuseness,
            coherence,
        })
    }
}
