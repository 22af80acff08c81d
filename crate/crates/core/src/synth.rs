//! Synthetic two-microphone sound fields with known coherence.
//!
//! * [`plane_wave_pair`]: one source seen by both microphones with an
//!   inter-microphone delay `Δt = d·cos(doa)/c` (coherence `e^{j2πfΔt}`).
//! * [`diffuse_noise_pair`]: a superposition of independent white-noise
//!   plane waves arriving from directions uniform on the sphere. Its
//!   long-term coherence is `sin(2πfd/c) / (2πfd/c)`.
//! * [`mix_at_cdr`]: scales the diffuse part to a broadband power ratio.
//!
//! Everything is deterministic given the seed.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// Length of the windowed-sinc fractional delay filter.
pub const FRACTIONAL_DELAY_TAPS: usize = 32;
const KAISER_BETA: f64 = 5.0;
const MIN_DIFFUSE_WAVES: usize = 32;

const STREAM_SOURCE: u64 = 1;
const STREAM_DIFFUSE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub duration_s: f64,
    /// Broadband coherent-to-diffuse power ratio in dB. `+inf` disables
    /// the diffuse part.
    pub snr_db: f64,
    /// Angle between the source direction and the microphone axis.
    pub doa_deg: f64,
    pub n_diffuse_waves: usize,
    pub seed: u64,
    pub mic_spacing_m: f64,
    pub sound_speed_mps: f64,
    pub sample_rate_hz: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            duration_s: 10.0,
            snr_db: 0.0,
            doa_deg: 90.0,
            n_diffuse_waves: 128,
            seed: 0,
            mic_spacing_m: 0.08,
            sound_speed_mps: 343.0,
            sample_rate_hz: 16_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration_s
            )));
        }
        if !(0.0..=180.0).contains(&self.doa_deg) {
            return Err(Error::Config(format!(
                "doa must lie in [0, 180] degrees, got {}",
                self.doa_deg
            )));
        }
        if self.n_diffuse_waves < MIN_DIFFUSE_WAVES {
            return Err(Error::Config(format!(
                "need at least {MIN_DIFFUSE_WAVES} diffuse waves, got {}",
                self.n_diffuse_waves
            )));
        }
        if self.snr_db.is_nan() {
            return Err(Error::Config("snr_db is NaN".into()));
        }
        if !(self.mic_spacing_m > 0.0) || !(self.sound_speed_mps > 0.0) || self.sample_rate_hz == 0
        {
            return Err(Error::Config(
                "spacing, sound speed and sample rate must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }

    /// Inter-microphone delay of the plane wave in seconds.
    pub fn plane_wave_delay_s(&self) -> f64 {
        self.mic_spacing_m * self.doa_deg.to_radians().cos() / self.sound_speed_mps
    }

    pub fn plane_wave_delay_samples(&self) -> f64 {
        self.plane_wave_delay_s() * self.sample_rate_hz as f64
    }
}

/// Which components [`generate`] emits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Mixture,
    CoherentOnly,
    DiffuseOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub channels: [Vec<f64>; 2],
    /// Mean power per sample of the coherent part (both channels).
    pub coherent_power: f64,
    /// Mean power per sample of the scaled diffuse part.
    pub diffuse_power: f64,
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Unit-variance white Gaussian noise.
pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed, STREAM_SOURCE);
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..50 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn sinc_pi(t: f64) -> f64 {
    if t.fract() == 0.0 {
        if t == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (PI * t).sin() / (PI * t)
    }
}

/// Delays `x` by `delay` samples (may be fractional or negative) with a
/// Kaiser-windowed sinc interpolator. Samples outside the signal are zero.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if delay == 0.0 {
        return x.to_vec();
    }
    let half = (FRACTIONAL_DELAY_TAPS / 2) as isize;
    let base = delay.floor() as isize;
    let i0_beta = bessel_i0(KAISER_BETA);
    // taps k in [base - half + 1, base + half]
    let taps: Vec<(isize, f64)> = (base - half + 1..=base + half)
        .map(|k| {
            let t = k as f64 - delay;
            let r = t / half as f64;
            let w = if r.abs() >= 1.0 {
                0.0
            } else {
                bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
            };
            (k, sinc_pi(t) * w)
        })
        .collect();

    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            taps.iter()
                .filter_map(|&(k, h)| {
                    let j = i - k;
                    (0..n).contains(&j).then(|| h * x[j as usize])
                })
                .sum()
        })
        .collect()
}

/// Channel 1 is the source itself, channel 2 the source delayed by `Δt`.
pub fn plane_wave_pair(source: &[f64], cfg: &SynthConfig) -> [Vec<f64>; 2] {
    let delay = cfg.plane_wave_delay_samples();
    let ch2 = if delay.abs() < 1e-9 {
        source.to_vec()
    } else {
        fractional_delay(source, delay)
    };
    [source.to_vec(), ch2]
}

/// Spherically isotropic noise at a microphone pair.
///
/// Each of the `n_diffuse_waves` waves carries independent unit-variance
/// white noise; the microphones sit at `±d/2` on the x axis. The direction
/// cosines along the axis are drawn by jittered stratification of `[-1, 1]`,
/// which keeps them uniform on the sphere while removing most of the
/// finite-sample scatter of the realized coherence. Delays are applied in
/// the frequency domain, so the noise is exactly band-limited and periodic
/// over the signal length.
pub fn diffuse_noise_pair(cfg: &SynthConfig) -> Result<[Vec<f64>; 2]> {
    cfg.validate()?;
    let n = cfg.n_samples();
    if n == 0 {
        return Ok([Vec::new(), Vec::new()]);
    }
    let mut r = rng(cfg.seed, STREAM_DIFFUSE);
    let n_bins = n / 2 + 1;
    let waves = cfg.n_diffuse_waves;

    let cosines: Vec<f64> = (0..waves)
        .map(|i| {
            let u: f64 = r.gen();
            -1.0 + 2.0 * (i as f64 + u) / waves as f64
        })
        .collect();

    let mut spec1 = vec![Complex64::new(0.0, 0.0); n_bins];
    let mut spec2 = vec![Complex64::new(0.0, 0.0); n_bins];
    let amp = (n as f64).sqrt();
    let half_amp = amp * std::f64::consts::FRAC_1_SQRT_2;
    let nyquist_real = n.is_multiple_of(2);
    let half_spacing = cfg.mic_spacing_m / 2.0;

    for &cos_theta in &cosines {
        // arrival-time offset (in samples) at the mic at +d/2; the mic at
        // -d/2 sees the negative of it
        let tau = half_spacing * cos_theta / cfg.sound_speed_mps * cfg.sample_rate_hz as f64;
        for k in 0..n_bins {
            let real_only = k == 0 || (nyquist_real && k == n_bins - 1);
            let a = if real_only {
                Complex64::new(amp * r.sample::<f64, _>(StandardNormal), 0.0)
            } else {
                Complex64::new(
                    half_amp * r.sample::<f64, _>(StandardNormal),
                    half_amp * r.sample::<f64, _>(StandardNormal),
                )
            };
            let phase = 2.0 * PI * k as f64 / n as f64 * tau;
            let rot = if real_only {
                // a real bin cannot carry a fractional delay; for k = 0 the
                // rotation is 1 anyway
                Complex64::new(phase.cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, phase)
            };
            spec1[k] += a * rot;
            spec2[k] += a * rot.conj();
        }
    }

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let scale = 1.0 / n as f64;
    let mut out = [vec![0.0; n], vec![0.0; n]];
    for (spec, dst) in [spec1, spec2].iter_mut().zip(out.iter_mut()) {
        ifft.process(spec, dst)
            .map_err(|e| Error::Config(format!("inverse FFT failed: {e}")))?;
        dst.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(out)
}

fn mean_power(ch: &[Vec<f64>; 2]) -> f64 {
    let n = ch[0].len() + ch[1].len();
    if n == 0 {
        return 0.0;
    }
    ch.iter().flatten().map(|v| v * v).sum::<f64>() / n as f64
}

/// Adds the diffuse pair to the coherent pair, scaled so that the broadband
/// power ratio equals `10^(snr_db/10)`. `snr_db = +inf` returns the coherent
/// part unchanged.
pub fn mix_at_cdr(
    coherent: &[Vec<f64>; 2],
    diffuse: &[Vec<f64>; 2],
    snr_db: f64,
) -> Result<Mixture> {
    for ch in 0..2 {
        if coherent[ch].len() != diffuse[ch].len() {
            return Err(Error::LengthMismatch(coherent[ch].len(), diffuse[ch].len()));
        }
    }
    if coherent[0].len() != coherent[1].len() {
        return Err(Error::LengthMismatch(coherent[0].len(), coherent[1].len()));
    }
    if snr_db.is_nan() {
        return Err(Error::Config("snr_db is NaN".into()));
    }
    let ps = mean_power(coherent);
    let pn = mean_power(diffuse);
    if snr_db == f64::INFINITY || pn == 0.0 {
        return Ok(Mixture {
            channels: coherent.clone(),
            coherent_power: ps,
            diffuse_power: 0.0,
        });
    }
    let target_pn = ps / 10f64.powf(snr_db / 10.0);
    let g = (target_pn / pn).sqrt();
    let channels = [0, 1].map(|ch| {
        coherent[ch]
            .iter()
            .zip(&diffuse[ch])
            .map(|(s, n)| s + g * n)
            .collect()
    });
    Ok(Mixture {
        channels,
        coherent_power: ps,
        diffuse_power: pn * g * g,
    })
}

/// White-noise plane wave plus diffuse noise as described by `cfg`.
pub fn generate(cfg: &SynthConfig, kind: FieldKind) -> Result<Mixture> {
    cfg.validate()?;
    let n = cfg.n_samples();
    match kind {
        FieldKind::CoherentOnly => {
            let s = plane_wave_pair(&white_noise(n, cfg.seed), cfg);
            let p = mean_power(&s);
            Ok(Mixture {
                channels: s,
                coherent_power: p,
                diffuse_power: 0.0,
            })
        }
        FieldKind::DiffuseOnly => {
            let d = diffuse_noise_pair(cfg)?;
            let p = mean_power(&d);
            Ok(Mixture {
                channels: d,
                coherent_power: 0.0,
                diffuse_power: p,
            })
        }
        FieldKind::Mixture => {
            let s = plane_wave_pair(&white_noise(n, cfg.seed), cfg);
            if cfg.snr_db == f64::INFINITY {
                return mix_at_cdr(&s, &[vec![0.0; n], vec![0.0; n]], cfg.snr_db);
            }
            let d = diffuse_noise_pair(cfg)?;
            mix_at_cdr(&s, &d, cfg.snr_db)
        }
    }
}

/// A reverberant-style test utterance: noise bursts arriving as a plane
/// wave, each followed by an exponentially decaying diffuse tail, over a
/// weak diffuse background.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstScene {
    pub channels: [Vec<f64>; 2],
    /// Sample ranges `[start, end)` in which the direct sound is on.
    pub bursts: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BurstConfig {
    pub field: SynthConfig,
    pub burst_s: f64,
    pub gap_s: f64,
    pub n_bursts: usize,
    /// Level of the diffuse tail at burst onset relative to the direct
    /// sound, in dB.
    pub tail_level_db: f64,
    /// Reverberation time of the tail (60 dB decay).
    pub t60_s: f64,
    pub background_db: f64,
}

impl Default for BurstConfig {
    fn default() -> Self {
        Self {
            field: SynthConfig {
                doa_deg: 60.0,
                seed: 2015,
                ..Default::default()
            },
            burst_s: 0.3,
            gap_s: 0.5,
            n_bursts: 6,
            tail_level_db: -6.0,
            t60_s: 0.5,
            background_db: -40.0,
        }
    }
}

/// First-order low-pass shaping, roughly the spectral tilt of speech.
fn speech_tilt(x: &mut [f64]) {
    let mut y = 0.0;
    for v in x.iter_mut() {
        y = *v + 0.7 * y;
        *v = y;
    }
}

pub fn burst_scene(cfg: &BurstConfig) -> Result<BurstScene> {
    let fs = cfg.field.sample_rate_hz as f64;
    let burst = (cfg.burst_s * fs).round() as usize;
    let gap = (cfg.gap_s * fs).round() as usize;
    let n = gap + cfg.n_bursts * (burst + gap);
    let field = SynthConfig {
        duration_s: n as f64 / fs,
        ..cfg.field.clone()
    };
    field.validate()?;

    let mut direct_src = white_noise(n, field.seed);
    speech_tilt(&mut direct_src);
    let mut env = vec![0.0; n];
    let mut tail_env = vec![0.0; n];
    let ramp = (0.01 * fs) as usize;
    let decay = (10f64.ln() * 6.0) / (cfg.t60_s * fs);
    let tail_gain = 10f64.powf(cfg.tail_level_db / 20.0);
    let mut bursts = Vec::with_capacity(cfg.n_bursts);
    for b in 0..cfg.n_bursts {
        let start = gap + b * (burst + gap);
        let end = start + burst;
        bursts.push((start, end));
        for (i, e) in env[start..end].iter_mut().enumerate() {
            let up = ((i as f64 + 0.5) / ramp as f64).min(1.0);
            let down = (((burst - i) as f64 - 0.5) / ramp as f64).min(1.0);
            *e = up.min(down);
        }
        // the tail builds up with the burst and decays after it ends
        for i in start..n {
            let held = (i.min(end) - start) as f64 / burst as f64;
            let since_end = i.saturating_sub(end) as f64;
            let amp = tail_gain * held.sqrt() * (-decay * since_end / 2.0).exp();
            tail_env[i] = (tail_env[i] * tail_env[i] + amp * amp).sqrt();
        }
    }
    for (v, e) in direct_src.iter_mut().zip(&env) {
        *v *= e;
    }
    let direct = plane_wave_pair(&direct_src, &field);

    let mut tail = diffuse_noise_pair(&field)?;
    let mut bg = diffuse_noise_pair(&SynthConfig {
        seed: field.seed.wrapping_add(1),
        ..field.clone()
    })?;
    let norm = 1.0 / (field.n_diffuse_waves as f64).sqrt();
    let bg_gain = norm * 10f64.powf(cfg.background_db / 20.0);
    for ch in 0..2 {
        speech_tilt(&mut tail[ch]);
        speech_tilt(&mut bg[ch]);
    }
    let channels = [0, 1].map(|ch| {
        (0..n)
            .map(|i| direct[ch][i] + norm * tail_env[i] * tail[ch][i] + bg_gain * bg[ch][i])
            .collect()
    });
    Ok(BurstScene { channels, bursts })
}
