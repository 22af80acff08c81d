//! Coherence-based spectral magnitude subtraction.
//!
//! The gain `G = max(G_min, 1 - μ·sqrt(D))` removes the diffuse share of the
//! magnitude in each bin, with `D = 1/(CDR + 1)` the estimated diffuseness.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    /// Lower bound `G_min` of the gain.
    pub gain_floor: f64,
    /// Over-subtraction factor `μ`.
    pub overestimation: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            gain_floor: 0.1,
            overestimation: 1.0,
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gain_floor) {
            return Err(Error::Config(format!(
                "gain floor must lie in [0, 1], got {}",
                self.gain_floor
            )));
        }
        if !(self.overestimation > 0.0 && self.overestimation.is_finite()) {
            return Err(Error::Config(format!(
                "overestimation must be positive, got {}",
                self.overestimation
            )));
        }
        Ok(())
    }
}

pub fn gain_from_diffuseness(diffuseness: &[f64], cfg: &EnhanceConfig) -> Vec<f64> {
    diffuseness
        .iter()
        .map(|&d| (1.0 - cfg.overestimation * d.sqrt()).clamp(cfg.gain_floor, 1.0))
        .collect()
}

pub fn subtraction_gain(cdr: &[f64], cfg: &EnhanceConfig) -> Vec<f64> {
    let d: Vec<f64> = cdr.iter().map(|&c| 1.0 / (c + 1.0)).collect();
    gain_from_diffuseness(&d, cfg)
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::BinCount {
            expected: b,
            got: a,
        });
    }
    Ok(())
}

/// Scales complex bins by the gain; phase is untouched.
pub fn apply_gain_spectrum(spectrum: &mut [Complex64], gain: &[f64]) -> Result<()> {
    check_len(spectrum.len(), gain.len())?;
    for (x, &g) in spectrum.iter_mut().zip(gain) {
        *x *= g;
    }
    Ok(())
}

/// Scales a power spectrum by the squared gain.
pub fn apply_gain_power(power: &mut [f64], gain: &[f64]) -> Result<()> {
    check_len(power.len(), gain.len())?;
    for (p, &g) in power.iter_mut().zip(gain) {
        *p *= g * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gain_examples() {
        let cfg = EnhanceConfig::default();
        let g = subtraction_gain(&[1e4, 0.0, 3.0], &cfg);
        assert!((g[0] - (1.0 - (1.0f64 / 10001.0).sqrt())).abs() < 1e-15);
        assert!((g[0] - 0.99).abs() < 1e-3);
        assert_eq!(g[1], 0.1);
        assert_eq!(g[2], 0.5);
    }

    #[test]
    fn zero_diffuseness_is_identity() {
        let cfg = EnhanceConfig {
            gain_floor: 0.0,
            overestimation: 1.0,
        };
        let g = gain_from_diffuseness(&[0.0; 4], &cfg);
        assert!(g.iter().all(|&v| v == 1.0));
        let orig = vec![
            Complex64::new(0.1, -3.0),
            Complex64::new(1e-300, 7.0),
            Complex64::new(-2.5, 0.0),
            Complex64::new(0.3, 0.3),
        ];
        let mut x = orig.clone();
        apply_gain_spectrum(&mut x, &g).unwrap();
        assert_eq!(x, orig);
    }

    #[test]
    fn uniform_floor_attenuation() {
        let cfg = EnhanceConfig::default();
        let g = gain_from_diffuseness(&[1.0; 3], &cfg);
        let mut p = vec![4.0, 1.0, 0.25];
        apply_gain_power(&mut p, &g).unwrap();
        for (v, o) in p.iter().zip([4.0, 1.0, 0.25]) {
            assert!((v - o * 0.01).abs() < 1e-15);
        }
        let mut x = vec![Complex64::new(2.0, -1.0); 3];
        apply_gain_spectrum(&mut x, &g).unwrap();
        assert!(x
            .iter()
            .all(|v| (v - Complex64::new(0.2, -0.1)).norm() < 1e-15));
    }

    #[test]
    fn mixed_gain_matches_elementwise_product() {
        let gain = [0.1, 0.5, 0.93, 1.0];
        let base = [
            Complex64::new(1.0, 2.0),
            Complex64::new(-3.0, 0.5),
            Complex64::new(0.0, -1.0),
            Complex64::new(4.0, 4.0),
        ];
        let mut x = base;
        apply_gain_spectrum(&mut x, &gain).unwrap();
        for i in 0..4 {
            assert_eq!(x[i].re, base[i].re * gain[i]);
            assert_eq!(x[i].im, base[i].im * gain[i]);
        }
        let mut p: Vec<f64> = base.iter().map(|c| c.norm_sqr()).collect();
        apply_gain_power(&mut p, &gain).unwrap();
        for i in 0..4 {
            assert_eq!(p[i], base[i].norm_sqr() * (gain[i] * gain[i]));
        }
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut x = vec![Complex64::new(1.0, 0.0); 3];
        assert!(apply_gain_spectrum(&mut x, &[1.0; 2]).is_err());
        let mut p = vec![1.0; 3];
        assert!(apply_gain_power(&mut p, &[1.0; 4]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EnhanceConfig::default().validate().is_ok());
        assert!(EnhanceConfig {
            gain_floor: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EnhanceConfig {
            overestimation: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn gain_in_range(cdr in 0.0f64..1e4, floor in 0.0f64..=1.0, mu in 0.01f64..4.0) {
            let cfg = EnhanceConfig { gain_floor: floor, overestimation: mu };
            let g = subtraction_gain(&[cdr], &cfg)[0];
            prop_assert!(g >= floor && g <= 1.0);
        }

        #[test]
        fn gain_preserves_phase(re in -10.0f64..10.0, im in -10.0f64..10.0, g in 0.01f64..=1.0) {
            prop_assume!(re.abs() + im.abs() > 1e-6);
            let mut x = [Complex64::new(re, im)];
            apply_gain_spectrum(&mut x, &[g]).unwrap();
            let d = (x[0].arg() - Complex64::new(re, im).arg()).abs();
            prop_assert!(d < 1e-14);
        }
    }
}
