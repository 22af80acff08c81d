//! Blind CDR estimation on ideal coherences: the estimate recovers the true
//! coherent-to-diffuse ratio whatever the direction of arrival.
//!
//!     cargo run --example cdr_estimation

use std::f64::consts::PI;

use cdrfeat::coherence::{
    cdr_blind, cdr_to_diffuseness, diffuse_coherence_model, mixed_coherence_forward,
    CoherenceConfig,
};
use num_complex::Complex64;

fn main() -> cdrfeat::Result<()> {
    let cfg = CoherenceConfig::default();
    let freqs = [250.0, 1000.0, 2143.75, 4000.0];
    let gamma_n = diffuse_coherence_model(&freqs, &cfg);

    println!(
        "{:>8} {:>8} {:>8} {:>12} {:>8}",
        "f [Hz]", "Γn", "DOA [°]", "CDR est", "D"
    );
    let true_cdr = 3.0;
    for (f, gn) in freqs.iter().zip(&gamma_n) {
        for doa in [0.0, 60.0, 120.0] {
            // plane wave: phase 2πf·d·cos(doa)/c
            let tdoa = cfg.mic_spacing_m * f64::cos(doa * PI / 180.0) / cfg.sound_speed_mps;
            let gs = Complex64::from_polar(1.0, 2.0 * PI * f * tdoa);
            let gx = mixed_coherence_forward(true_cdr, gs, *gn)?;
            let est = cdr_blind(gx, *gn, &cfg);
            let d = cdr_to_diffuseness(&[est])[0];
            println!("{f:>8.1} {gn:>8.4} {doa:>8.0} {est:>12.9} {d:>8.4}");
        }
    }
    Ok(())
}
