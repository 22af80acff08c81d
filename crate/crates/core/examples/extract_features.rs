//! Extracts each preset's features from a synthetic two-channel recording
//! (or a WAV given on the command line) and writes CDRFEAT1 files.
//!
//!     cargo run --release --example extract_features -- [in.wav] [out_dir]

use std::path::PathBuf;

use cdrfeat::config::{PipelineConfig, Preset};
use cdrfeat::io::{read_features, read_wav, write_features, FeatureFormat};
use cdrfeat::pipeline::extract;
use cdrfeat::synth::{generate, FieldKind, SynthConfig};

fn main() -> cdrfeat::Result<()> {
    let mut args = std::env::args().skip(1);
    let channels = match args.next() {
        Some(path) => read_wav(path)?.1,
        None => {
            let cfg = SynthConfig {
                duration_s: 3.0,
                snr_db: 5.0,
                doa_deg: 70.0,
                ..Default::default()
            };
            generate(&cfg, FieldKind::Mixture)?.channels.to_vec()
        }
    };
    let out_dir = PathBuf::from(
        args.next()
            .unwrap_or_else(|| std::env::temp_dir().display().to_string()),
    );

    for preset in Preset::ALL {
        let mut cfg = PipelineConfig::preset(preset);
        cfg.mvn = true;
        cfg.splice = 5;
        let m = extract(&channels, &cfg)?;
        let path = out_dir.join(format!("{}.feat", preset.name()));
        write_features(&m, cfg.digest(), &path, FeatureFormat::Binary)?;

        let (header, back) = read_features(&path)?;
        let frame_layout: Vec<String> = cfg
            .frame_layout()
            .iter()
            .map(|(n, d)| format!("{n}:{d}"))
            .collect();
        println!(
            "{:<18} [{}] x11 = {} dims, {} frames -> {}",
            preset.name(),
            frame_layout.join(" "),
            header.total_dim(),
            back.n_frames(),
            path.display()
        );
    }
    Ok(())
}
