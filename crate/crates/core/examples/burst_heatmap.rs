//! Reverberant-style burst scene: noisy log-Mel spectrum, enhanced log-Mel
//! spectrum, diffuseness and MSC features rendered as PGM heatmaps.
//!
//!     cargo run --release --example burst_heatmap -- [out_dir]

use std::path::PathBuf;

use cdrfeat::config::{Feature, PipelineConfig};
use cdrfeat::io::{write_heatmap, write_wav, SampleFormat};
use cdrfeat::pipeline::extract;
use cdrfeat::synth::{burst_scene, BurstConfig};

fn main() -> cdrfeat::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    let scene = burst_scene(&BurstConfig::default())?;
    write_wav(
        out.join("bursts.wav"),
        &scene.channels,
        16000,
        SampleFormat::Float32,
    )?;

    let cfg = PipelineConfig {
        features: Feature::ALL.to_vec(),
        delta_order: 0,
        ..Default::default()
    };
    let m = extract(&scene.channels, &cfg)?;
    for f in Feature::ALL {
        let rows = m.block(f.name()).expect("selected");
        let range = (!f.is_spectral()).then_some((0.0, 1.0));
        let path = out.join(format!("{}.pgm", f.name()));
        write_heatmap(&rows, &path, range)?;
        println!("{}", path.display());
    }

    // per-frame band mean of the diffuseness, one character per 20 ms
    let d = m.block("meldiffuseness").expect("selected");
    let shades = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let line: String = d
        .chunks(2)
        .map(|c| {
            let v = c.iter().flatten().sum::<f64>() / (c.len() * c[0].len()) as f64;
            shades[((v * 9.0).round() as usize).min(9)]
        })
        .collect();
    let bursts: String = (0..line.chars().count())
        .map(|i| {
            let s = i * 320 + 200;
            if scene.bursts.iter().any(|&(a, b)| s >= a && s < b) {
                '^'
            } else {
                ' '
            }
        })
        .collect();
    println!("D̂ |{line}|");
    println!("   |{bursts}|");
    Ok(())
}
