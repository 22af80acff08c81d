//! Block-wise feature extraction, as for a live audio callback, checked
//! against whole-utterance extraction.
//!
//!     cargo run --release --example streaming

use std::time::Instant;

use cdrfeat::config::{PipelineConfig, Preset};
use cdrfeat::pipeline::{extract_frame_level, StreamingExtractor};
use cdrfeat::synth::{generate, FieldKind, SynthConfig};

fn main() -> cdrfeat::Result<()> {
    let synth = SynthConfig {
        duration_s: 10.0,
        snr_db: 3.0,
        doa_deg: 30.0,
        ..Default::default()
    };
    let x = generate(&synth, FieldKind::Mixture)?.channels;
    let cfg = PipelineConfig::preset(Preset::PaperDiffuseness);

    let mut ex = StreamingExtractor::new(&cfg, 2)?;
    println!(
        "look-ahead: {} frames after the analysis window",
        ex.latency_frames()
    );
    let block = 256;
    let start = Instant::now();
    let mut rows = Vec::new();
    for (i, (a, b)) in x[0].chunks(block).zip(x[1].chunks(block)).enumerate() {
        let got = ex.push(&[a, b])?;
        if i < 6 {
            println!("block {i}: {} row(s)", got.len());
        }
        rows.extend(got);
    }
    rows.extend(ex.finish()?);
    let elapsed = start.elapsed().as_secs_f64();
    println!(
        "{} rows of {} dims in {elapsed:.3} s, real-time factor {:.4}",
        rows.len(),
        cfg.frame_dim(),
        elapsed / synth.duration_s
    );

    let batch = extract_frame_level(&x, &cfg)?;
    let identical = batch
        .rows()
        .zip(&rows)
        .all(|(b, s)| b.iter().zip(s).all(|(p, q)| p.to_bits() == q.to_bits()));
    println!(
        "bit-identical to batch: {}",
        identical && batch.n_frames() == rows.len()
    );
    Ok(())
}
