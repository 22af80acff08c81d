//! Configuration files: parse, override, canonical form and digest.
//!
//!     cargo run --example config_file

use cdrfeat::config::PipelineConfig;
use cdrfeat::io::hex;

const TEXT: &str = "\
# 2-mic array on a laptop lid
mic_spacing_m = 0.12
forgetting_factor = 0.8
features = logmelspec, melmsc
deltas = 1
mvn = true
splice = 5
";

fn main() -> cdrfeat::Result<()> {
    let mut cfg = PipelineConfig::from_text(TEXT)?;
    cfg.set("gain_floor", "0.2")?;
    cfg.validate()?;
    print!("{}", cfg.canonical_text());
    println!(
        "# {} dims per frame, {} after splicing",
        cfg.frame_dim(),
        cfg.output_dim()
    );
    println!("# digest {}", hex(&cfg.digest()));
    Ok(())
}
