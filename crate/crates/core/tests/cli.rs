use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Instant;

use cdrfeat::config::{PipelineConfig, Preset};
use cdrfeat::io::{
    read_features, read_features_csv, read_wav, write_wav, FeatureFileHeader, SampleFormat,
};
use cdrfeat::stft::{analyze, AnalysisConfig};
use cdrfeat::synth::{generate, FieldKind, SynthConfig};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cdrfeat"));
    c.env_remove("CDRFEAT_CONFIG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stereo_wav(
    dir: &Path,
    name: &str,
    kind: FieldKind,
    cfg: SynthConfig,
    format: SampleFormat,
) -> PathBuf {
    let path = dir.join(name);
    let m = generate(&cfg, kind).unwrap();
    write_wav(&path, &m.channels, 16000, format).unwrap();
    path
}

fn mixture(dir: &Path, secs: f64) -> PathBuf {
    let cfg = SynthConfig {
        duration_s: secs,
        snr_db: 5.0,
        seed: 21,
        ..Default::default()
    };
    stereo_wav(dir, "mix.wav", FieldKind::Mixture, cfg, SampleFormat::Pcm16)
}

/// Mean power over 500-4000 Hz STFT bins, both channels.
fn mid_band_power(channels: &[Vec<f64>]) -> f64 {
    let a = AnalysisConfig::default();
    let freqs = a.bin_freqs();
    let (mut p, mut n) = (0.0, 0.0);
    for f in analyze(channels, &a).unwrap().iter().skip(32) {
        for ch in &f.bins {
            for (k, x) in ch.iter().enumerate() {
                if (500.0..=4000.0).contains(&freqs[k]) {
                    p += x.norm_sqr();
                    n += 1.0;
                }
            }
        }
    }
    p / n
}

#[test]
fn extract_diffuseness_preset_layout() {
    let dir = tempfile::tempdir().unwrap();
    let wav = mixture(dir.path(), 1.0);
    let out = dir.path().join("f.feat");
    let o = run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&out),
        "--preset",
        "paper-diffuseness",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, m) = read_features(&out).unwrap();
    let layout: Vec<(&str, usize)> = h.layout.iter().map(|(n, d)| (n.as_str(), *d)).collect();
    assert_eq!(
        layout,
        [("logmelspec", 24), ("delta", 24), ("meldiffuseness", 24)]
    );
    assert_eq!(m.n_frames(), AnalysisConfig::default().frame_count(16000));
    assert_eq!(
        h.config_digest,
        PipelineConfig::preset(Preset::PaperDiffuseness).digest()
    );
}

#[test]
fn mono_with_spatial_preset_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("mono.wav");
    write_wav(&wav, &[vec![0.01; 8000]], 16000, SampleFormat::Pcm16).unwrap();
    let o = run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&dir.path().join("x")),
        "--preset",
        "paper-msc",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("two-channel"));
    let o = run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&dir.path().join("y")),
        "--preset",
        "paper-noisy",
    ]);
    assert!(o.status.success());
}

#[test]
fn splicing_keeps_frame_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_s: (400 + 97 * 160) as f64 / 16000.0,
        seed: 5,
        ..Default::default()
    };
    let wav = stereo_wav(
        dir.path(),
        "s.wav",
        FieldKind::Mixture,
        cfg,
        SampleFormat::Float32,
    );
    let out = dir.path().join("f.feat");
    let o = run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&out),
        "--preset",
        "paper-noisy",
        "--mvn",
        "--splice",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, m) = read_features(&out).unwrap();
    assert_eq!(h.frame_count, 98);
    assert_eq!(m.total_dim(), 72 * 11);
    assert_eq!(m.layout[0].0, "logmelspec@-5");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let missing = dir.path().join("missing.wav");
    assert_eq!(
        run(&["extract", "--in", s(&missing), "--out", s(&out)])
            .status
            .code(),
        Some(2)
    );
    let wav = mixture(dir.path(), 0.3);
    assert_eq!(
        run(&[
            "extract",
            "--in",
            s(&wav),
            "--out",
            s(&out),
            "--lambda",
            "1.5"
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(run(&["extract", "--in", s(&wav)]).status.code(), Some(1));

    let nan = dir.path().join("nan.wav");
    let mut x = vec![vec![0.01; 4000]; 2];
    x[0][1000] = f64::NAN;
    write_wav(&nan, &x, 16000, SampleFormat::Float32).unwrap();
    let o = run(&["extract", "--in", s(&nan), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-finite"));
}

#[test]
fn csv_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let wav = mixture(dir.path(), 0.5);
    let (b, c) = (dir.path().join("f.feat"), dir.path().join("f.csv"));
    assert!(run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&b),
        "--preset",
        "paper-msc"
    ])
    .status
    .success());
    assert!(run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&c),
        "--preset",
        "paper-msc",
        "--format",
        "csv"
    ])
    .status
    .success());
    let (hb, mb) = read_features(&b).unwrap();
    let (hc, mc) = read_features_csv(&c).unwrap();
    assert_eq!(hb.layout, hc.layout);
    assert_eq!(hb.config_digest, hc.config_digest);
    for (x, y) in mb.data().iter().zip(mc.data()) {
        assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn config_file_env_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let wav = mixture(dir.path(), 0.5);
    let conf = dir.path().join("c.conf");
    std::fs::write(
        &conf,
        "# msc only\nfeatures = melmsc\ndeltas = 0\nforgetting_factor = 0.5\n",
    )
    .unwrap();
    let out = dir.path().join("f.feat");
    let o = bin()
        .env("CDRFEAT_CONFIG", &conf)
        .args(["extract", "--in", s(&wav), "--out", s(&out)])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (h, _) = read_features(&out).unwrap();
    assert_eq!(h.layout, vec![("melmsc".to_string(), 24)]);
    let mut expect = PipelineConfig::default();
    expect
        .merge_text(&std::fs::read_to_string(&conf).unwrap())
        .unwrap();
    assert_eq!(h.config_digest, expect.digest());

    let o = bin()
        .env("CDRFEAT_CONFIG", &conf)
        .args([
            "extract",
            "--in",
            s(&wav),
            "--out",
            s(&out),
            "--lambda",
            "0.68",
            "--features",
            "logmelspec,melmsc",
        ])
        .output()
        .unwrap();
    assert!(o.status.success());
    let (h, _) = read_features(&out).unwrap();
    expect.coherence.forgetting_factor = 0.68;
    expect.set("features", "logmelspec,melmsc").unwrap();
    assert_eq!(h.config_digest, expect.digest());
    assert_eq!(h.total_dim(), 48);
}

#[test]
fn parallel_jobs_match_serial() {
    let dir = tempfile::tempdir().unwrap();
    let mut inputs = Vec::new();
    for i in 0..4 {
        let cfg = SynthConfig {
            duration_s: 0.4,
            seed: i,
            ..Default::default()
        };
        inputs.push(stereo_wav(
            dir.path(),
            &format!("u{i}.wav"),
            FieldKind::Mixture,
            cfg,
            SampleFormat::Pcm16,
        ));
    }
    let outdir = dir.path().join("feats");
    let mut args = vec!["extract", "--jobs", "3", "--out", s(&outdir), "--in"];
    args.extend(inputs.iter().map(|p| s(p)));
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for (i, wav) in inputs.iter().enumerate() {
        let single = dir.path().join("single.feat");
        assert!(run(&["extract", "--in", s(wav), "--out", s(&single)])
            .status
            .success());
        assert_eq!(
            std::fs::read(outdir.join(format!("u{i}.feat"))).unwrap(),
            std::fs::read(&single).unwrap()
        );
    }
}

#[test]
fn heatmap_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let wav = mixture(dir.path(), 0.5);
    let pgm = dir.path().join("h.pgm");
    let o = run(&[
        "extract",
        "--in",
        s(&wav),
        "--out",
        s(&dir.path().join("f")),
        "--heatmap",
        s(&pgm),
    ]);
    assert!(o.status.success());
    let bytes = std::fs::read(&pgm).unwrap();
    let frames = AnalysisConfig::default().frame_count(8000);
    let header = format!("P5\n{frames} 24\n255\n");
    assert!(bytes.starts_with(header.as_bytes()));
    assert_eq!(bytes.len(), header.len() + frames * 24);
}

#[test]
fn enhance_passes_plane_wave() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_s: 3.0,
        doa_deg: 45.0,
        seed: 8,
        ..Default::default()
    };
    let wav = stereo_wav(
        dir.path(),
        "pw.wav",
        FieldKind::CoherentOnly,
        cfg,
        SampleFormat::Float32,
    );
    let out = dir.path().join("e.wav");
    let csv = dir.path().join("d.csv");
    let o = run(&[
        "enhance",
        "--in",
        s(&wav),
        "--out",
        s(&out),
        "--diffuseness",
        s(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, x) = read_wav(&wav).unwrap();
    let (spec, y) = read_wav(&out).unwrap();
    assert_eq!(spec.format, SampleFormat::Float32);
    let db = 10.0 * (mid_band_power(&y) / mid_band_power(&x)).log10();
    assert!(db.abs() < 1.0, "{db} dB");
    let a = AnalysisConfig::default();
    let lines = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        lines.lines().count(),
        1 + a.frame_count(a.window_len - a.hop + 48000 + a.window_len)
    );
}

#[test]
fn enhance_diffuse_reaches_gain_floor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_s: 3.0,
        seed: 8,
        ..Default::default()
    };
    let wav = stereo_wav(
        dir.path(),
        "d.wav",
        FieldKind::DiffuseOnly,
        cfg,
        SampleFormat::Float32,
    );
    let out = dir.path().join("e.wav");
    let o = run(&[
        "enhance",
        "--in",
        s(&wav),
        "--out",
        s(&out),
        "--mu",
        "1",
        "--gmin",
        "0.1",
    ]);
    assert!(o.status.success());
    let (_, x) = read_wav(&wav).unwrap();
    let (_, y) = read_wav(&out).unwrap();
    let db = 10.0 * (mid_band_power(&y) / mid_band_power(&x)).log10();
    let target = 20.0 * 0.1f64.log10();
    assert!(
        (db - target).abs() <= 1.5,
        "output/input {db:.2} dB, expected {target} ± 1.5 dB"
    );
}

#[test]
fn enhance_zero_in_zero_out() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("z.wav");
    write_wav(
        &wav,
        &[vec![0.0; 5000], vec![0.0; 5000]],
        16000,
        SampleFormat::Pcm16,
    )
    .unwrap();
    let out = dir.path().join("e.wav");
    assert!(run(&["enhance", "--in", s(&wav), "--out", s(&out)])
        .status
        .success());
    let (spec, y) = read_wav(&out).unwrap();
    assert_eq!(spec.n_samples, 5000);
    assert!(y.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn synth_is_deterministic_and_reports_powers() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    let args = |p: &Path| {
        run(&[
            "synth",
            "--snr-db",
            "0",
            "--doa",
            "45",
            "--duration",
            "10",
            "--seed",
            "7",
            "--out",
            s(p),
        ])
    };
    let oa = args(&a);
    let ob = args(&b);
    assert!(oa.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(oa.stdout, ob.stdout);
    let text = String::from_utf8(oa.stdout).unwrap();
    let value = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(key))
            .unwrap()
            .trim()
            .parse()
            .unwrap()
    };
    let (c, d) = (value("coherent_power"), value("diffuse_power"));
    assert!((c / d - 1.0).abs() < 1e-5, "{c} {d}");
}

#[test]
fn synth_field_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let coh = dir.path().join("c.wav");
    assert!(run(&[
        "synth",
        "--coherent-only",
        "--doa",
        "90",
        "--duration",
        "1",
        "--out",
        s(&coh)
    ])
    .status
    .success());
    let (_, x) = read_wav(&coh).unwrap();
    assert_eq!(x[0], x[1]);

    let dif = dir.path().join("d.wav");
    assert!(run(&[
        "synth",
        "--diffuse-only",
        "--duration",
        "5",
        "--seed",
        "1",
        "--out",
        s(&dif)
    ])
    .status
    .success());
    let (_, x) = read_wav(&dif).unwrap();
    let a = AnalysisConfig::default();
    let frames = analyze(&x, &a).unwrap();
    let freqs = a.bin_freqs();
    let model = cdrfeat::coherence::diffuse_coherence_model(&freqs, &Default::default());
    for k in (0..a.n_bins()).filter(|&k| (500.0..=4000.0).contains(&freqs[k])) {
        let (mut p11, mut p22, mut p12) = (0.0, 0.0, num_complex::Complex64::new(0.0, 0.0));
        for f in &frames {
            p11 += f.bins[0][k].norm_sqr();
            p22 += f.bins[1][k].norm_sqr();
            p12 += f.bins[0][k] * f.bins[1][k].conj();
        }
        let g = p12 / (p11 * p22).sqrt();
        assert!((g - model[k]).norm() < 0.1, "bin {k}: {g} vs {}", model[k]);
    }

    assert_eq!(
        run(&[
            "synth",
            "--diffuse-only",
            "--coherent-only",
            "--out",
            s(&dif)
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        run(&["synth", "--waves", "4", "--out", s(&dif)])
            .status
            .code(),
        Some(1)
    );
}

fn stream(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = bin()
        .arg("stream")
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    let data = stdin.to_vec();
    let writer = std::thread::spawn(move || {
        let _ = pipe.write_all(&data);
    });
    let out = child.wait_with_output().unwrap();
    writer.join().unwrap();
    out
}

fn pcm_payload(wav: &Path) -> Vec<u8> {
    let (_, x) = read_wav(wav).unwrap();
    (0..x[0].len())
        .flat_map(|i| {
            x.iter()
                .flat_map(move |c| cdrfeat::io::pcm16_from_f64(c[i]).to_le_bytes())
        })
        .collect()
}

#[test]
fn stream_matches_extract_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let wav = mixture(dir.path(), 1.2);
    for preset in [
        "paper-noisy",
        "paper-enhanced",
        "paper-diffuseness",
        "paper-msc",
    ] {
        let feat = dir.path().join("f.feat");
        assert!(run(&[
            "extract",
            "--in",
            s(&wav),
            "--out",
            s(&feat),
            "--preset",
            preset
        ])
        .status
        .success());
        let bytes = std::fs::read(&feat).unwrap();
        let mut cursor = bytes.as_slice();
        FeatureFileHeader::decode(&mut cursor).unwrap();
        let o = stream(&["--preset", preset], &pcm_payload(&wav));
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(o.stdout, cursor, "{preset}");
    }
}

#[test]
fn stream_edge_cases() {
    let o = stream(&[], &[]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());

    let o = stream(&[], &[0u8; 4001]);
    assert_eq!(o.status.code(), Some(2));

    let o = stream(&["--mvn"], &[]);
    assert_eq!(o.status.code(), Some(1));
    let o = stream(&["--splice", "5"], &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = stream(&["--channels", "1", "--preset", "paper-diffuseness"], &[]);
    assert_eq!(o.status.code(), Some(1));

    let o = stream(
        &["--format", "csv", "--preset", "paper-noisy"],
        &[0u8; 4 * 880],
    );
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.split(',').count() == 72));
}

#[test]
fn stream_runs_faster_than_real_time() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        duration_s: 10.0,
        snr_db: 0.0,
        seed: 2,
        n_diffuse_waves: 32,
        ..Default::default()
    };
    let wav = stereo_wav(
        dir.path(),
        "long.wav",
        FieldKind::Mixture,
        cfg,
        SampleFormat::Pcm16,
    );
    let payload = pcm_payload(&wav);
    let t = Instant::now();
    let o = stream(&["--preset", "paper-diffuseness"], &payload);
    let elapsed = t.elapsed().as_secs_f64();
    assert!(o.status.success());
    assert_eq!(
        o.stdout.len(),
        AnalysisConfig::default().frame_count(160000) * 72 * 4
    );
    assert!(elapsed < 10.0, "{elapsed} s for 10 s of audio");
}
