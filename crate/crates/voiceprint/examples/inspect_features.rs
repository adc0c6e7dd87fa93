//! Look inside the acoustic frontend: WAV round trip, resampling, and the
//! 80 log-mel + 3 prosody channels behind every voiceprint.
//!
//! Run with: cargo run --release --example inspect_features

use voiceprint::audio::{read_wav, resample, write_wav, AudioClip};
use voiceprint::corpus::{sample_identities, synthesize_clip, Authenticity, GeneratorParams};
use voiceprint::features::{extract_features, NUM_MEL};

fn main() -> Result<(), voiceprint::Error> {
    let params = GeneratorParams::default();
    let ids = sample_identities(2, 1)?;
    let (clip, label) = synthesize_clip(&ids[0], &ids[0], 3.0, Authenticity::Real, 1, &params)?;
    println!(
        "synthesized a real clip of {}: {:.1} s at {} Hz",
        label.driver,
        clip.duration_s(),
        clip.sample_rate_hz()
    );

    // Disk round trip is exact up to PCM16 quantization.
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    let wav = dir.path().join("clip.wav");
    write_wav(&clip, &wav)?;
    let back = read_wav(&wav)?;
    let max_err = clip
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("write/read round trip: max sample error {max_err:.2e} (bound 1/32768 = 3.05e-5)");

    // Resampling through 48 kHz and back preserves duration.
    let up = resample(&clip, 48_000)?;
    let down = resample(&up, 16_000)?;
    println!(
        "resample 16k -> 48k -> 16k: {} -> {} -> {} samples",
        clip.samples().len(),
        up.samples().len(),
        down.samples().len()
    );

    let feat = extract_features(&clip)?;
    println!(
        "\nfeatures: {} frames x {} channels (hop {:.0} ms, window {:.0} ms)",
        feat.num_frames(),
        feat.num_channels(),
        feat.frame_hop_s() * 1000.0,
        feat.frame_len_s() * 1000.0
    );
    let voiced = feat.channel(NUM_MEL + 2).filter(|&v| v == 1.0).count();
    println!("voiced frames: {voiced}/{}", feat.num_frames());
    let mid = feat.row(feat.num_frames() / 2);
    println!(
        "mid-frame prosody: log-F0 {:.3} (={:.1} Hz), log-energy {:.3}, voicing {}",
        mid[NUM_MEL],
        mid[NUM_MEL].exp(),
        mid[NUM_MEL + 1],
        mid[NUM_MEL + 2]
    );

    let csv = dir.path().join("features.csv");
    feat.write_csv(&csv)?;
    println!("dumped the matrix to {} for plotting", csv.display());

    // Short clips are rejected before they can corrupt statistics.
    let short = AudioClip::new(vec![0.1; 8000], 16_000, "too-short")?;
    match extract_features(&short) {
        Err(voiceprint::Error::InsufficientAudio(msg)) => println!("\nshort clip rejected: {msg}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
