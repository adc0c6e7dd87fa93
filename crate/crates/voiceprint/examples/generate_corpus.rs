//! Generate a small reenactment corpus and look at what controls what:
//! timbre follows the target identity, mannerism follows the driver.
//!
//! Run with: cargo run --release --example generate_corpus

use voiceprint::corpus::{
    generate_corpus, make_splits, measure_f1_peak, measure_mean_f0, measure_syllable_rate,
    sample_identities, Authenticity, GeneratorParams,
};

fn main() -> Result<(), voiceprint::Error> {
    let seed = 7;
    let params = GeneratorParams {
        num_identities: 6,
        clips_per_pair: 2,
        reals_per_identity: 3,
        clip_duration_s: 3.0,
        ..GeneratorParams::default()
    };
    let identities = sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    let manifest = generate_corpus(&identities, &params, seed, dir.path())?;

    let counts = manifest.counts();
    println!(
        "generated {} clips under {}: {} real, {} self-reenactments, {} cross-reenactments",
        manifest.entries.len(),
        dir.path().display(),
        counts.real,
        counts.self_reenactment,
        counts.cross_reenactment
    );

    // A cross-reenactment sounds like the target but paces like the driver.
    let driver = &identities[0];
    let target = &identities[1];
    let (clip, label) = voiceprint::corpus::synthesize_clip(
        driver,
        target,
        6.0,
        Authenticity::Synthetic,
        seed,
        &params,
    )?;
    println!(
        "\ncross-reenactment {} -> {} (clip {}):",
        label.driver, label.target, label.clip_id
    );
    println!(
        "  mean F0    {:6.1} Hz  (target register {:6.1}, driver register {:6.1})",
        measure_mean_f0(&clip)?,
        target.timbre.f0_register_hz,
        driver.timbre.f0_register_hz
    );
    println!(
        "  F1 peak    {:6.1} Hz  (target F1 {:6.1}, driver F1 {:6.1})",
        measure_f1_peak(&clip)?,
        target.timbre.formant_hz[0],
        driver.timbre.formant_hz[0]
    );
    println!(
        "  pace       {:6.2} syl/s (driver {:6.2}, target {:6.2})",
        measure_syllable_rate(&clip)?,
        driver.mannerism.syllable_rate_hz,
        target.mannerism.syllable_rate_hz
    );

    // Identity-disjoint splits: held-out identities appear in no training
    // entry, in either role.
    let splits = make_splits(&manifest, 2, 0.05, seed)?;
    println!(
        "\nsplits: {} train / {} val / {} test entries; held out: {:?}",
        splits.train.entries.len(),
        splits.val.entries.len(),
        splits.test.entries.len(),
        splits.spec.test_identities
    );
    splits.spec.assert_disjoint(&splits.train, &splits.val)?;
    println!("disjointness scan passed");
    Ok(())
}
