//! Fine-tune the projection head with the additive angular margin loss so
//! synthetic clips cluster by the identity driving them, then save the
//! head and its training log.
//!
//! Run with: cargo run --release --example train_fingerprint_head

use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource};
use voiceprint::training::{train_head, AamConfig};

fn main() -> Result<(), voiceprint::Error> {
    let seed = 3;
    let params = voiceprint::corpus::GeneratorParams {
        num_identities: 8,
        clips_per_pair: 4,
        reals_per_identity: 0,
        clip_duration_s: 3.0,
        ..Default::default()
    };
    let identities = voiceprint::corpus::sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    println!("synthesizing the driver-labeled training pool...");
    let manifest = voiceprint::corpus::generate_corpus(&identities, &params, seed, dir.path())?;

    let encoder = BaseEncoder::new(BaseEncoderConfig::default());
    let source = BaseSource::Encoder(&encoder);
    let cfg = AamConfig {
        seed,
        ..AamConfig::default()
    };
    println!(
        "training: scale {}, margin {}, {} epochs, batch {}, lr {}",
        cfg.scale_s, cfg.margin_m, cfg.epochs, cfg.batch_size, cfg.learning_rate
    );
    let outcome = train_head(&manifest, dir.path(), &cfg, &source)?;
    for e in &outcome.epochs {
        println!("  epoch {:2}: mean loss {:.4} ({:.2} s)", e.epoch, e.mean_loss, e.wall_seconds);
    }

    let head_path = dir.path().join("head.json");
    outcome.head.save(&head_path)?;
    outcome.write_log(dir.path().join("train_log.csv"))?;
    println!(
        "\nhead {} over {} driver classes saved to {}",
        outcome.head.version,
        outcome.classes.len(),
        head_path.display()
    );

    // The same seed and data reproduce the head bit for bit.
    let again = train_head(&manifest, dir.path(), &cfg, &source)?;
    assert_eq!(again.head, outcome.head);
    println!("retraining with the same seed reproduced the head exactly");
    Ok(())
}
