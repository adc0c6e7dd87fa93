//! Avatar fingerprinting before and after fine-tuning, on identities the
//! trainer never saw in either role: out of the box the embedding tracks
//! how the voice sounds; after training it tracks who is driving.
//!
//! Run with: cargo run --release --example fingerprint_before_after

use voiceprint::corpus::{generate_corpus, make_splits, sample_identities, GeneratorParams};
use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource};
use voiceprint::eval::{
    base_embeddings_for, enroll_all, evaluate_task_with_table, EvalOptions, ProtocolOptions,
};
use voiceprint::forensics::{EnrollmentPolicy, Task};
use voiceprint::training::{train_head, AamConfig};

fn main() -> Result<(), voiceprint::Error> {
    let seed = 42;
    let params = GeneratorParams {
        num_identities: 10,
        clips_per_pair: 4,
        reals_per_identity: 0,
        clip_duration_s: 3.0,
        ..Default::default()
    };
    let identities = sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    println!("synthesizing the full self/cross matrix...");
    let manifest = generate_corpus(&identities, &params, seed, dir.path())?;
    let splits = make_splits(&manifest, 3, 0.05, seed)?;
    println!("held-out identities: {:?}", splits.spec.test_identities);

    let encoder = BaseEncoder::new(BaseEncoderConfig::default());
    let source = BaseSource::Encoder(&encoder);
    println!("embedding {} clips...", manifest.entries.len());
    let table = base_embeddings_for(&manifest, dir.path(), &source)?;

    let options = EvalOptions::default();
    let protocol = ProtocolOptions {
        enroll_seconds: 24.0,
        reserve_fraction: 0.25,
        options,
        seed,
    };
    // Mixed-driver enrollment: clips driven by the identity, any voice.
    let enroll_eval = |head: Option<&voiceprint::embedding::ProjectionHead>| {
        let profiles = enroll_all(
            &splits.test,
            &table,
            EnrollmentPolicy::MixedDriver,
            head,
            protocol,
        )?;
        evaluate_task_with_table(&profiles, &splits.test, &table, Task::Fingerprinting, head, options)
    };

    let before = enroll_eval(None)?;
    println!("\nbefore fine-tuning (base encoder):");
    for r in &before.per_identity {
        if let Some(c) = &r.curve {
            println!("  {}: AUC {:.4}", r.identity, c.auc);
        }
    }

    let cfg = AamConfig {
        seed,
        ..AamConfig::default()
    };
    println!("\nfine-tuning on {} training entries...", splits.train.entries.len());
    let outcome = train_head(&splits.train, dir.path(), &cfg, &BaseSource::Table(&table))?;
    println!(
        "loss {:.4} -> {:.4} over {} epochs",
        outcome.epochs.first().unwrap().mean_loss,
        outcome.epochs.last().unwrap().mean_loss,
        outcome.epochs.len()
    );

    let after = enroll_eval(Some(&outcome.head))?;
    println!("\nafter fine-tuning:");
    for r in &after.per_identity {
        if let Some(c) = &r.curve {
            println!("  {}: AUC {:.4}", r.identity, c.auc);
        }
    }
    println!(
        "\nmean AUC {:.4} -> {:.4} ({:+.4})",
        before.mean_auc,
        after.mean_auc,
        after.mean_auc - before.mean_auc
    );
    Ok(())
}
