//! Real-vs-synthetic detection with an enrolled voiceprint: enroll real
//! audio per identity, score held-back real clips against synthetic ones
//! targeting the same voice, and read off the ROC.
//!
//! Run with: cargo run --release --example spoof_detection

use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource};
use voiceprint::eval::{base_embeddings_for, enroll_all, evaluate_task_with_table, EvalOptions, ProtocolOptions};
use voiceprint::forensics::{EnrollmentPolicy, Task};

fn main() -> Result<(), voiceprint::Error> {
    let seed = 11;
    let params = voiceprint::corpus::GeneratorParams {
        num_identities: 8,
        clips_per_pair: 3,
        reals_per_identity: 12,
        clip_duration_s: 3.0,
        ..Default::default()
    };
    let identities = voiceprint::corpus::sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    println!("synthesizing {} identities...", params.num_identities);
    let manifest = voiceprint::corpus::generate_corpus(&identities, &params, seed, dir.path())?;

    let encoder = BaseEncoder::new(BaseEncoderConfig::default());
    let source = BaseSource::Encoder(&encoder);
    println!("embedding {} clips...", manifest.entries.len());
    let table = base_embeddings_for(&manifest, dir.path(), &source)?;

    let protocol = ProtocolOptions {
        enroll_seconds: 24.0,
        reserve_fraction: 0.25,
        options: EvalOptions::default(),
        seed,
    };
    let profiles = enroll_all(
        &manifest,
        &table,
        EnrollmentPolicy::RealEnrollment,
        None,
        protocol,
    )?;
    let results = evaluate_task_with_table(
        &profiles,
        &manifest,
        &table,
        Task::SpoofDetection,
        None,
        EvalOptions::default(),
    )?;

    println!("\nper-identity spoof detection:");
    for r in &results.per_identity {
        if let Some(curve) = &r.curve {
            println!(
                "  {}: AUC {:.4}  EER {:.4}  ({} real vs {} synthetic trials)",
                r.identity, curve.auc, curve.eer, r.n_pos, r.n_neg
            );
        }
    }
    println!(
        "\nmean AUC {:.4}, pooled AUC {:.4}",
        results.mean_auc,
        results.pooled.as_ref().map(|c| c.auc).unwrap_or(f64::NAN)
    );
    println!(
        "operating threshold at pooled EER: {:.6}",
        results
            .pooled
            .as_ref()
            .map(|c| c.eer_threshold)
            .unwrap_or(f64::NAN)
    );
    Ok(())
}
