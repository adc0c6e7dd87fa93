//! Run the evaluation protocol end to end and emit the report directory:
//! report.json plus one ROC CSV and SVG per identity and for the pool.
//!
//! Run with: cargo run --release --example evaluate_and_report

use voiceprint::embedding::{BaseEncoder, BaseEncoderConfig, BaseSource};
use voiceprint::eval::{emit_report, run_protocol, EvalOptions, ProtocolOptions};
use voiceprint::forensics::{EnrollmentPolicy, Task};

fn main() -> Result<(), voiceprint::Error> {
    let seed = 5;
    let params = voiceprint::corpus::GeneratorParams {
        num_identities: 6,
        clips_per_pair: 3,
        reals_per_identity: 10,
        clip_duration_s: 3.0,
        ..Default::default()
    };
    let identities = voiceprint::corpus::sample_identities(params.num_identities, seed)?;
    let dir = tempfile::tempdir().map_err(|e| voiceprint::Error::io(".", e))?;
    let manifest = voiceprint::corpus::generate_corpus(&identities, &params, seed, dir.path())?;

    let encoder = BaseEncoder::new(BaseEncoderConfig::default());
    let source = BaseSource::Encoder(&encoder);
    let protocol = ProtocolOptions {
        enroll_seconds: 20.0,
        reserve_fraction: 0.25,
        options: EvalOptions::default(),
        seed,
    };
    println!("running the spoof-detection protocol...");
    let (results, profiles) = run_protocol(
        &manifest,
        dir.path(),
        Task::SpoofDetection,
        EnrollmentPolicy::RealEnrollment,
        &source,
        None,
        protocol,
    )?;

    let out = dir.path().join("report");
    let echo = serde_json::json!({
        "seed": seed,
        "task": Task::SpoofDetection,
        "encoder": encoder.config(),
        "protocol": protocol,
        "profiles": profiles.len(),
    });
    let report = emit_report(&results, echo, &out)?;
    println!(
        "mean AUC {:.4}, pooled AUC {:.4}",
        report.mean_auc,
        report.pooled_auc.unwrap_or(f64::NAN)
    );

    let mut files: Vec<_> = std::fs::read_dir(&out)
        .map_err(|e| voiceprint::Error::io(&out, e))?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    println!("\nreport directory {}:", out.display());
    for f in &files {
        println!("  {f}");
    }

    // The CSV holds the full curve; its rows are the distinct score
    // thresholds plus the two anchors.
    let pooled_csv = std::fs::read_to_string(out.join("roc_pooled.csv"))
        .map_err(|e| voiceprint::Error::io(out.join("roc_pooled.csv"), e))?;
    println!("\nfirst ROC rows:\n{}", pooled_csv.lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
