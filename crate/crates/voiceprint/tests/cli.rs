//! Exit-code contract and end-to-end smoke tests for the vf binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn vf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vf"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    vf()
        .args(args)
        .current_dir(dir)
        .env("VF_DATA_DIR", dir.join("vf-data"))
        .output()
        .expect("spawn vf")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_small_corpus(dir: &Path) {
    let out = run(
        &[
            "--threads",
            "2",
            "gen-corpus",
            "--identities",
            "5",
            "--clips-per-pair",
            "2",
            "--reals-per-identity",
            "4",
            "--duration",
            "2.5",
            "--test-identities",
            "2",
            "--seed",
            "9",
            "--out",
            "corpus",
        ],
        dir,
    );
    assert!(out.status.success(), "gen-corpus failed: {out:?}");
}

fn manifest_entries(dir: &Path) -> Vec<serde_json::Value> {
    std::fs::read_to_string(dir.join("corpus/manifest.ndjson"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn clip_path(dir: &Path, pick: impl Fn(&serde_json::Value) -> bool) -> PathBuf {
    let e = manifest_entries(dir).into_iter().find(|e| pick(e)).unwrap();
    dir.join("corpus").join(e["path"].as_str().unwrap())
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_small_corpus(dir);
    assert!(dir.join("corpus/manifest.ndjson").exists());
    assert!(dir.join("corpus/manifest.train.ndjson").exists());
    assert!(dir.join("corpus/manifest.test.ndjson").exists());

    // Enroll a real-audio profile.
    let out = run(
        &[
            "enroll",
            "--identity",
            "id000",
            "--policy",
            "real",
            "--manifest",
            "corpus/manifest.ndjson",
            "--seconds",
            "8",
            "--seed",
            "9",
            "--out",
            "id000.json",
        ],
        dir,
    );
    assert!(out.status.success(), "enroll failed: {out:?}");

    // Detect on one of the profile's own enrollment clips: score near 1.
    let profile: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("id000.json")).unwrap()).unwrap();
    let first_clip = profile["clip_ids"][0].as_str().unwrap().to_string();
    let clip = clip_path(dir, |e| e["clip_id"] == first_clip.as_str());
    let out = run(
        &[
            "detect",
            "--profile",
            "id000.json",
            "--clip",
            clip.to_str().unwrap(),
            "--threshold",
            "0.99",
            "--json",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(0), "self-detect should match: {out:?}");
    let verdict: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(verdict["score"].as_f64().unwrap() > 0.999);
    assert_eq!(verdict["decision"], serde_json::Value::Bool(true));

    // Train a head on the train split and evaluate fingerprinting.
    let out = run(
        &[
            "train-head",
            "--manifest",
            "corpus/manifest.train.ndjson",
            "--epochs",
            "2",
            "--seed",
            "9",
            "--out",
            "head.json",
            "--log",
            "train_log.csv",
        ],
        dir,
    );
    assert!(out.status.success(), "train-head failed: {out:?}");
    let log = std::fs::read_to_string(dir.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,mean_loss,wall_seconds"));
    assert_eq!(log.lines().count(), 3);

    let out = run(
        &[
            "eval",
            "--manifest",
            "corpus/manifest.test.ndjson",
            "--task",
            "fingerprint",
            "--head",
            "head.json",
            "--seconds",
            "6",
            "--seed",
            "9",
            "--out",
            "report_fp",
            "--json",
        ],
        dir,
    );
    assert!(out.status.success(), "eval failed: {out:?}");
    let summary: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert!(summary["mean_auc"].is_number());
    assert!(dir.join("report_fp/report.json").exists());
    assert!(dir.join("report_fp/roc_pooled.svg").exists());

    // Report summarizes the file it just wrote.
    let out = run(&["report", "--report", "report_fp/report.json"], dir);
    assert!(out.status.success());
    assert!(stdout(&out).contains("mean AUC"));
}

#[test]
fn detect_non_match_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_small_corpus(dir);
    let out = run(
        &[
            "enroll",
            "--identity",
            "id000",
            "--policy",
            "real",
            "--manifest",
            "corpus/manifest.ndjson",
            "--seconds",
            "8",
            "--seed",
            "9",
            "--out",
            "id000.json",
        ],
        dir,
    );
    assert!(out.status.success());
    // A cross-reenactment targeting id000 under a strict threshold.
    let clip = clip_path(dir, |e| {
        e["authenticity"] == "synthetic" && e["target"] == "id000" && e["driver"] != "id000"
    });
    let out = run(
        &[
            "detect",
            "--profile",
            "id000.json",
            "--clip",
            clip.to_str().unwrap(),
            "--threshold",
            "0.9999",
        ],
        dir,
    );
    assert_eq!(out.status.code(), Some(3), "expected exit 3: {out:?}");
    assert!(stdout(&out).contains("synthetic"));
}

#[test]
fn missing_artifacts_exit_at_least_ten() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_small_corpus(dir);
    let out = run(
        &[
            "enroll",
            "--identity",
            "id000",
            "--policy",
            "real",
            "--manifest",
            "corpus/manifest.ndjson",
            "--seconds",
            "8",
            "--seed",
            "9",
            "--out",
            "id000.json",
        ],
        dir,
    );
    assert!(out.status.success());
    let clip = clip_path(dir, |e| e["authenticity"] == "real");

    // Missing head file.
    let out = run(
        &[
            "fingerprint",
            "--profile",
            "id000.json",
            "--clip",
            clip.to_str().unwrap(),
            "--head",
            "missing_head.json",
        ],
        dir,
    );
    assert!(out.status.code().unwrap() >= 10, "got {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing artifact"));

    // Missing profile.
    let out = run(
        &[
            "detect",
            "--profile",
            "missing_profile.json",
            "--clip",
            clip.to_str().unwrap(),
        ],
        dir,
    );
    assert!(out.status.code().unwrap() >= 10);

    // Missing manifest.
    let out = run(
        &["eval", "--manifest", "nope.ndjson", "--task", "spoof"],
        dir,
    );
    assert!(out.status.code().unwrap() >= 10);
}

#[test]
fn too_few_identities_fail_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-corpus", "--identities", "1", "--out", "bad"], dir.path());
    assert!(out.status.code().unwrap() >= 10);
    assert!(String::from_utf8_lossy(&out.stderr).contains("insufficient identities"));
}

#[test]
fn gen_corpus_is_reproducible_and_reports_pair_counts() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let args = [
        "gen-corpus",
        "--identities",
        "4",
        "--clips-per-pair",
        "1",
        "--reals-per-identity",
        "1",
        "--duration",
        "2.0",
        "--test-identities",
        "0",
        "--seed",
        "5",
        "--json",
    ];
    let mut a = args.to_vec();
    a.extend(["--out", "c1"]);
    let out1 = run(&a, dir);
    assert!(out1.status.success());
    let j1: serde_json::Value = serde_json::from_str(stdout(&out1).trim()).unwrap();
    assert_eq!(j1["self_pairs"], 4);
    assert_eq!(j1["cross_pairs"], 12);
    assert_eq!(j1["real"], 4);

    let mut b = args.to_vec();
    b.extend(["--out", "c2"]);
    let out2 = run(&b, dir);
    let j2: serde_json::Value = serde_json::from_str(stdout(&out2).trim()).unwrap();
    assert_eq!(j1["manifest_sha256_16"], j2["manifest_sha256_16"]);
}

#[test]
fn config_file_overlay_respects_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    std::fs::write(
        dir.join("vf.json"),
        r#"{"identities": 4, "clips_per_pair": 1, "reals_per_identity": 1, "duration": 2.0, "test_identities": 0, "seed": 5}"#,
    )
    .unwrap();
    // File supplies everything; the flag overrides identities.
    let out = run(
        &[
            "--config",
            "vf.json",
            "--json",
            "gen-corpus",
            "--identities",
            "3",
            "--out",
            "c",
        ],
        dir,
    );
    assert!(out.status.success(), "{out:?}");
    let j: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(j["self_pairs"], 3);

    let out = run(&["--config", "missing.json", "gen-corpus", "--out", "c2"], dir);
    assert!(out.status.code().unwrap() >= 10);
}

#[test]
fn external_embeddings_replace_the_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_small_corpus(dir);

    // Build an embedding table with the library, then force the CLI to
    // use it with a deliberately different (wrong) encoder seed: scores
    // must come from the table, not the encoder.
    let manifest =
        voiceprint::corpus::Manifest::load(dir.join("corpus/manifest.ndjson")).unwrap();
    let encoder = voiceprint::embedding::BaseEncoder::new(Default::default());
    let table = voiceprint::eval::base_embeddings_for(
        &manifest,
        dir.join("corpus"),
        &voiceprint::embedding::BaseSource::Encoder(&encoder),
    )
    .unwrap();
    table.save(dir.join("emb.ndjson")).unwrap();

    let out = run(
        &[
            "eval",
            "--manifest",
            "corpus/manifest.ndjson",
            "--task",
            "spoof",
            "--seconds",
            "8",
            "--seed",
            "9",
            "--embeddings",
            "emb.ndjson",
            "--encoder-seed",
            "999",
            "--out",
            "report_ext",
            "--json",
        ],
        dir,
    );
    assert!(out.status.success(), "{out:?}");
    let with_table: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();

    let out = run(
        &[
            "eval",
            "--manifest",
            "corpus/manifest.ndjson",
            "--task",
            "spoof",
            "--seconds",
            "8",
            "--seed",
            "9",
            "--out",
            "report_enc",
            "--json",
        ],
        dir,
    );
    let with_encoder: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(with_table["mean_auc"], with_encoder["mean_auc"]);
}
