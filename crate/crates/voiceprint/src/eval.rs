//! Scoring protocols and metrics: ROC curves with tie-collapsing
//! thresholds, trapezoid AUC (equal to the Mann-Whitney statistic with
//! half-credit ties), interpolated EER, per-identity and pooled
//! aggregates, and machine-readable reports.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::read_wav;
use crate::corpus::{Authenticity, Manifest};
use crate::embedding::{apply_head, BaseSource, ExternalEmbeddings, ProjectionHead};
use crate::error::{Error, Result};
use crate::forensics::{score_embedding, EnrollmentPolicy, IdentityProfile, Task};

const REPORT_SCHEMA_VERSION: &str = "voiceprint-report-v1";

/// One scored verification trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrial {
    pub clip_id: String,
    pub claimed_identity: String,
    /// Ground truth: does this clip belong to the positive class of the
    /// task for the claimed identity?
    pub is_target: bool,
    pub score: f64,
}

/// ROC curve with thresholds, AUC and EER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (false positive rate, true positive rate), anchored at (0,0) and
    /// (1,1); both coordinates non-decreasing.
    pub points: Vec<(f64, f64)>,
    /// Decision threshold per point; +inf and -inf at the anchors.
    pub thresholds: Vec<f64>,
    pub auc: f64,
    pub eer: f64,
    /// Interpolated threshold at the EER operating point.
    pub eer_threshold: f64,
    /// Identity this curve describes, or "pooled".
    pub scope: String,
}

/// Builds a ROC curve by sweeping thresholds over the distinct scores in
/// descending order. Equal scores collapse into a single step, which
/// makes the trapezoid AUC equal the pair-counting statistic with
/// half-credit for ties. Needs at least one positive and one negative.
pub fn roc(trials: &[ScoredTrial], scope: impl Into<String>) -> Result<RocCurve> {
    let scope = scope.into();
    let n_pos = trials.iter().filter(|t| t.is_target).count();
    let n_neg = trials.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateTrials(format!(
            "scope {scope}: {n_pos} positive and {n_neg} negative trials"
        )));
    }
    for t in trials {
        if !t.score.is_finite() {
            return Err(Error::DegenerateTrials(format!(
                "non-finite score for clip {}",
                t.clip_id
            )));
        }
    }
    let mut sorted: Vec<&ScoredTrial> = trials.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.clip_id.cmp(&b.clip_id))
    });

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].score;
        // Consume the whole tie group as one step.
        while i < sorted.len() && sorted[i].score == threshold {
            if sorted[i].is_target {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(threshold);
    }
    points.push((1.0, 1.0));
    thresholds.push(f64::NEG_INFINITY);

    let mut auc = 0.0;
    for w in points.windows(2) {
        let (x1, y1) = w[0];
        let (x2, y2) = w[1];
        auc += (x2 - x1) * (y1 + y2) / 2.0;
    }

    // EER: the point where fpr == 1 - tpr, linearly interpolated along
    // the curve. diff = fpr + tpr - 1 runs from -1 to +1.
    let mut eer = 0.5;
    let mut eer_threshold = 0.0;
    for w in 0..points.len() - 1 {
        let (x1, y1) = points[w];
        let (x2, y2) = points[w + 1];
        let d1 = x1 + y1 - 1.0;
        let d2 = x2 + y2 - 1.0;
        if d1 <= 0.0 && d2 >= 0.0 {
            let t = if (d2 - d1).abs() > 1e-15 {
                -d1 / (d2 - d1)
            } else {
                0.5
            };
            eer = x1 + t * (x2 - x1);
            let th1 = thresholds[w];
            let th2 = thresholds[w + 1];
            eer_threshold = match (th1.is_finite(), th2.is_finite()) {
                (true, true) => th1 + t * (th2 - th1),
                (true, false) => th1,
                (false, true) => th2,
                (false, false) => 0.0,
            };
            break;
        }
    }

    Ok(RocCurve {
        points,
        thresholds,
        auc,
        eer,
        eer_threshold,
        scope,
    })
}

/// Trial-construction and negative-set options.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Fingerprinting only: also count synthetic clips driven by others
    /// toward *other* targets as negatives (probing the confusion case
    /// beyond voice-alike negatives).
    pub include_unrelated_negatives: bool,
}

/// Per-identity outcome: a curve, or the reason the identity was skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityResult {
    pub identity: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub curve: Option<RocCurve>,
    pub skipped: Option<String>,
}

/// Evaluation outcome over a profile set and a test manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub task: Task,
    pub per_identity: Vec<IdentityResult>,
    pub pooled: Option<RocCurve>,
    /// Mean AUC / EER across identities with valid curves (the headline
    /// numbers; the pooled curve is reported alongside).
    pub mean_auc: f64,
    pub mean_eer: f64,
}

/// Base embeddings for every manifest entry, computed in parallel through
/// the encoder (or passed through from an external table). The result is
/// itself an [`ExternalEmbeddings`] table, so repeated evaluations reuse
/// the frozen encoder work.
pub fn base_embeddings_for(
    manifest: &Manifest,
    wav_root: impl AsRef<Path>,
    source: &BaseSource<'_>,
) -> Result<ExternalEmbeddings> {
    let wav_root = wav_root.as_ref();
    let computed: Vec<(String, Vec<f64>)> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let emb = source.base_embedding_for_id(&e.clip_id, || {
                Ok(read_wav(wav_root.join(&e.path))?.with_source_id(e.clip_id.clone()))
            })?;
            Ok((e.clip_id.clone(), emb.vector().to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = computed.first().map(|(_, v)| v.len()).unwrap_or(0);
    let mut table = ExternalEmbeddings::new(dim);
    for (clip_id, vector) in computed {
        table.insert(clip_id, vector)?;
    }
    Ok(table)
}

/// Scores a labeled manifest against enrolled profiles and computes
/// per-identity and pooled ROC curves.
///
/// Trial construction per claimed identity `i` (entries enrolled in the
/// identity's profile are excluded):
/// - spoof detection: positives are real clips of `i`; negatives are
///   synthetic clips whose target is `i` (any driver).
/// - fingerprinting: positives are synthetic clips driven by `i`;
///   negatives are synthetic clips with target `i` driven by someone
///   else, plus (when configured) synthetic clips driven by others
///   toward other targets.
///
/// Identities with a single-class trial set are reported as skipped;
/// the others are unaffected.
pub fn evaluate_task(
    profiles: &BTreeMap<String, IdentityProfile>,
    manifest: &Manifest,
    wav_root: impl AsRef<Path>,
    task: Task,
    source: &BaseSource<'_>,
    head: Option<&ProjectionHead>,
    options: EvalOptions,
) -> Result<EvalResults> {
    if profiles.is_empty() {
        return Err(Error::DegenerateTrials("no profiles to evaluate".into()));
    }
    let base_table = base_embeddings_for(manifest, wav_root, source)?;
    evaluate_task_with_table(profiles, manifest, &base_table, task, head, options)
}

/// [`evaluate_task`] on precomputed base embeddings.
pub fn evaluate_task_with_table(
    profiles: &BTreeMap<String, IdentityProfile>,
    manifest: &Manifest,
    base_table: &ExternalEmbeddings,
    task: Task,
    head: Option<&ProjectionHead>,
    options: EvalOptions,
) -> Result<EvalResults> {
    // Every identity the trial-construction rule would claim entries for
    // must be enrolled.
    for e in &manifest.entries {
        let required: &[&String] = match task {
            Task::SpoofDetection => &[&e.target],
            Task::Fingerprinting => &[&e.driver, &e.target],
        };
        for identity in required {
            if !profiles.contains_key(*identity) {
                return Err(Error::MissingProfile {
                    identity: (*identity).clone(),
                });
            }
        }
    }
    // Full embeddings (head applied) per clip, once.
    let embedded: BTreeMap<String, crate::embedding::SpeakerEmbedding> = manifest
        .entries
        .iter()
        .map(|e| {
            let base = base_table
                .get(&e.clip_id)
                .ok_or_else(|| Error::MissingEmbedding {
                    clip_id: e.clip_id.clone(),
                })?;
            let emb = match head {
                None => base,
                Some(h) => apply_head(&base, h)?,
            };
            Ok((e.clip_id.clone(), emb))
        })
        .collect::<Result<_>>()?;

    let mut per_identity = Vec::new();
    let mut pooled_trials: Vec<ScoredTrial> = Vec::new();
    for (identity, profile) in profiles {
        let enrolled: BTreeSet<&str> = profile.clip_ids.iter().map(String::as_str).collect();
        let mut trials = Vec::new();
        for e in &manifest.entries {
            if enrolled.contains(e.clip_id.as_str()) {
                continue;
            }
            let is_target = match task {
                Task::SpoofDetection => match e.authenticity {
                    Authenticity::Real => {
                        if &e.target != identity {
                            continue;
                        }
                        true
                    }
                    Authenticity::Synthetic => {
                        if &e.target != identity {
                            continue;
                        }
                        false
                    }
                },
                Task::Fingerprinting => {
                    if e.authenticity != Authenticity::Synthetic {
                        continue;
                    }
                    if &e.driver == identity {
                        true
                    } else if &e.target == identity || options.include_unrelated_negatives {
                        false
                    } else {
                        continue;
                    }
                }
            };
            let emb = &embedded[&e.clip_id];
            trials.push(ScoredTrial {
                clip_id: e.clip_id.clone(),
                claimed_identity: identity.clone(),
                is_target,
                score: score_embedding(profile, emb)?,
            });
        }
        let n_pos = trials.iter().filter(|t| t.is_target).count();
        let n_neg = trials.len() - n_pos;
        match roc(&trials, identity.clone()) {
            Ok(curve) => {
                pooled_trials.extend(trials);
                per_identity.push(IdentityResult {
                    identity: identity.clone(),
                    n_pos,
                    n_neg,
                    curve: Some(curve),
                    skipped: None,
                });
            }
            Err(Error::DegenerateTrials(reason)) => {
                per_identity.push(IdentityResult {
                    identity: identity.clone(),
                    n_pos,
                    n_neg,
                    curve: None,
                    skipped: Some(reason),
                });
            }
            Err(other) => return Err(other),
        }
    }

    let valid: Vec<&RocCurve> = per_identity
        .iter()
        .filter_map(|r| r.curve.as_ref())
        .collect();
    if valid.is_empty() {
        return Err(Error::DegenerateTrials(
            "every identity had a single-class trial set".into(),
        ));
    }
    let mean_auc = valid.iter().map(|c| c.auc).sum::<f64>() / valid.len() as f64;
    let mean_eer = valid.iter().map(|c| c.eer).sum::<f64>() / valid.len() as f64;
    let pooled = roc(&pooled_trials, "pooled").ok();

    Ok(EvalResults {
        task,
        per_identity,
        pooled,
        mean_auc,
        mean_eer,
    })
}

/// Enrollment sampling and trial options for a full protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolOptions {
    /// Enrollment audio budget per identity (the classic default is about
    /// two minutes). Advisory: sampling stops at the budget or at the
    /// reserve cap, whichever bites first.
    pub enroll_seconds: f64,
    /// Fraction of each identity's eligible pool reserved for trials (so
    /// enrollment can never consume every clip).
    pub reserve_fraction: f64,
    pub options: EvalOptions,
    pub seed: u64,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            enroll_seconds: 120.0,
            reserve_fraction: 0.25,
            options: EvalOptions::default(),
            seed: 42,
        }
    }
}

/// Entries of a manifest eligible to enroll `identity` under a policy.
pub fn eligible_enrollment<'m>(
    manifest: &'m Manifest,
    identity: &str,
    policy: EnrollmentPolicy,
) -> Vec<&'m crate::corpus::ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| policy.check(identity, Some(&e.label())).is_ok())
        .collect()
}

/// Runs a full protocol: for every identity in the manifest with eligible
/// enrollment clips, samples enrollment uniformly at random by seed (up
/// to the time budget, always leaving the reserve for trials), builds the
/// profile, and evaluates the task on the rest.
pub fn run_protocol(
    manifest: &Manifest,
    wav_root: impl AsRef<Path>,
    task: Task,
    policy: EnrollmentPolicy,
    source: &BaseSource<'_>,
    head: Option<&ProjectionHead>,
    protocol: ProtocolOptions,
) -> Result<(EvalResults, BTreeMap<String, IdentityProfile>)> {
    let base_table = base_embeddings_for(manifest, wav_root, source)?;
    let profiles = enroll_all(manifest, &base_table, policy, head, protocol)?;
    let results = evaluate_task_with_table(
        &profiles,
        manifest,
        &base_table,
        task,
        head,
        protocol.options,
    )?;
    Ok((results, profiles))
}

/// Enrollment half of [`run_protocol`], reusing a base-embedding table.
pub fn enroll_all(
    manifest: &Manifest,
    base_table: &ExternalEmbeddings,
    policy: EnrollmentPolicy,
    head: Option<&ProjectionHead>,
    protocol: ProtocolOptions,
) -> Result<BTreeMap<String, IdentityProfile>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut profiles = BTreeMap::new();
    for identity in manifest.identities() {
        let mut eligible = eligible_enrollment(manifest, &identity, policy);
        if eligible.is_empty() {
            continue;
        }
        eligible.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        // Per-identity seed, independent of identity iteration order.
        let mut h = sha2::Sha256::new();
        use sha2::Digest;
        h.update(protocol.seed.to_le_bytes());
        h.update(identity.as_bytes());
        let seed = u64::from_le_bytes(h.finalize()[..8].try_into().unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        eligible.shuffle(&mut rng);

        let reserve = ((eligible.len() as f64 * protocol.reserve_fraction).round() as usize)
            .max(1)
            .min(eligible.len() - 1);
        let cap = eligible.len() - reserve;
        let mut chosen = Vec::new();
        let mut seconds = 0.0;
        for e in eligible.into_iter().take(cap.max(1)) {
            if seconds >= protocol.enroll_seconds && !chosen.is_empty() {
                break;
            }
            seconds += e.duration_s;
            chosen.push(e);
        }

        let mut items: Vec<(String, f64, crate::embedding::SpeakerEmbedding)> = chosen
            .iter()
            .map(|e| {
                let base = base_table
                    .get(&e.clip_id)
                    .ok_or_else(|| Error::MissingEmbedding {
                        clip_id: e.clip_id.clone(),
                    })?;
                let emb = match head {
                    None => base,
                    Some(h) => apply_head(&base, h)?,
                };
                Ok((e.clip_id.clone(), e.duration_s, emb))
            })
            .collect::<Result<Vec<_>>>()?;
        items.sort_by(|a, b| a.0.cmp(&b.0));

        let dim = items[0].2.dim();
        let head_version = items[0].2.head_version().to_string();
        let mut mean = vec![0.0; dim];
        let mut total_seconds = 0.0;
        for (_, dur, emb) in &items {
            for (m, v) in mean.iter_mut().zip(emb.vector()) {
                *m += v;
            }
            total_seconds += dur;
        }
        let n = items.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mean_embedding =
            crate::embedding::SpeakerEmbedding::from_unnormalized(mean, head_version.clone())?;
        let profile = IdentityProfile {
            identity: identity.clone(),
            mean_embedding,
            policy,
            clip_ids: items.into_iter().map(|(id, _, _)| id).collect(),
            total_enrollment_seconds: total_seconds,
            head_version,
        };
        profile.validate()?;
        profiles.insert(identity, profile);
    }
    if profiles.is_empty() {
        return Err(Error::DegenerateTrials(
            "no identity has eligible enrollment clips".into(),
        ));
    }
    Ok(profiles)
}

/// Per-identity numbers as they appear in report.json. The full curves
/// live in the ROC CSV files; infinities do not survive JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentitySummary {
    pub identity: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: Option<f64>,
    pub eer: Option<f64>,
    pub eer_threshold: Option<f64>,
    pub skipped: Option<String>,
}

/// Everything emit_report writes, plus the configuration echo that makes
/// the run reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: String,
    pub task: Task,
    pub config_echo: serde_json::Value,
    pub mean_auc: f64,
    pub mean_eer: f64,
    pub pooled_auc: Option<f64>,
    pub pooled_eer: Option<f64>,
    pub pooled_eer_threshold: Option<f64>,
    pub per_identity: Vec<IdentitySummary>,
}

impl EvalReport {
    pub fn new(results: &EvalResults, config_echo: serde_json::Value) -> Self {
        EvalReport {
            schema_version: REPORT_SCHEMA_VERSION.into(),
            task: results.task,
            config_echo,
            mean_auc: results.mean_auc,
            mean_eer: results.mean_eer,
            pooled_auc: results.pooled.as_ref().map(|c| c.auc),
            pooled_eer: results.pooled.as_ref().map(|c| c.eer),
            pooled_eer_threshold: results.pooled.as_ref().map(|c| c.eer_threshold),
            per_identity: results
                .per_identity
                .iter()
                .map(|r| IdentitySummary {
                    identity: r.identity.clone(),
                    n_pos: r.n_pos,
                    n_neg: r.n_neg,
                    auc: r.curve.as_ref().map(|c| c.auc),
                    eer: r.curve.as_ref().map(|c| c.eer),
                    eer_threshold: r.curve.as_ref().map(|c| c.eer_threshold),
                    skipped: r.skipped.clone(),
                })
                .collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("report {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let report: EvalReport = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.into(),
                found: report.schema_version,
                expected: REPORT_SCHEMA_VERSION.into(),
            });
        }
        Ok(report)
    }
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".into()
    } else if t == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{t}")
    }
}

/// Writes `report.json`, one `roc_<scope>.csv` and one `roc_<scope>.svg`
/// per curve (identities and pooled) under `out_dir`.
pub fn emit_report(
    results: &EvalResults,
    config_echo: serde_json::Value,
    out_dir: impl AsRef<Path>,
) -> Result<EvalReport> {
    let out_dir = out_dir.as_ref();
    if results.per_identity.is_empty() {
        return Err(Error::DegenerateTrials("empty results".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let report = EvalReport::new(results, config_echo);
    let report_path = out_dir.join("report.json");
    let file = std::fs::File::create(&report_path).map_err(|e| Error::io(&report_path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &report)
        .map_err(|e| Error::io(&report_path, std::io::Error::other(e)))?;

    let curves = results
        .per_identity
        .iter()
        .filter_map(|r| r.curve.as_ref())
        .chain(results.pooled.as_ref());
    for curve in curves {
        write_roc_csv(curve, out_dir.join(format!("roc_{}.csv", curve.scope)))?;
        write_roc_svg(curve, out_dir.join(format!("roc_{}.svg", curve.scope)))?;
    }
    Ok(report)
}

fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "threshold,fpr,tpr").map_err(|e| Error::io(path, e))?;
    for (t, (fpr, tpr)) in curve.thresholds.iter().zip(&curve.points) {
        writeln!(w, "{},{fpr},{tpr}", fmt_threshold(*t)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// 640x640 SVG: unit square, chance diagonal, one polyline for the curve.
fn write_roc_svg(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let size = 640.0;
    let margin = 40.0;
    let span = size - 2.0 * margin;
    let map = |x: f64, y: f64| (margin + x * span, size - margin - y * span);
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|&(x, y)| {
            let (px, py) = map(x, y);
            format!("{px:.1},{py:.1}")
        })
        .collect();
    let (dx1, dy1) = map(0.0, 0.0);
    let (dx2, dy2) = map(1.0, 1.0);
    let svg = format!(
        concat!(
            r#"<?xml version="1.0" encoding="UTF-8"?>"#,
            "\n",
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="640" viewBox="0 0 640 640">"#,
            "\n",
            r##"<rect x="{m}" y="{m}" width="{s}" height="{s}" fill="none" stroke="#999"/>"##,
            "\n",
            r##"<line x1="{dx1}" y1="{dy1}" x2="{dx2}" y2="{dy2}" stroke="#bbb" stroke-dasharray="6,4"/>"##,
            "\n",
            r##"<polyline points="{pts}" fill="none" stroke="#b33" stroke-width="2"/>"##,
            "\n",
            r#"<text x="{m}" y="28" font-family="monospace" font-size="16">{scope}: AUC {auc:.4} EER {eer:.4}</text>"#,
            "\n</svg>\n"
        ),
        m = margin,
        s = span,
        dx1 = dx1,
        dy1 = dy1,
        dx2 = dx2,
        dy2 = dy2,
        pts = pts.join(" "),
        scope = curve.scope,
        auc = curve.auc,
        eer = curve.eer,
    );
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    Ok(())
}
