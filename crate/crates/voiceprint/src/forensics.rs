//! Enrollment store and decision layer: build identity profiles from
//! reference clips under a chosen policy, score incoming clips by cosine
//! similarity against the profile, and emit match decisions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::corpus::{Authenticity, ReenactmentLabel};
use crate::embedding::{
    cosine_similarity, BaseSource, ProjectionHead, SpeakerEmbedding, NORM_TOLERANCE,
};
use crate::error::{Error, Result};

const PROFILE_SCHEMA_VERSION: &str = "voiceprint-profile-v1";

/// What counts as valid enrollment audio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnrollmentPolicy {
    /// Real recordings of the identity (spoof detection).
    #[serde(rename = "real-enrollment")]
    RealEnrollment,
    /// Synthetic clips driven by the identity, any target voice.
    #[serde(rename = "mixed-driver")]
    MixedDriver,
    /// Synthetic self-reenactments only (driver == target == identity).
    #[serde(rename = "self-reenactment-only")]
    SelfReenactmentOnly,
}

impl std::fmt::Display for EnrollmentPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnrollmentPolicy::RealEnrollment => write!(f, "real-enrollment"),
            EnrollmentPolicy::MixedDriver => write!(f, "mixed-driver"),
            EnrollmentPolicy::SelfReenactmentOnly => write!(f, "self-reenactment-only"),
        }
    }
}

impl EnrollmentPolicy {
    /// Checks one enrollment clip's label against the policy.
    ///
    /// Real enrollment accepts unlabeled clips (they are presumed real
    /// recordings); both fingerprinting policies require labels because
    /// they are defined over reenactments.
    pub fn check(
        &self,
        identity: &str,
        label: Option<&ReenactmentLabel>,
    ) -> std::result::Result<(), String> {
        match (self, label) {
            (EnrollmentPolicy::RealEnrollment, None) => Ok(()),
            (EnrollmentPolicy::RealEnrollment, Some(l)) => {
                if l.authenticity == Authenticity::Real && l.driver == identity {
                    Ok(())
                } else {
                    Err(format!(
                        "clip {} is not a real recording of {identity}",
                        l.clip_id
                    ))
                }
            }
            (_, None) => Err(format!(
                "policy {self} requires labeled reenactment clips"
            )),
            (EnrollmentPolicy::MixedDriver, Some(l)) => {
                if l.authenticity == Authenticity::Synthetic && l.driver == identity {
                    Ok(())
                } else {
                    Err(format!(
                        "clip {} is not synthetic audio driven by {identity}",
                        l.clip_id
                    ))
                }
            }
            (EnrollmentPolicy::SelfReenactmentOnly, Some(l)) => {
                if l.authenticity == Authenticity::Synthetic
                    && l.driver == identity
                    && l.target == identity
                {
                    Ok(())
                } else {
                    Err(format!(
                        "clip {} is not a self-reenactment of {identity}",
                        l.clip_id
                    ))
                }
            }
        }
    }
}

/// Enrolled reference for one identity: the renormalized mean of its
/// enrollment embeddings plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityProfile {
    pub identity: String,
    pub mean_embedding: SpeakerEmbedding,
    pub policy: EnrollmentPolicy,
    pub clip_ids: Vec<String>,
    pub total_enrollment_seconds: f64,
    pub head_version: String,
}

impl IdentityProfile {
    pub fn validate(&self) -> Result<()> {
        if self.clip_ids.is_empty() {
            return Err(Error::EnrollmentEmpty {
                identity: self.identity.clone(),
            });
        }
        if self.total_enrollment_seconds <= 0.0 {
            return Err(Error::InvalidConfig(
                "enrollment duration must be positive".into(),
            ));
        }
        if self.mean_embedding.head_version() != self.head_version {
            return Err(Error::HeadVersionMismatch {
                profile: self.head_version.clone(),
                scoring: self.mean_embedding.head_version().into(),
            });
        }
        Ok(())
    }
}

/// Builds a profile from enrollment clips: embeds each clip, averages the
/// embeddings (in a canonical clip order, so enrollment is permutation-
/// invariant) and renormalizes to unit length.
pub fn enroll(
    identity: &str,
    clips: &[(AudioClip, Option<ReenactmentLabel>)],
    policy: EnrollmentPolicy,
    source: &BaseSource<'_>,
    head: Option<&ProjectionHead>,
) -> Result<IdentityProfile> {
    if clips.is_empty() {
        return Err(Error::EnrollmentEmpty {
            identity: identity.into(),
        });
    }
    for (_, label) in clips {
        policy
            .check(identity, label.as_ref())
            .map_err(Error::PolicyViolation)?;
    }
    let mut embedded: Vec<(String, f64, SpeakerEmbedding)> = clips
        .iter()
        .map(|(clip, _)| {
            let emb = source.embedding(clip, head)?;
            Ok((clip.source_id().to_string(), clip.duration_s(), emb))
        })
        .collect::<Result<Vec<_>>>()?;
    embedded.sort_by(|a, b| a.0.cmp(&b.0));

    let dim = embedded[0].2.dim();
    let head_version = embedded[0].2.head_version().to_string();
    let mut mean = vec![0.0; dim];
    let mut seconds = 0.0;
    for (_, dur, emb) in &embedded {
        if emb.head_version() != head_version {
            return Err(Error::HeadVersionMismatch {
                profile: head_version,
                scoring: emb.head_version().into(),
            });
        }
        for (m, v) in mean.iter_mut().zip(emb.vector()) {
            *m += v;
        }
        seconds += dur;
    }
    let n = embedded.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mean_embedding = SpeakerEmbedding::from_unnormalized(mean, head_version.clone())
        .map_err(|_| {
            Error::DegenerateEmbedding(format!(
                "enrollment embeddings of {identity} cancel out"
            ))
        })?;

    let profile = IdentityProfile {
        identity: identity.into(),
        mean_embedding,
        policy,
        clip_ids: embedded.into_iter().map(|(id, _, _)| id).collect(),
        total_enrollment_seconds: seconds,
        head_version,
    };
    profile.validate()?;
    Ok(profile)
}

/// Cosine similarity between the profile mean and a test clip's
/// embedding. The clip must be embedded under the same head version the
/// profile was built with.
pub fn score(
    profile: &IdentityProfile,
    clip: &AudioClip,
    source: &BaseSource<'_>,
    head: Option<&ProjectionHead>,
) -> Result<f64> {
    let emb = source.embedding(clip, head)?;
    score_embedding(profile, &emb)
}

/// Scores a precomputed embedding against a profile.
pub fn score_embedding(profile: &IdentityProfile, emb: &SpeakerEmbedding) -> Result<f64> {
    if emb.head_version() != profile.head_version {
        return Err(Error::HeadVersionMismatch {
            profile: profile.head_version.clone(),
            scoring: emb.head_version().into(),
        });
    }
    cosine_similarity(&profile.mean_embedding, emb)
}

/// What a verification score is being used to decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SpoofDetection,
    Fingerprinting,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Task::SpoofDetection => write!(f, "spoof-detection"),
            Task::Fingerprinting => write!(f, "fingerprinting"),
        }
    }
}

/// Thresholded decision. A non-match means "synthetic" under spoof
/// detection and "unauthorized driver" under fingerprinting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub score: f64,
    pub threshold: f64,
    /// True iff score >= threshold (ties match).
    pub decision: bool,
    pub task: Task,
}

impl Verdict {
    pub fn non_match_meaning(&self) -> &'static str {
        match self.task {
            Task::SpoofDetection => "synthetic",
            Task::Fingerprinting => "unauthorized-driver",
        }
    }
}

/// Pure threshold rule, boundary inclusive.
pub fn decide(score: f64, threshold: f64, task: Task) -> Verdict {
    Verdict {
        score,
        threshold,
        decision: score >= threshold,
        task,
    }
}

#[derive(Serialize, Deserialize)]
struct ProfileFile {
    schema_version: String,
    identity: String,
    policy: EnrollmentPolicy,
    head_version: String,
    dim: usize,
    embedding: Vec<f64>,
    clip_ids: Vec<String>,
    enrollment_seconds: f64,
}

/// Writes a profile as versioned JSON with exact float round-tripping.
pub fn save_profile(profile: &IdentityProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    profile.validate()?;
    let doc = ProfileFile {
        schema_version: PROFILE_SCHEMA_VERSION.into(),
        identity: profile.identity.clone(),
        policy: profile.policy,
        head_version: profile.head_version.clone(),
        dim: profile.mean_embedding.dim(),
        embedding: profile.mean_embedding.vector().to_vec(),
        clip_ids: profile.clip_ids.clone(),
        enrollment_seconds: profile.total_enrollment_seconds,
    };
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    Ok(())
}

/// Loads and validates a profile; a mean embedding off the unit sphere is
/// a corrupt file, not a recoverable state.
pub fn load_profile(path: impl AsRef<Path>) -> Result<IdentityProfile> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(format!("profile {}", path.display()))
        } else {
            Error::io(path, e)
        }
    })?;
    let doc: ProfileFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    if doc.schema_version != PROFILE_SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.into(),
            found: doc.schema_version,
            expected: PROFILE_SCHEMA_VERSION.into(),
        });
    }
    if doc.embedding.len() != doc.dim {
        return Err(Error::CorruptProfile {
            path: path.into(),
            reason: format!("dim {} but {} floats", doc.dim, doc.embedding.len()),
        });
    }
    let norm = crate::embedding::l2_norm(&doc.embedding);
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::CorruptProfile {
            path: path.into(),
            reason: format!("mean embedding norm {norm} is not 1"),
        });
    }
    let profile = IdentityProfile {
        identity: doc.identity,
        mean_embedding: SpeakerEmbedding::new(doc.embedding, doc.head_version.clone())?,
        policy: doc.policy,
        clip_ids: doc.clip_ids,
        total_enrollment_seconds: doc.enrollment_seconds,
        head_version: doc.head_version,
    };
    profile.validate()?;
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{BaseEncoder, BaseEncoderConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_clip(seed: u64, id: &str) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.5..=0.5)).collect();
        AudioClip::new(samples, 16000, id).unwrap()
    }

    fn label(driver: &str, target: &str, auth: Authenticity, clip_id: &str) -> ReenactmentLabel {
        ReenactmentLabel {
            driver: driver.into(),
            target: target.into(),
            authenticity: auth,
            clip_id: clip_id.into(),
        }
    }

    fn encoder() -> BaseEncoder {
        BaseEncoder::new(BaseEncoderConfig {
            embed_dim: 32,
            ..Default::default()
        })
    }

    #[test]
    fn single_clip_profile_equals_clip_embedding() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clip = noise_clip(1, "c1");
        let profile = enroll(
            "alice",
            &[(clip.clone(), None)],
            EnrollmentPolicy::RealEnrollment,
            &source,
            None,
        )
        .unwrap();
        let emb = source.embedding(&clip, None).unwrap();
        assert_eq!(profile.mean_embedding.vector(), emb.vector());
        assert_eq!(profile.clip_ids, vec!["c1".to_string()]);
        assert!(profile.total_enrollment_seconds > 0.0);
    }

    #[test]
    fn identical_clips_mean_is_idempotent() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clip = noise_clip(2, "c");
        let profile = enroll(
            "alice",
            &[(clip.clone(), None), (clip.clone(), None)],
            EnrollmentPolicy::RealEnrollment,
            &source,
            None,
        )
        .unwrap();
        let emb = source.embedding(&clip, None).unwrap();
        for (a, b) in profile.mean_embedding.vector().iter().zip(emb.vector()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_mean_is_clip_order_invariant() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clips: Vec<_> = (0..5)
            .map(|i| (noise_clip(10 + i, &format!("c{i}")), None))
            .collect();
        let mut reversed = clips.clone();
        reversed.reverse();
        let a = enroll("x", &clips, EnrollmentPolicy::RealEnrollment, &source, None).unwrap();
        let b = enroll("x", &reversed, EnrollmentPolicy::RealEnrollment, &source, None).unwrap();
        assert_eq!(a.mean_embedding.vector(), b.mean_embedding.vector());
        assert_eq!(a.clip_ids, b.clip_ids);
    }

    #[test]
    fn self_only_policy_rejects_cross_reenactment() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clips = vec![(
            noise_clip(3, "c"),
            Some(label("alice", "bob", Authenticity::Synthetic, "c")),
        )];
        match enroll(
            "alice",
            &clips,
            EnrollmentPolicy::SelfReenactmentOnly,
            &source,
            None,
        ) {
            Err(Error::PolicyViolation(_)) => {}
            other => panic!("expected policy violation, got {other:?}"),
        }
    }

    #[test]
    fn fingerprinting_policies_require_labels() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clips = vec![(noise_clip(4, "c"), None)];
        for policy in [
            EnrollmentPolicy::MixedDriver,
            EnrollmentPolicy::SelfReenactmentOnly,
        ] {
            match enroll("alice", &clips, policy, &source, None) {
                Err(Error::PolicyViolation(_)) => {}
                other => panic!("expected policy violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn empty_enrollment_rejected() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        match enroll("alice", &[], EnrollmentPolicy::RealEnrollment, &source, None) {
            Err(Error::EnrollmentEmpty { identity }) => assert_eq!(identity, "alice"),
            other => panic!("expected enrollment-empty, got {other:?}"),
        }
    }

    #[test]
    fn policy_check_randomized_sets() {
        // A set with any nonconforming member must be rejected.
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for case in 0..40 {
            let n = rng.gen_range(1..5usize);
            let bad_at = rng.gen_range(0..n);
            let clips: Vec<_> = (0..n)
                .map(|i| {
                    let id = format!("c{case}_{i}");
                    let lbl = if i == bad_at {
                        // Nonconforming for self-only: cross or wrong driver.
                        if rng.gen_bool(0.5) {
                            label("alice", "bob", Authenticity::Synthetic, &id)
                        } else {
                            label("bob", "alice", Authenticity::Synthetic, &id)
                        }
                    } else {
                        label("alice", "alice", Authenticity::Synthetic, &id)
                    };
                    (noise_clip(100 + case * 10 + i as u64, &id), Some(lbl))
                })
                .collect();
            match enroll(
                "alice",
                &clips,
                EnrollmentPolicy::SelfReenactmentOnly,
                &source,
                None,
            ) {
                Err(Error::PolicyViolation(_)) => {}
                other => panic!("expected policy violation, got {other:?}"),
            }
        }
    }

    #[test]
    fn scoring_an_enrollment_clip_gives_one() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clip = noise_clip(5, "c");
        let profile = enroll(
            "alice",
            &[(clip.clone(), None)],
            EnrollmentPolicy::RealEnrollment,
            &source,
            None,
        )
        .unwrap();
        let s = score(&profile, &clip, &source, None).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "self-score {s}");
    }

    #[test]
    fn head_version_mismatch_is_rejected() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clip = noise_clip(6, "c");
        let head = ProjectionHead::identity(32, enc.config().seed, "trained-1");
        let profile = enroll(
            "alice",
            &[(clip.clone(), None)],
            EnrollmentPolicy::RealEnrollment,
            &source,
            Some(&head),
        )
        .unwrap();
        assert_eq!(profile.head_version, "trained-1");
        match score(&profile, &clip, &source, None) {
            Err(Error::HeadVersionMismatch { .. }) => {}
            other => panic!("expected head version mismatch, got {other:?}"),
        }
    }

    #[test]
    fn decide_is_boundary_inclusive() {
        assert!(decide(0.9, 0.5, Task::SpoofDetection).decision);
        assert!(decide(0.5, 0.5, Task::SpoofDetection).decision);
        let v = decide(0.2, 0.5, Task::SpoofDetection);
        assert!(!v.decision);
        assert_eq!(v.non_match_meaning(), "synthetic");
        let v = decide(0.2, 0.5, Task::Fingerprinting);
        assert_eq!(v.non_match_meaning(), "unauthorized-driver");
        // The invariant decision == (score >= threshold) holds by
        // construction; spot-check a sweep.
        for i in 0..20 {
            let s = -1.0 + 0.1 * i as f64;
            let v = decide(s, 0.3, Task::Fingerprinting);
            assert_eq!(v.decision, s >= 0.3);
        }
    }

    #[test]
    fn profile_round_trip_is_bit_exact() {
        let enc = encoder();
        let source = BaseSource::Encoder(&enc);
        let clips: Vec<_> = (0..3)
            .map(|i| (noise_clip(20 + i, &format!("c{i}")), None))
            .collect();
        let profile = enroll("bob", &clips, EnrollmentPolicy::RealEnrollment, &source, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bob.json");
        save_profile(&profile, &path).unwrap();
        let back = load_profile(&path).unwrap();
        assert_eq!(profile, back);
    }

    #[test]
    fn corrupt_profile_norm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(
            &path,
            r#"{"schema_version":"voiceprint-profile-v1","identity":"x","policy":"real-enrollment","head_version":"base","dim":2,"embedding":[0.3,0.4],"clip_ids":["a"],"enrollment_seconds":4.0}"#,
        )
        .unwrap();
        match load_profile(&path) {
            Err(Error::CorruptProfile { .. }) => {}
            other => panic!("expected corrupt profile, got {other:?}"),
        }
    }

    #[test]
    fn unknown_profile_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(
            &path,
            r#"{"schema_version":"voiceprint-profile-v9","identity":"x","policy":"real-enrollment","head_version":"base","dim":2,"embedding":[1.0,0.0],"clip_ids":["a"],"enrollment_seconds":4.0}"#,
        )
        .unwrap();
        match load_profile(&path) {
            Err(Error::SchemaVersion { .. }) => {}
            other => panic!("expected schema version error, got {other:?}"),
        }
    }
}
