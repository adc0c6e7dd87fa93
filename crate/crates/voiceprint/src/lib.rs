//! Speaker-verification audio forensics toolkit.
//!
//! Two tasks share one pipeline: deciding whether speech is real or
//! synthetic by comparing voiceprints against enrolled profiles, and
//! *avatar fingerprinting* — deciding whether known-synthetic audio is
//! driven by its authorized identity, independent of the voice it sounds
//! like.
//!
//! The pipeline: [`audio`] reads and resamples clips, [`features`] turns
//! them into log-mel + prosody matrices, [`embedding`] pools those into
//! unit-norm voiceprints behind a pluggable backend seam, [`forensics`]
//! enrolls profiles and scores clips by cosine similarity, [`training`]
//! fine-tunes a projection head with an additive angular margin loss so
//! embeddings cluster by driver rather than by voice, [`corpus`]
//! synthesizes a deterministic self/cross reenactment dataset with
//! independently controllable timbre and mannerism, and [`eval`] produces
//! ROC/AUC/EER reports.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `vf` binary for the command-line surface.

pub mod audio;
pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod features;
pub mod forensics;
pub mod training;

pub use audio::AudioClip;
pub use embedding::{BaseEncoder, BaseEncoderConfig, ProjectionHead, SpeakerEmbedding};
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use forensics::{EnrollmentPolicy, IdentityProfile, Task, Verdict};
