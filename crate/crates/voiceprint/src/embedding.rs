//! Speaker embeddings: a frozen stats-pooling base encoder with a fixed
//! seeded projection, an optional trainable projection head, and cosine
//! similarity scoring.
//!
//! The base encoder is deliberately simple and sits behind a seam
//! ([`BaseSource`]) so externally computed voiceprints can replace it
//! without touching anything downstream.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureMatrix, NUM_CHANNELS};

/// Default embedding width.
pub const DEFAULT_EMBED_DIM: usize = 192;
/// Unit-norm tolerance for embedding invariants.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Version tag carried by embeddings produced without a head.
pub const BASE_VERSION: &str = "base";

const HEAD_SCHEMA_VERSION: &str = "voiceprint-head-v1";
const EMBEDDINGS_SCHEMA_VERSION: &str = "voiceprint-embeddings-v1";

/// Fixed-dimension unit-norm voiceprint.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    vector: Vec<f64>,
    head_version: String,
}

impl SpeakerEmbedding {
    /// Validates the invariants: finite entries, L2 norm 1 within 1e-6.
    pub fn new(vector: Vec<f64>, head_version: impl Into<String>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateEmbedding(
                "non-finite embedding entry".into(),
            ));
        }
        let norm = l2_norm(&vector);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::DegenerateEmbedding(format!(
                "embedding norm {norm} is not 1"
            )));
        }
        Ok(SpeakerEmbedding {
            vector,
            head_version: head_version.into(),
        })
    }

    /// Normalizes a raw vector to unit length; fails on (near-)zero norm.
    pub fn from_unnormalized(vector: Vec<f64>, head_version: impl Into<String>) -> Result<Self> {
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateEmbedding(
                "non-finite embedding entry".into(),
            ));
        }
        let norm = l2_norm(&vector);
        if norm < 1e-12 {
            return Err(Error::DegenerateEmbedding(
                "zero-norm vector cannot be normalized".into(),
            ));
        }
        // Already-unit vectors pass through unchanged, so normalization is
        // idempotent at the bit level (save/load round trips stay exact).
        let vector = if (norm - 1.0).abs() <= 1e-12 {
            vector
        } else {
            vector.into_iter().map(|v| v / norm).collect()
        };
        Ok(SpeakerEmbedding {
            vector,
            head_version: head_version.into(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn head_version(&self) -> &str {
        &self.head_version
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity of two unit-norm embeddings: their dot product,
/// clamped to `[-1, 1]`. Exactly symmetric.
pub fn cosine_similarity(a: &SpeakerEmbedding, b: &SpeakerEmbedding) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let dot: f64 = a.vector.iter().zip(&b.vector).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

/// Configuration of the frozen base encoder: stats pooling over time
/// followed by a fixed seeded projection to the embedding dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseEncoderConfig {
    pub input_channels: usize,
    pub embed_dim: usize,
    pub seed: u64,
}

impl Default for BaseEncoderConfig {
    fn default() -> Self {
        BaseEncoderConfig {
            input_channels: NUM_CHANNELS,
            embed_dim: DEFAULT_EMBED_DIM,
            seed: 7,
        }
    }
}

/// Base encoder with its projection matrix materialized.
#[derive(Debug, Clone)]
pub struct BaseEncoder {
    cfg: BaseEncoderConfig,
    /// Row-major (2 * input_channels) x embed_dim.
    projection: Vec<f64>,
}

impl BaseEncoder {
    /// Materializes the projection: entries drawn row by row from a seeded
    /// standard normal, scaled by 1/sqrt(pooled dimension). The same seed
    /// always yields the same matrix.
    pub fn new(cfg: BaseEncoderConfig) -> Self {
        let pooled_dim = 2 * cfg.input_channels;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let scale = 1.0 / (pooled_dim as f64).sqrt();
        let projection = (0..pooled_dim * cfg.embed_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        BaseEncoder { cfg, projection }
    }

    pub fn config(&self) -> &BaseEncoderConfig {
        &self.cfg
    }

    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    /// Embeds a feature matrix: per-channel mean and population standard
    /// deviation over time (summed in value-sorted order, so any frame
    /// permutation yields the identical embedding), concatenated, projected
    /// and L2-normalized. `head_version` is "base".
    pub fn embed(&self, feat: &FeatureMatrix) -> Result<SpeakerEmbedding> {
        if feat.num_channels() != self.cfg.input_channels {
            return Err(Error::DimensionMismatch {
                expected: self.cfg.input_channels,
                got: feat.num_channels(),
            });
        }
        let t_frames = feat.num_frames();
        if t_frames == 0 {
            return Err(Error::InsufficientAudio(
                "feature matrix has no frames".into(),
            ));
        }
        let c = self.cfg.input_channels;
        let mut pooled = vec![0.0; 2 * c];
        let mut values = Vec::with_capacity(t_frames);
        for ch in 0..c {
            values.clear();
            values.extend(feat.channel(ch));
            values.sort_by(f64::total_cmp);
            let mean = values.iter().sum::<f64>() / t_frames as f64;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / t_frames as f64;
            pooled[ch] = mean;
            pooled[c + ch] = var.sqrt();
        }
        let d = self.cfg.embed_dim;
        let mut out = vec![0.0; d];
        for (i, &p) in pooled.iter().enumerate() {
            let row = &self.projection[i * d..(i + 1) * d];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += p * w;
            }
        }
        SpeakerEmbedding::from_unnormalized(out, BASE_VERSION)
    }
}

/// Trainable projection head: `normalize(tanh(W v + b))` on top of the
/// base embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub version: String,
    pub dim: usize,
    /// Seed of the base encoder this head was trained against.
    pub base_seed: u64,
    /// Row-major dim x dim.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ProjectionHead {
    /// Identity weight, zero bias.
    pub fn identity(dim: usize, base_seed: u64, version: impl Into<String>) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        ProjectionHead {
            version: version.into(),
            dim,
            base_seed,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.dim * self.dim || self.bias.len() != self.dim {
            return Err(Error::InvalidConfig(format!(
                "head dimensions inconsistent: dim {}, weight {}, bias {}",
                self.dim,
                self.weight.len(),
                self.bias.len()
            )));
        }
        if self.weight.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite head parameter".into()));
        }
        Ok(())
    }

    /// Affine part only: `W v + b`.
    pub fn affine(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        let mut out = self.bias.clone();
        for i in 0..self.dim {
            let row = &self.weight[i * self.dim..(i + 1) * self.dim];
            out[i] += row.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        self.validate()?;
        let doc = HeadFile {
            schema_version: HEAD_SCHEMA_VERSION.into(),
            version: self.version.clone(),
            dim: self.dim,
            base_seed: self.base_seed,
            weight: self.weight.clone(),
            bias: self.bias.clone(),
        };
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("head file {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let doc: HeadFile = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        if doc.schema_version != HEAD_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.into(),
                found: doc.schema_version,
                expected: HEAD_SCHEMA_VERSION.into(),
            });
        }
        let head = ProjectionHead {
            version: doc.version,
            dim: doc.dim,
            base_seed: doc.base_seed,
            weight: doc.weight,
            bias: doc.bias,
        };
        head.validate()?;
        Ok(head)
    }
}

#[derive(Serialize, Deserialize)]
struct HeadFile {
    schema_version: String,
    version: String,
    dim: usize,
    base_seed: u64,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Applies a head to a base embedding: `normalize(tanh(W v + b))`, with
/// the head's version recorded on the result.
pub fn apply_head(base: &SpeakerEmbedding, head: &ProjectionHead) -> Result<SpeakerEmbedding> {
    head.validate()?;
    let activated: Vec<f64> = head.affine(base.vector())?.iter().map(|a| a.tanh()).collect();
    let norm = l2_norm(&activated);
    if norm < 1e-12 {
        return Err(Error::DegenerateEmbedding(
            "head output collapsed to the zero vector".into(),
        ));
    }
    SpeakerEmbedding::new(
        activated.iter().map(|v| v / norm).collect(),
        head.version.clone(),
    )
}

/// Embeds features through the base encoder, then through the head when
/// one is supplied.
pub fn embed(
    feat: &FeatureMatrix,
    encoder: &BaseEncoder,
    head: Option<&ProjectionHead>,
) -> Result<SpeakerEmbedding> {
    let base = encoder.embed(feat)?;
    match head {
        None => Ok(base),
        Some(h) => apply_head(&base, h),
    }
}

/// Externally supplied base embeddings keyed by clip id, accepted anywhere
/// the base encoder would run. This is how real pretrained voiceprints (or
/// a precomputed cache) plug in.
#[derive(Debug, Clone)]
pub struct ExternalEmbeddings {
    dim: usize,
    map: BTreeMap<String, Vec<f64>>,
}

impl ExternalEmbeddings {
    pub fn new(dim: usize) -> Self {
        ExternalEmbeddings {
            dim,
            map: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Inserts a record, normalizing the vector.
    pub fn insert(&mut self, clip_id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        let emb = SpeakerEmbedding::from_unnormalized(vector, BASE_VERSION)?;
        self.map.insert(clip_id.into(), emb.vector.clone());
        Ok(())
    }

    pub fn get(&self, clip_id: &str) -> Option<SpeakerEmbedding> {
        self.map.get(clip_id).map(|v| SpeakerEmbedding {
            vector: v.clone(),
            head_version: BASE_VERSION.into(),
        })
    }

    pub fn clip_ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Newline-delimited JSON: a header record with the schema version and
    /// dimension, then one record per clip.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::json!({
            "schema_version": EMBEDDINGS_SCHEMA_VERSION,
            "dim": self.dim,
        });
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for (clip_id, vector) in &self.map {
            let rec = serde_json::json!({ "clip_id": clip_id, "vector": vector });
            writeln!(w, "{rec}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = std::io::BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Manifest {
                path: path.into(),
                reason: "empty embeddings file".into(),
            })?
            .map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct Header {
            schema_version: String,
            dim: usize,
        }
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Manifest {
            path: path.into(),
            reason: format!("bad header: {e}"),
        })?;
        if header.schema_version != EMBEDDINGS_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.into(),
                found: header.schema_version,
                expected: EMBEDDINGS_SCHEMA_VERSION.into(),
            });
        }
        #[derive(Deserialize)]
        struct Record {
            clip_id: String,
            vector: Vec<f64>,
        }
        let mut table = ExternalEmbeddings::new(header.dim);
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.into(),
                reason: format!("bad record: {e}"),
            })?;
            table.insert(rec.clip_id, rec.vector)?;
        }
        Ok(table)
    }
}

/// Where base embeddings come from: the built-in encoder, or an external
/// table keyed by the clip's source id.
#[derive(Debug, Clone, Copy)]
pub enum BaseSource<'a> {
    Encoder(&'a BaseEncoder),
    Table(&'a ExternalEmbeddings),
}

impl BaseSource<'_> {
    /// Base embedding for a clip. The encoder path extracts features and
    /// pools them; the table path looks the clip up by its source id.
    pub fn base_embedding(&self, clip: &AudioClip) -> Result<SpeakerEmbedding> {
        match self {
            BaseSource::Encoder(enc) => enc.embed(&extract_features(clip)?),
            BaseSource::Table(table) => {
                table
                    .get(clip.source_id())
                    .ok_or_else(|| Error::MissingEmbedding {
                        clip_id: clip.source_id().into(),
                    })
            }
        }
    }

    /// Base embedding for a manifest entry, preferring the table.
    pub fn base_embedding_for_id(
        &self,
        clip_id: &str,
        load_clip: impl FnOnce() -> Result<AudioClip>,
    ) -> Result<SpeakerEmbedding> {
        match self {
            BaseSource::Encoder(enc) => enc.embed(&extract_features(&load_clip()?)?),
            BaseSource::Table(table) => {
                table.get(clip_id).ok_or_else(|| Error::MissingEmbedding {
                    clip_id: clip_id.into(),
                })
            }
        }
    }

    /// Full embedding: base source then optional head.
    pub fn embedding(
        &self,
        clip: &AudioClip,
        head: Option<&ProjectionHead>,
    ) -> Result<SpeakerEmbedding> {
        let base = self.base_embedding(clip)?;
        match head {
            None => Ok(base),
            Some(h) => apply_head(&base, h),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random feature rows with a valid voicing/log-F0 pair in the prosody
    /// columns, so the matrix passes the layout invariants.
    fn random_feature_rows(rng: &mut ChaCha8Rng, t: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| {
                let mut row: Vec<f64> = (0..NUM_CHANNELS).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let voiced = rng.gen_bool(0.5);
                row[NUM_CHANNELS - 1] = if voiced { 1.0 } else { 0.0 };
                if !voiced {
                    row[NUM_CHANNELS - 3] = 0.0;
                }
                row
            })
            .collect()
    }

    fn feat_from_rows(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        FeatureMatrix::from_rows_default_layout(rows).unwrap()
    }

    #[test]
    fn constant_features_give_zero_stddev_half() {
        let mut row = vec![0.5; NUM_CHANNELS];
        row[NUM_CHANNELS - 1] = 1.0;
        let feat = feat_from_rows(vec![row; 20]);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let emb = enc.embed(&feat).unwrap();
        assert!((l2_norm(emb.vector()) - 1.0).abs() < 1e-12);
        assert_eq!(emb.head_version(), "base");
    }

    #[test]
    fn embedding_is_frame_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = random_feature_rows(&mut rng, 50);
        let mut shuffled = rows.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let a = enc.embed(&feat_from_rows(rows)).unwrap();
        let b = enc.embed(&feat_from_rows(shuffled)).unwrap();
        assert_eq!(a.vector(), b.vector());
    }

    #[test]
    fn embed_base_matches_scalar_reimplementation() {
        // Independent oracle: naive mean/std/matmul/normalize, sharing only
        // the projection matrix with the implementation.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rows = random_feature_rows(&mut rng, 198);
        let enc = BaseEncoder::new(BaseEncoderConfig {
            seed: 7,
            ..BaseEncoderConfig::default()
        });
        let emb = enc.embed(&feat_from_rows(rows.clone())).unwrap();

        let c = NUM_CHANNELS;
        let t = rows.len() as f64;
        let mut pooled = vec![0.0; 2 * c];
        for ch in 0..c {
            let mut mean = 0.0;
            for row in &rows {
                mean += row[ch];
            }
            mean /= t;
            let mut var = 0.0;
            for row in &rows {
                var += (row[ch] - mean) * (row[ch] - mean);
            }
            var /= t;
            pooled[ch] = mean;
            pooled[c + ch] = var.sqrt();
        }
        let d = enc.config().embed_dim;
        let mut raw = vec![0.0; d];
        for i in 0..2 * c {
            for j in 0..d {
                raw[j] += pooled[i] * enc.projection()[i * d + j];
            }
        }
        let norm = l2_norm(&raw);
        for (a, b) in emb.vector().iter().zip(&raw) {
            assert!((a - b / norm).abs() < 1e-9);
        }
    }

    #[test]
    fn encoder_projection_is_seed_deterministic() {
        let a = BaseEncoder::new(BaseEncoderConfig::default());
        let b = BaseEncoder::new(BaseEncoderConfig::default());
        assert_eq!(a.projection(), b.projection());
        let c = BaseEncoder::new(BaseEncoderConfig {
            seed: 8,
            ..BaseEncoderConfig::default()
        });
        assert_ne!(a.projection(), c.projection());
    }

    #[test]
    fn identity_head_is_normalized_tanh() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rows = random_feature_rows(&mut rng, 30);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let base = enc.embed(&feat_from_rows(rows)).unwrap();
        let head = ProjectionHead::identity(DEFAULT_EMBED_DIM, 7, "h1");
        let out = apply_head(&base, &head).unwrap();
        let tanh: Vec<f64> = base.vector().iter().map(|v| v.tanh()).collect();
        let norm = l2_norm(&tanh);
        for (a, b) in out.vector().iter().zip(&tanh) {
            assert!((a - b / norm).abs() < 1e-15);
        }
        assert_eq!(out.head_version(), "h1");
        assert!((l2_norm(out.vector()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn absent_head_equals_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows = random_feature_rows(&mut rng, 30);
        let feat = feat_from_rows(rows);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let a = embed(&feat, &enc, None).unwrap();
        let b = enc.embed(&feat).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_feature_rows(&mut rng, 30);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let base = enc.embed(&feat_from_rows(rows)).unwrap();
        let head = ProjectionHead {
            version: "zero".into(),
            dim: DEFAULT_EMBED_DIM,
            base_seed: 7,
            weight: vec![0.0; DEFAULT_EMBED_DIM * DEFAULT_EMBED_DIM],
            bias: vec![0.0; DEFAULT_EMBED_DIM],
        };
        match apply_head(&base, &head) {
            Err(Error::DegenerateEmbedding(_)) => {}
            other => panic!("expected degenerate embedding, got {other:?}"),
        }
    }

    #[test]
    fn head_dimension_mismatch_is_config_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows = random_feature_rows(&mut rng, 30);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let base = enc.embed(&feat_from_rows(rows)).unwrap();
        let head = ProjectionHead::identity(64, 7, "small");
        assert!(apply_head(&base, &head).is_err());
    }

    #[test]
    fn cosine_similarity_basics() {
        let e = |v: Vec<f64>| SpeakerEmbedding::new(v, "base").unwrap();
        let a = e(vec![1.0, 0.0]);
        let b = e(vec![0.0, 1.0]);
        let na = e(vec![-1.0, 0.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&a, &na).unwrap(), -1.0);
    }

    #[test]
    fn cosine_similarity_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a = SpeakerEmbedding::from_unnormalized(v, "base").unwrap();
            let b = SpeakerEmbedding::from_unnormalized(w, "base").unwrap();
            assert_eq!(
                cosine_similarity(&a, &b).unwrap(),
                cosine_similarity(&b, &a).unwrap()
            );
        }
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let a = SpeakerEmbedding::new(vec![1.0, 0.0], "base").unwrap();
        let b = SpeakerEmbedding::new(vec![1.0, 0.0, 0.0], "base").unwrap();
        match cosine_similarity(&a, &b) {
            Err(Error::DimensionMismatch { .. }) => {}
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn every_embedding_is_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc = BaseEncoder::new(BaseEncoderConfig::default());
        let head = ProjectionHead::identity(DEFAULT_EMBED_DIM, 7, "h");
        for _ in 0..20 {
            let t = rng.gen_range(2..80);
            let feat = feat_from_rows(random_feature_rows(&mut rng, t));
            let base = enc.embed(&feat).unwrap();
            assert!((l2_norm(base.vector()) - 1.0).abs() < NORM_TOLERANCE);
            let headed = apply_head(&base, &head).unwrap();
            assert!((l2_norm(headed.vector()) - 1.0).abs() < NORM_TOLERANCE);
        }
    }

    #[test]
    fn head_file_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let dim = 16;
        let head = ProjectionHead {
            version: "trained-abc".into(),
            dim,
            base_seed: 7,
            weight: (0..dim * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            bias: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        head.save(&path).unwrap();
        let back = ProjectionHead::load(&path).unwrap();
        assert_eq!(head, back);
    }

    #[test]
    fn head_load_rejects_unknown_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        std::fs::write(
            &path,
            r#"{"schema_version":"voiceprint-head-v99","version":"x","dim":2,"base_seed":0,"weight":[1,0,0,1],"bias":[0,0]}"#,
        )
        .unwrap();
        match ProjectionHead::load(&path) {
            Err(Error::SchemaVersion { .. }) => {}
            other => panic!("expected schema version error, got {other:?}"),
        }
    }

    #[test]
    fn external_embeddings_round_trip_and_lookup() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut table = ExternalEmbeddings::new(8);
        for i in 0..5 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.insert(format!("clip{i}"), v).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.ndjson");
        table.save(&path).unwrap();
        let back = ExternalEmbeddings::load(&path).unwrap();
        assert_eq!(back.len(), 5);
        let e = back.get("clip3").unwrap();
        assert_eq!(e.vector(), table.get("clip3").unwrap().vector());
        assert!((l2_norm(e.vector()) - 1.0).abs() < NORM_TOLERANCE);
        assert!(back.get("nope").is_none());
    }

    #[test]
    fn external_table_replaces_encoder() {
        let clip = AudioClip::new(vec![0.1; 16000], 16000, "clip-x").unwrap();
        let mut table = ExternalEmbeddings::new(4);
        table.insert("clip-x", vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let src = BaseSource::Table(&table);
        let emb = src.base_embedding(&clip).unwrap();
        assert_eq!(emb.dim(), 4);

        let other = AudioClip::new(vec![0.1; 16000], 16000, "unknown").unwrap();
        match src.base_embedding(&other) {
            Err(Error::MissingEmbedding { clip_id }) => assert_eq!(clip_id, "unknown"),
            other => panic!("expected missing embedding, got {other:?}"),
        }
    }
}
