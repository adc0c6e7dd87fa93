//! Additive angular margin fine-tuning of the projection head.
//!
//! The base encoder stays frozen; only the head and the per-driver class
//! prototypes learn. Gradients are derived by hand for the exact forward
//! expression (including the cosine clamp and the margin fallback branch)
//! and checked against central finite differences in the tests.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::read_wav;
use crate::embedding::{l2_norm, BaseSource, ProjectionHead, SpeakerEmbedding};
use crate::error::{Error, Result};
use crate::corpus::{Authenticity, Manifest};

/// Cosine clamp bound: cosines live in [-1 + 1e-7, 1 - 1e-7] and the
/// gradient is zero in the clamped region.
pub const COS_EPS: f64 = 1e-7;
/// Unit-norm tolerance on loss inputs. Loose enough that finite-difference
/// probes (h = 1e-5) stay inside the precondition.
const INPUT_NORM_TOLERANCE: f64 = 1e-3;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Margin-softmax training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AamConfig {
    pub scale_s: f64,
    /// Additive angular margin in radians, within [0, 0.5].
    pub margin_m: f64,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AamConfig {
    fn default() -> Self {
        AamConfig {
            scale_s: 30.0,
            margin_m: 0.2,
            num_classes: 0,
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl AamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_s <= 0.0 {
            return Err(Error::InvalidConfig("scale must be positive".into()));
        }
        if !(0.0..=0.5).contains(&self.margin_m) {
            return Err(Error::InvalidConfig(format!(
                "margin {} outside [0, 0.5] radians",
                self.margin_m
            )));
        }
        if self.margin_m + std::f64::consts::FRAC_PI_2 >= std::f64::consts::PI {
            return Err(Error::InvalidConfig("margin wraps past pi".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Learned per-class prototypes, every row kept at unit norm after each
/// optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    num_classes: usize,
    dim: usize,
    rows: Vec<f64>,
}

impl ClassWeights {
    /// Random unit-norm rows, deterministic per seed.
    pub fn new_seeded(num_classes: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc1a5_5e5d);
        let mut rows = vec![0.0; num_classes * dim];
        for row in rows.chunks_mut(dim) {
            loop {
                for v in row.iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
                let norm = l2_norm(row);
                if norm > 1e-6 {
                    row.iter_mut().for_each(|v| *v /= norm);
                    break;
                }
            }
        }
        ClassWeights {
            num_classes,
            dim,
            rows,
        }
    }

    pub fn from_rows(num_classes: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if rows.len() != num_classes * dim {
            return Err(Error::DimensionMismatch {
                expected: num_classes * dim,
                got: rows.len(),
            });
        }
        Ok(ClassWeights {
            num_classes,
            dim,
            rows,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.rows[class * self.dim..(class + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    /// Renormalizes every row to unit length.
    pub fn renormalize(&mut self) {
        for row in self.rows.chunks_mut(self.dim) {
            let norm = l2_norm(row);
            if norm > 1e-12 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    pub fn max_row_norm_error(&self) -> f64 {
        self.rows
            .chunks(self.dim)
            .map(|row| (l2_norm(row) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

fn check_loss_inputs(embedding: &[f64], label: usize, cfg: &AamConfig, weights: &ClassWeights) -> Result<()> {
    cfg.validate()?;
    if weights.num_classes != cfg.num_classes {
        return Err(Error::InvalidConfig(format!(
            "class count mismatch: cfg {} vs weights {}",
            cfg.num_classes, weights.num_classes
        )));
    }
    if embedding.len() != weights.dim {
        return Err(Error::DimensionMismatch {
            expected: weights.dim,
            got: embedding.len(),
        });
    }
    if label >= cfg.num_classes {
        return Err(Error::Precondition(format!(
            "label {label} out of range for {} classes",
            cfg.num_classes
        )));
    }
    let norm = l2_norm(embedding);
    if (norm - 1.0).abs() > INPUT_NORM_TOLERANCE {
        return Err(Error::Precondition(format!(
            "embedding norm {norm} is not 1"
        )));
    }
    Ok(())
}

/// Forward state shared by the loss and its gradient.
struct AamForwardState {
    /// Raw dot products before clamping.
    raw: Vec<f64>,
    /// Clamped cosines.
    cos: Vec<f64>,
    /// Scaled logits (margin applied to the target class).
    logits: Vec<f64>,
    /// Softmax probabilities.
    probs: Vec<f64>,
    loss: f64,
    /// Whether the principal margin branch was taken for the target.
    principal_branch: bool,
}

fn aam_forward_state(
    embedding: &[f64],
    label: usize,
    cfg: &AamConfig,
    weights: &ClassWeights,
) -> AamForwardState {
    let c = cfg.num_classes;
    let mut raw = Vec::with_capacity(c);
    let mut cos = Vec::with_capacity(c);
    for j in 0..c {
        let dot: f64 = weights.row(j).iter().zip(embedding).map(|(w, x)| w * x).sum();
        raw.push(dot);
        cos.push(dot.clamp(-1.0 + COS_EPS, 1.0 - COS_EPS));
    }
    let cos_y = cos[label];
    let (m_sin, m_cos) = cfg.margin_m.sin_cos();
    // cos(theta + m) while theta + m stays below pi; the standard
    // easy-margin fallback keeps the logit monotone in theta past that.
    let principal_branch = cos_y > (std::f64::consts::PI - cfg.margin_m).cos();
    let phi = if principal_branch {
        let sin_y = (1.0 - cos_y * cos_y).sqrt();
        cos_y * m_cos - sin_y * m_sin
    } else {
        cos_y - cfg.margin_m * m_sin
    };
    let logits: Vec<f64> = (0..c)
        .map(|j| cfg.scale_s * if j == label { phi } else { cos[j] })
        .collect();
    let max_logit = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
    let denom: f64 = exp.iter().sum();
    let probs: Vec<f64> = exp.iter().map(|e| e / denom).collect();
    let loss = denom.ln() + max_logit - logits[label];
    AamForwardState {
        raw,
        cos,
        logits,
        probs,
        loss,
        principal_branch,
    }
}

/// Additive angular margin softmax loss of one sample.
///
/// Cosines are clamped to `[-1 + 1e-7, 1 - 1e-7]`; the target logit uses
/// `cos(theta_y + m)` while that stays in range, else the easy-margin
/// fallback `cos(theta_y) - m sin(m)`; all logits scale by `s`; the loss
/// is softmax cross-entropy of the target class. Returns the loss and the
/// scaled logits.
pub fn aam_forward(
    embedding: &[f64],
    label: usize,
    cfg: &AamConfig,
    weights: &ClassWeights,
) -> Result<(f64, Vec<f64>)> {
    check_loss_inputs(embedding, label, cfg, weights)?;
    let state = aam_forward_state(embedding, label, cfg, weights);
    Ok((state.loss, state.logits))
}

/// Gradients of [`aam_forward`] with respect to the embedding and every
/// class-weight row.
#[derive(Debug, Clone)]
pub struct AamGradients {
    pub embedding: Vec<f64>,
    /// Row-major num_classes x dim.
    pub class_weights: Vec<f64>,
    pub loss: f64,
}

pub fn aam_backward(
    embedding: &[f64],
    label: usize,
    cfg: &AamConfig,
    weights: &ClassWeights,
) -> Result<AamGradients> {
    check_loss_inputs(embedding, label, cfg, weights)?;
    let state = aam_forward_state(embedding, label, cfg, weights);
    let c = cfg.num_classes;
    let d = weights.dim;
    let (m_sin, m_cos) = cfg.margin_m.sin_cos();

    let mut grad_embedding = vec![0.0; d];
    let mut grad_weights = vec![0.0; c * d];
    for j in 0..c {
        let dl_dlogit = state.probs[j] - if j == label { 1.0 } else { 0.0 };
        // d logit / d cos.
        let dlogit_dcos = cfg.scale_s
            * if j == label && state.principal_branch {
                let cos_y = state.cos[label];
                let sin_y = (1.0 - cos_y * cos_y).sqrt();
                m_cos + m_sin * cos_y / sin_y
            } else {
                1.0
            };
        // The clamp zeroes the gradient outside the open interval.
        let clamp_mask = if state.raw[j] > -1.0 + COS_EPS && state.raw[j] < 1.0 - COS_EPS {
            1.0
        } else {
            0.0
        };
        let g = dl_dlogit * dlogit_dcos * clamp_mask;
        let w_row = weights.row(j);
        for i in 0..d {
            grad_embedding[i] += g * w_row[i];
            grad_weights[j * d + i] = g * embedding[i];
        }
    }
    Ok(AamGradients {
        embedding: grad_embedding,
        class_weights: grad_weights,
        loss: state.loss,
    })
}

/// Forward pass through the head, keeping what the backward pass needs.
pub struct HeadForward {
    /// tanh(W v + b).
    pub activated: Vec<f64>,
    /// Norm of the activated vector.
    pub norm: f64,
    /// Normalized output (the embedding fed to the loss).
    pub output: Vec<f64>,
}

pub fn head_forward(base: &[f64], head: &ProjectionHead) -> Result<HeadForward> {
    let activated: Vec<f64> = head.affine(base)?.iter().map(|a| a.tanh()).collect();
    let norm = l2_norm(&activated);
    if norm < 1e-12 {
        return Err(Error::SingularGradient(
            "head output has zero norm".into(),
        ));
    }
    let output = activated.iter().map(|v| v / norm).collect();
    Ok(HeadForward {
        activated,
        norm,
        output,
    })
}

/// Gradients with respect to the head parameters.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    /// Row-major dim x dim.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Backpropagates an upstream gradient (with respect to the normalized
/// head output) through normalize . tanh . affine, yielding exact
/// Jacobian-vector products for the head weight and bias.
pub fn chain_through_head(
    base: &[f64],
    head: &ProjectionHead,
    upstream: &[f64],
) -> Result<HeadGradients> {
    let fwd = head_forward(base, head)?;
    chain_through_head_with(base, &fwd, upstream)
}

/// Same as [`chain_through_head`] but reusing a saved forward pass.
pub fn chain_through_head_with(
    base: &[f64],
    fwd: &HeadForward,
    upstream: &[f64],
) -> Result<HeadGradients> {
    let d = fwd.output.len();
    if upstream.len() != d || base.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: upstream.len().max(base.len()),
        });
    }
    // Through the normalization: (I - y y^T) / ||t||.
    let y_dot_up: f64 = fwd.output.iter().zip(upstream).map(|(y, u)| y * u).sum();
    let mut dl_da = vec![0.0; d];
    for i in 0..d {
        let dl_dt = (upstream[i] - fwd.output[i] * y_dot_up) / fwd.norm;
        // Through tanh: 1 - t^2.
        dl_da[i] = (1.0 - fwd.activated[i] * fwd.activated[i]) * dl_dt;
    }
    let mut weight = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            weight[i * d + j] = dl_da[i] * base[j];
        }
    }
    Ok(HeadGradients {
        weight,
        bias: dl_da,
    })
}

/// Adam accumulator for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamMoments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    fn zeros(n: usize) -> Self {
        AdamMoments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update on a parameter tensor
/// (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub fn adam_update(
    params: &mut [f64],
    moments: &mut AdamMoments,
    grads: &[f64],
    learning_rate: f64,
    step: u64,
) {
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        moments.m[i] = BETA1 * moments.m[i] + (1.0 - BETA1) * g;
        moments.v[i] = BETA2 * moments.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Full optimizer state: head, class prototypes, Adam moments, step count.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub head: ProjectionHead,
    pub class_weights: ClassWeights,
    pub step: u64,
    moments_weight: AdamMoments,
    moments_bias: AdamMoments,
    moments_class: AdamMoments,
}

impl TrainState {
    pub fn new(head: ProjectionHead, class_weights: ClassWeights) -> Self {
        let dim = head.dim;
        let classes = class_weights.num_classes();
        TrainState {
            head,
            class_weights,
            step: 0,
            moments_weight: AdamMoments::zeros(dim * dim),
            moments_bias: AdamMoments::zeros(dim),
            moments_class: AdamMoments::zeros(classes * dim),
        }
    }
}

/// Accumulated gradients for one optimizer step.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub head_weight: Vec<f64>,
    pub head_bias: Vec<f64>,
    pub class_weights: Vec<f64>,
}

impl BatchGradients {
    pub fn zeros(dim: usize, num_classes: usize) -> Self {
        BatchGradients {
            head_weight: vec![0.0; dim * dim],
            head_bias: vec![0.0; dim],
            class_weights: vec![0.0; num_classes * dim],
        }
    }

    fn is_finite(&self) -> bool {
        self.head_weight
            .iter()
            .chain(&self.head_bias)
            .chain(&self.class_weights)
            .all(|v| v.is_finite())
    }
}

/// Applies one Adam step to every trained tensor and renormalizes the
/// class-weight rows.
pub fn adam_step(state: &mut TrainState, grads: &BatchGradients, cfg: &AamConfig) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::TrainingDivergence("non-finite gradient".into()));
    }
    state.step += 1;
    adam_update(
        &mut state.head.weight,
        &mut state.moments_weight,
        &grads.head_weight,
        cfg.learning_rate,
        state.step,
    );
    adam_update(
        &mut state.head.bias,
        &mut state.moments_bias,
        &grads.head_bias,
        cfg.learning_rate,
        state.step,
    );
    adam_update(
        &mut state.class_weights.rows,
        &mut state.moments_class,
        &grads.class_weights,
        cfg.learning_rate,
        state.step,
    );
    state.class_weights.renormalize();
    Ok(())
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_seconds: f64,
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: ProjectionHead,
    pub epochs: Vec<EpochStats>,
    /// Hash over the sorted training clip ids, recorded in the head
    /// version for provenance.
    pub data_hash: String,
    /// Driver identities in class-index order.
    pub classes: Vec<String>,
}

impl TrainOutcome {
    /// One CSV row per epoch: epoch, mean_loss, wall_seconds.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "epoch,mean_loss,wall_seconds").map_err(|e| Error::io(path, e))?;
        for s in &self.epochs {
            writeln!(w, "{},{},{:.3}", s.epoch, s.mean_loss, s.wall_seconds)
                .map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Fine-tunes a projection head on the driver labels of a manifest's
/// synthetic clips. Deterministic given (seed, data, config): the same
/// inputs produce a bit-identical head.
///
/// The manifest's clips are embedded once through the frozen base source;
/// each epoch shuffles the samples, accumulates per-sample gradients in
/// batch order, and applies one Adam step per mini-batch on the summed
/// loss.
pub fn train_head(
    manifest: &Manifest,
    wav_root: impl AsRef<Path>,
    cfg: &AamConfig,
    source: &BaseSource<'_>,
) -> Result<TrainOutcome> {
    let wav_root = wav_root.as_ref();
    let mut entries: Vec<_> = manifest
        .entries
        .iter()
        .filter(|e| e.authenticity == Authenticity::Synthetic)
        .collect();
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let mut classes: Vec<String> = entries.iter().map(|e| e.driver.clone()).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::InsufficientClasses { got: classes.len() });
    }

    let mut cfg = cfg.clone();
    cfg.num_classes = classes.len();
    cfg.validate()?;

    // Base embeddings are frozen; compute them once, in parallel.
    let bases: Vec<SpeakerEmbedding> = entries
        .par_iter()
        .map(|e| {
            source.base_embedding_for_id(&e.clip_id, || {
                Ok(read_wav(wav_root.join(&e.path))?.with_source_id(e.clip_id.clone()))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = bases[0].dim();
    let labels: Vec<usize> = entries
        .iter()
        .map(|e| classes.binary_search(&e.driver).unwrap())
        .collect();

    // Provenance digest over the sorted clip ids and the exact training
    // configuration.
    let mut hasher = Sha256::new();
    for e in &entries {
        hasher.update(e.clip_id.as_bytes());
        hasher.update(b"|");
    }
    hasher.update(
        format!(
            "cfg|{}|{}|{}|{}|{}|{}",
            cfg.scale_s, cfg.margin_m, cfg.learning_rate, cfg.epochs, cfg.batch_size, cfg.num_classes
        )
        .as_bytes(),
    );
    let data_hash: String = hasher.finalize()[..6]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let base_seed = match source {
        BaseSource::Encoder(enc) => enc.config().seed,
        BaseSource::Table(_) => 0,
    };
    let version = format!("aam-e{}-s{}-{}", cfg.epochs, cfg.seed, data_hash);

    let head = ProjectionHead::identity(dim, base_seed, version);
    let class_weights = ClassWeights::new_seeded(cfg.num_classes, dim, cfg.seed);
    let mut state = TrainState::new(head, class_weights);
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut epochs = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = BatchGradients::zeros(dim, cfg.num_classes);
            // Per-batch loss is the sum over samples; gradients accumulate
            // in batch order, which the seed fully determines.
            for &idx in batch {
                let fwd = head_forward(bases[idx].vector(), &state.head)?;
                let aam = aam_backward(&fwd.output, labels[idx], &cfg, &state.class_weights)?;
                let head_grads = chain_through_head_with(bases[idx].vector(), &fwd, &aam.embedding)?;
                for (g, acc) in head_grads.weight.iter().zip(&mut grads.head_weight) {
                    *acc += g;
                }
                for (g, acc) in head_grads.bias.iter().zip(&mut grads.head_bias) {
                    *acc += g;
                }
                for (g, acc) in aam.class_weights.iter().zip(&mut grads.class_weights) {
                    *acc += g;
                }
                loss_sum += aam.loss;
            }
            adam_step(&mut state, &grads, &cfg)?;
        }
        let mean_loss = loss_sum / entries.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDivergence(format!(
                "non-finite epoch loss at epoch {epoch}"
            )));
        }
        epochs.push(EpochStats {
            epoch,
            mean_loss,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutcome {
        head: state.head,
        epochs,
        data_hash,
        classes,
    })
}
