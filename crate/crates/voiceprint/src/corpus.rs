//! Deterministic reenactment simulator and dataset tooling.
//!
//! Voices are synthesized source-filter style from two independent factor
//! groups: *timbre* (formants, tilt, F0 register) always comes from the
//! target identity, *mannerism* (syllable rate, pauses, pitch/energy
//! modulation, jitter) always from the driver. Synthetic clips differ from
//! real ones by a per-clip formant perturbation and a reduced jitter,
//! modeling clone imperfection and vocoder over-smoothing. Every result
//! downstream is relative to this factorization.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::{write_wav, AudioClip, CANONICAL_RATE_HZ};
use crate::error::{Error, Result};
use crate::features::{prosody_channels, FRAME_HOP, FRAME_LEN};

const MANIFEST_SCHEMA_VERSION: &str = "voiceprint-manifest-v1";

/// Target-side voice quality parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimbreParams {
    /// Formant center frequencies, ordered F1 < F2 < F3, in Hz.
    pub formant_hz: [f64; 3],
    pub formant_bandwidth_hz: [f64; 3],
    /// Spectral tilt above the 250 Hz anchor, dB per octave (negative).
    pub spectral_tilt_db_per_octave: f64,
    /// Mean F0 register in Hz.
    pub f0_register_hz: f64,
}

/// Driver-side talking-style parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MannerismParams {
    pub syllable_rate_hz: f64,
    /// Probability of a pause at each syllable boundary.
    pub pause_probability: f64,
    pub pause_duration_mean_s: f64,
    /// Relative F0 contour modulation depth (unitless).
    pub f0_modulation_depth: f64,
    pub f0_modulation_rate_hz: f64,
    pub energy_modulation_depth: f64,
    /// Relative F0 perturbation per glottal cycle.
    pub jitter_sigma: f64,
}

/// Simulator ground truth for one identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityFactors {
    pub identity: String,
    pub timbre: TimbreParams,
    pub mannerism: MannerismParams,
}

/// Sampling ranges, also the invariant bounds.
mod ranges {
    pub const F1: (f64, f64) = (250.0, 850.0);
    pub const F2: (f64, f64) = (950.0, 2400.0);
    pub const F3: (f64, f64) = (2550.0, 3400.0);
    pub const B1: (f64, f64) = (90.0, 150.0);
    pub const B2: (f64, f64) = (110.0, 190.0);
    pub const B3: (f64, f64) = (130.0, 220.0);
    pub const TILT: (f64, f64) = (-9.0, -3.0);
    pub const REGISTER: (f64, f64) = (80.0, 300.0);
    pub const SYLLABLE_RATE: (f64, f64) = (2.0, 8.0);
    pub const PAUSE_PROB: (f64, f64) = (0.05, 0.25);
    pub const PAUSE_MEAN: (f64, f64) = (0.35, 0.6);
    pub const F0_DEPTH: (f64, f64) = (0.03, 0.15);
    pub const F0_RATE: (f64, f64) = (0.5, 2.5);
    pub const ENERGY_DEPTH: (f64, f64) = (0.15, 0.8);
    pub const JITTER: (f64, f64) = (0.015, 0.05);
}

impl IdentityFactors {
    pub fn validate(&self) -> Result<()> {
        let t = &self.timbre;
        let m = &self.mannerism;
        let ordered = t.formant_hz[0] < t.formant_hz[1] && t.formant_hz[1] < t.formant_hz[2];
        let in_band = t.formant_hz.iter().all(|f| (200.0..=3500.0).contains(f));
        if !ordered || !in_band {
            return Err(Error::InvalidConfig(format!(
                "formants {:?} must be ordered within 200-3500 Hz",
                t.formant_hz
            )));
        }
        if !(80.0..=300.0).contains(&t.f0_register_hz) {
            return Err(Error::InvalidConfig(format!(
                "F0 register {} outside 80-300 Hz",
                t.f0_register_hz
            )));
        }
        if !(2.0..=8.0).contains(&m.syllable_rate_hz) {
            return Err(Error::InvalidConfig(format!(
                "syllable rate {} outside 2-8 Hz",
                m.syllable_rate_hz
            )));
        }
        if !(0.0..=1.0).contains(&m.pause_probability) {
            return Err(Error::InvalidConfig("pause probability outside [0,1]".into()));
        }
        if !(0.0..=0.05).contains(&m.jitter_sigma) {
            return Err(Error::InvalidConfig("jitter sigma outside [0, 0.05]".into()));
        }
        Ok(())
    }

    /// The mannerism coordinates that survive statistics pooling most
    /// directly (pace, pausing habit, energy modulation).
    fn visible_mannerism_unit(&self) -> [f64; 4] {
        let m = &self.mannerism;
        [
            unit(m.syllable_rate_hz, ranges::SYLLABLE_RATE),
            unit(m.pause_probability, ranges::PAUSE_PROB),
            unit(m.pause_duration_mean_s, ranges::PAUSE_MEAN),
            unit(m.energy_modulation_depth, ranges::ENERGY_DEPTH),
        ]
    }

    /// Mannerism coordinates scaled to the unit cube.
    fn mannerism_unit(&self) -> [f64; 7] {
        let m = &self.mannerism;
        [
            unit(m.syllable_rate_hz, ranges::SYLLABLE_RATE),
            unit(m.pause_probability, ranges::PAUSE_PROB),
            unit(m.pause_duration_mean_s, ranges::PAUSE_MEAN),
            unit(m.f0_modulation_depth, ranges::F0_DEPTH),
            unit(m.f0_modulation_rate_hz, ranges::F0_RATE),
            unit(m.energy_modulation_depth, ranges::ENERGY_DEPTH),
            unit(m.jitter_sigma, ranges::JITTER),
        ]
    }

    /// Main timbre coordinates scaled to the unit cube.
    fn timbre_unit(&self) -> [f64; 4] {
        let t = &self.timbre;
        [
            unit(t.formant_hz[0], ranges::F1),
            unit(t.formant_hz[1], ranges::F2),
            unit(t.formant_hz[2], ranges::F3),
            unit(t.f0_register_hz, ranges::REGISTER),
        ]
    }
}

fn unit(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (v - lo) / (hi - lo)
}

fn dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Normalized-space separation enforced between sampled identities, so
/// mannerisms (and voices) stay tellable apart at desk scale. The floors
/// decay when a draw budget is exhausted, so large requests still succeed.
const MANNERISM_MIN_DIST: f64 = 0.55;
const VISIBLE_MANNERISM_MIN_DIST: f64 = 0.45;
const TIMBRE_MIN_DIST: f64 = 0.3;

/// Samples `n` pairwise-distinct identities from seeded uniform ranges.
/// Deterministic per (n, seed).
pub fn sample_identities(n: usize, seed: u64) -> Result<Vec<IdentityFactors>> {
    if n < 2 {
        return Err(Error::InsufficientIdentities { need: 2, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d5a_71f0);
    let mut out: Vec<IdentityFactors> = Vec::with_capacity(n);
    let mut mannerism_floor = MANNERISM_MIN_DIST;
    let mut visible_floor = VISIBLE_MANNERISM_MIN_DIST;
    let mut timbre_floor = TIMBRE_MIN_DIST;
    for i in 0..n {
        let mut attempts = 0;
        let factors = loop {
            let cand = draw_identity(&mut rng, format!("id{i:03}"));
            let ok = out.iter().all(|other| {
                dist(&cand.mannerism_unit(), &other.mannerism_unit()) >= mannerism_floor
                    && dist(&cand.visible_mannerism_unit(), &other.visible_mannerism_unit())
                        >= visible_floor
                    && dist(&cand.timbre_unit(), &other.timbre_unit()) >= timbre_floor
            });
            if ok {
                break cand;
            }
            attempts += 1;
            if attempts >= 200 {
                mannerism_floor *= 0.7;
                visible_floor *= 0.7;
                timbre_floor *= 0.7;
                attempts = 0;
            }
        };
        factors.validate()?;
        out.push(factors);
    }
    Ok(out)
}

fn draw_identity(rng: &mut ChaCha8Rng, identity: String) -> IdentityFactors {
    let mut draw = |r: (f64, f64)| rng.gen_range(r.0..=r.1);
    IdentityFactors {
        identity,
        timbre: TimbreParams {
            formant_hz: [
                draw(ranges::F1),
                draw(ranges::F2),
                draw(ranges::F3),
            ],
            formant_bandwidth_hz: [draw(ranges::B1), draw(ranges::B2), draw(ranges::B3)],
            spectral_tilt_db_per_octave: draw(ranges::TILT),
            f0_register_hz: draw(ranges::REGISTER),
        },
        mannerism: MannerismParams {
            syllable_rate_hz: draw(ranges::SYLLABLE_RATE),
            pause_probability: draw(ranges::PAUSE_PROB),
            pause_duration_mean_s: draw(ranges::PAUSE_MEAN),
            f0_modulation_depth: draw(ranges::F0_DEPTH),
            f0_modulation_rate_hz: draw(ranges::F0_RATE),
            energy_modulation_depth: draw(ranges::ENERGY_DEPTH),
            jitter_sigma: draw(ranges::JITTER),
        },
    }
}

/// Real vs synthetic provenance of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Authenticity {
    Real,
    Synthetic,
}

impl std::fmt::Display for Authenticity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Authenticity::Real => write!(f, "real"),
            Authenticity::Synthetic => write!(f, "synthetic"),
        }
    }
}

/// Who drives a clip, whose voice it carries, and whether it is real.
/// A real clip is by definition driven by its own identity; a synthetic
/// clip with driver == target is a self-reenactment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReenactmentLabel {
    pub driver: String,
    pub target: String,
    pub authenticity: Authenticity,
    pub clip_id: String,
}

impl ReenactmentLabel {
    pub fn validate(&self) -> Result<()> {
        if self.authenticity == Authenticity::Real && self.driver != self.target {
            return Err(Error::InvalidConfig(format!(
                "real clip {} has driver {} != target {}",
                self.clip_id, self.driver, self.target
            )));
        }
        Ok(())
    }

    pub fn is_self_reenactment(&self) -> bool {
        self.authenticity == Authenticity::Synthetic && self.driver == self.target
    }
}

/// Difficulty and volume knobs for corpus generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub num_identities: usize,
    /// Synthetic clips per ordered (driver, target) pair, including self.
    pub clips_per_pair: usize,
    pub reals_per_identity: usize,
    pub clip_duration_s: f64,
    /// Per-clip relative formant perturbation applied to synthetic clips
    /// (the clone-imperfection model).
    pub clone_formant_sigma: f64,
    /// Jitter attenuation of synthetic clips (vocoder over-smoothing).
    pub clone_jitter_factor: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            num_identities: 16,
            clips_per_pair: 6,
            reals_per_identity: 40,
            clip_duration_s: 4.0,
            clone_formant_sigma: 0.02,
            clone_jitter_factor: 0.2,
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Path relative to the manifest's directory.
    pub path: String,
    pub driver: String,
    pub target: String,
    pub authenticity: Authenticity,
    pub duration_s: f64,
}

impl ManifestEntry {
    pub fn label(&self) -> ReenactmentLabel {
        ReenactmentLabel {
            driver: self.driver.clone(),
            target: self.target.clone(),
            authenticity: self.authenticity,
            clip_id: self.clip_id.clone(),
        }
    }

    pub fn is_self_reenactment(&self) -> bool {
        self.authenticity == Authenticity::Synthetic && self.driver == self.target
    }
}

/// A labeled clip collection plus the configuration that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub corpus_seed: u64,
    pub generator_params: GeneratorParams,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategoryCounts {
    pub real: usize,
    pub self_reenactment: usize,
    pub cross_reenactment: usize,
}

impl Manifest {
    pub fn counts(&self) -> CategoryCounts {
        let mut c = CategoryCounts {
            real: 0,
            self_reenactment: 0,
            cross_reenactment: 0,
        };
        for e in &self.entries {
            match (e.authenticity, e.driver == e.target) {
                (Authenticity::Real, _) => c.real += 1,
                (Authenticity::Synthetic, true) => c.self_reenactment += 1,
                (Authenticity::Synthetic, false) => c.cross_reenactment += 1,
            }
        }
        c
    }

    /// All identities appearing in either role, sorted.
    pub fn identities(&self) -> Vec<String> {
        let mut set = BTreeSet::new();
        for e in &self.entries {
            set.insert(e.driver.clone());
            set.insert(e.target.clone());
        }
        set.into_iter().collect()
    }

    /// Newline-delimited JSON: header record, then one record per entry.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = serde_json::json!({
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "corpus_seed": self.corpus_seed,
            "generator_params": self.generator_params,
        });
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| Error::Manifest {
                path: path.into(),
                reason: e.to_string(),
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact(format!("manifest {}", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        let mut lines = std::io::BufReader::new(file).lines();
        #[derive(Deserialize)]
        struct Header {
            schema_version: String,
            corpus_seed: u64,
            generator_params: GeneratorParams,
        }
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Manifest {
                path: path.into(),
                reason: "empty manifest".into(),
            })?
            .map_err(|e| Error::io(path, e))?;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Manifest {
            path: path.into(),
            reason: format!("bad header: {e}"),
        })?;
        if header.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: path.into(),
                found: header.schema_version,
                expected: MANIFEST_SCHEMA_VERSION.into(),
            });
        }
        let mut entries = Vec::new();
        let mut seen = BTreeSet::new();
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| Error::Manifest {
                path: path.into(),
                reason: format!("bad entry: {e}"),
            })?;
            entry.label().validate()?;
            if !seen.insert(entry.clip_id.clone()) {
                return Err(Error::Manifest {
                    path: path.into(),
                    reason: format!("duplicate clip_id {}", entry.clip_id),
                });
            }
            entries.push(entry);
        }
        Ok(Manifest {
            corpus_seed: header.corpus_seed,
            generator_params: header.generator_params,
            entries,
        })
    }
}

/// Planned clip before synthesis: (driver index, target index,
/// authenticity, repetition index).
pub type PlannedEntry = (usize, usize, Authenticity, usize);

/// The generation plan: R real clips per identity, K synthetic clips per
/// ordered (driver, target) pair including self pairs.
pub fn plan_entries(num_identities: usize, params: &GeneratorParams) -> Vec<PlannedEntry> {
    let mut plan = Vec::new();
    for i in 0..num_identities {
        for rep in 0..params.reals_per_identity {
            plan.push((i, i, Authenticity::Real, rep));
        }
    }
    for i in 0..num_identities {
        for j in 0..num_identities {
            for rep in 0..params.clips_per_pair {
                plan.push((i, j, Authenticity::Synthetic, rep));
            }
        }
    }
    plan
}

fn entry_hash(
    corpus_seed: u64,
    driver: &str,
    target: &str,
    authenticity: Authenticity,
    rep: usize,
    params: &GeneratorParams,
) -> (String, u64) {
    let mut hasher = Sha256::new();
    hasher.update(
        format!(
            "{corpus_seed}|{driver}|{target}|{authenticity}|{rep}|{}|{}|{}",
            params.clip_duration_s, params.clone_formant_sigma, params.clone_jitter_factor
        )
        .as_bytes(),
    );
    let digest = hasher.finalize();
    let clip_id: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    let seed = u64::from_le_bytes(digest[6..14].try_into().unwrap());
    (clip_id, seed)
}

/// Synthesizes one clip. Timbre comes from `target`, mannerism from
/// `driver`; synthetic clips get per-clip formant perturbation and reduced
/// jitter per `params`. Deterministic per seed.
pub fn synthesize_clip(
    driver: &IdentityFactors,
    target: &IdentityFactors,
    duration_s: f64,
    authenticity: Authenticity,
    seed: u64,
    params: &GeneratorParams,
) -> Result<(AudioClip, ReenactmentLabel)> {
    if !(2.0..=10.0).contains(&duration_s) {
        return Err(Error::InvalidConfig(format!(
            "clip duration {duration_s} outside 2-10 s"
        )));
    }
    if authenticity == Authenticity::Real && driver.identity != target.identity {
        return Err(Error::InvalidConfig(format!(
            "real clip cannot be driven by {} with the voice of {}",
            driver.identity, target.identity
        )));
    }
    driver.validate()?;
    target.validate()?;

    let fs = CANONICAL_RATE_HZ as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let randn = move |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };

    // Per-clip timbre realization.
    let mut formants = target.timbre.formant_hz;
    if authenticity == Authenticity::Synthetic {
        for f in &mut formants {
            *f *= 1.0 + params.clone_formant_sigma * randn(&mut rng);
            *f = f.clamp(210.0, 3490.0);
        }
        formants.sort_by(f64::total_cmp);
    }
    let jitter_sigma = driver.mannerism.jitter_sigma
        * if authenticity == Authenticity::Synthetic {
            params.clone_jitter_factor
        } else {
            1.0
        };

    // Syllable/pause timeline from the driver's mannerism.
    let m = &driver.mannerism;
    let syl_dur = 1.0 / m.syllable_rate_hz;
    // Fixed-length inter-syllable gap: the voiced fraction of speech time
    // then scales with the syllable rate, which keeps the driver's pace
    // visible to downstream statistics over time.
    const GAP_S: f64 = 0.06;
    // (start, end, per-syllable pitch offset). The zero-mean offset plays
    // the role of accent variation and keeps the voiced frames from
    // sampling the F0 contour at correlated phases.
    let mut segments: Vec<(f64, f64, f64)> = Vec::new();
    let mut t = 0.02;
    let mut syllables_since_pause = 0usize;
    while t + 0.8 * syl_dur < duration_s - 0.02 {
        let this_dur = syl_dur * rng.gen_range(0.9..=1.1);
        let offset = rng.gen_range(-0.03..=0.03);
        segments.push((t, (t + (this_dur - GAP_S).max(0.03)).min(duration_s - 0.02), offset));
        t += this_dur;
        // Structured pausing: one pause per ~1/p syllable boundaries (the
        // speaker's pacing habit), not an independent coin flip. Per-clip
        // pause time then reflects the habit, not sampling luck.
        syllables_since_pause += 1;
        let interval = (1.0 / m.pause_probability.max(1e-3)).round() as usize;
        if syllables_since_pause >= interval.max(1) {
            syllables_since_pause = 0;
            t += m.pause_duration_mean_s * rng.gen_range(0.8..=1.2);
        }
    }
    if segments.is_empty() {
        segments.push((0.02, (0.02 + (syl_dur - GAP_S).max(0.03)).min(duration_s - 0.02), 0.0));
    }

    // Voiced-excitation envelope with 5 ms ramps.
    let ramp = (0.005 * fs) as usize;
    let mut voiced_env = vec![0.0; n];
    for &(start, end, _) in &segments {
        let a = (start * fs) as usize;
        let b = ((end * fs) as usize).min(n);
        for (k, value) in voiced_env.iter_mut().enumerate().take(b).skip(a) {
            // Raised-cosine in and out over the first/last 5 ms.
            let up = ((k - a) as f64 / ramp as f64).min(1.0);
            let down = ((b - 1 - k) as f64 / ramp as f64).min(1.0);
            let gain_in = 0.5 * (1.0 - (std::f64::consts::PI * up).cos());
            let gain_out = 0.5 * (1.0 - (std::f64::consts::PI * down).cos());
            *value = f64::max(*value, gain_in.min(gain_out));
        }
    }

    // Glottal pulse train with per-cycle jitter, at the target's register
    // modulated by the driver's contour.
    let f0_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let f0_at = |time: f64| {
        target.timbre.f0_register_hz
            * (1.0
                + m.f0_modulation_depth
                    * (std::f64::consts::TAU * m.f0_modulation_rate_hz * time + f0_phase).sin())
    };
    // Each glottal pulse is a 7-sample raised cosine centered on its
    // (fractional) onset; smoother than a delta, like a real pulse.
    let mut excitation = vec![0.0; n];
    let pulse_half = 3i64;
    for &(start, end, offset) in &segments {
        let mut tc = start;
        while tc < end {
            let pos = tc * fs;
            let center = pos.floor() as i64;
            let frac = pos - pos.floor();
            for k in -pulse_half..=pulse_half + 1 {
                let idx = center + k;
                if idx >= 0 && (idx as usize) < n {
                    let u = (k as f64 - frac) / (pulse_half as f64 + 1.0);
                    if u.abs() < 1.0 {
                        excitation[idx as usize] +=
                            0.5 * (1.0 + (std::f64::consts::PI * u).cos());
                    }
                }
            }
            let f0 = f0_at(tc) * (1.0 + offset);
            let period = (1.0 / f0) * (1.0 + jitter_sigma * randn(&mut rng));
            tc += period.max(1.0 / 500.0);
        }
    }
    // Aspiration noise rides the voiced excitation through the filter.
    for i in 0..n {
        let z = randn(&mut rng);
        excitation[i] = (excitation[i] + z * 0.012) * voiced_env[i];
    }

    // Cascade of three unit-DC-gain resonators at the target's formants.
    let mut signal = excitation;
    for k in 0..3 {
        signal = resonate(&signal, formants[k], target.timbre.formant_bandwidth_hz[k], fs);
    }

    // Spectral tilt above the 250 Hz anchor.
    signal = apply_spectral_tilt(&signal, target.timbre.spectral_tilt_db_per_octave, fs);

    // Driver's energy modulation at the syllable rate, then a broadband
    // breath floor that stays outside the vocal-tract filter so silence
    // regions read as unvoiced, not as resonator-colored tone.
    let env_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for (i, s) in signal.iter_mut().enumerate() {
        let time = i as f64 / fs;
        *s *= 1.0
            + m.energy_modulation_depth
                * (std::f64::consts::TAU * m.syllable_rate_hz * time + env_phase).sin();
        *s += 0.025 * randn(&mut rng);
    }

    // Peak-normalize to 0.9.
    let peak = signal.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
    if peak > 0.0 {
        let g = 0.9 / peak;
        for s in &mut signal {
            *s *= g;
        }
    }

    let (clip_id, _) = entry_hash(
        seed,
        &driver.identity,
        &target.identity,
        authenticity,
        0,
        params,
    );
    let label = ReenactmentLabel {
        driver: driver.identity.clone(),
        target: target.identity.clone(),
        authenticity,
        clip_id,
    };
    let clip = AudioClip::new(signal, CANONICAL_RATE_HZ, label.clip_id.clone())?;
    Ok((clip, label))
}

/// Two-pole resonator with unit DC gain.
fn resonate(x: &[f64], freq_hz: f64, bandwidth_hz: f64, fs: f64) -> Vec<f64> {
    let r = (-std::f64::consts::PI * bandwidth_hz / fs).exp();
    let theta = std::f64::consts::TAU * freq_hz / fs;
    let a1 = 2.0 * r * theta.cos();
    let a2 = -r * r;
    let g = 1.0 - a1 - a2;
    let mut y = vec![0.0; x.len()];
    let mut y1 = 0.0;
    let mut y2 = 0.0;
    for (i, &xi) in x.iter().enumerate() {
        let yi = g * xi + a1 * y1 + a2 * y2;
        y[i] = yi;
        y2 = y1;
        y1 = yi;
    }
    y
}

/// Multiplies the spectrum by `(max(f, 250) / 250) ^ (tilt_db / 6.0206)`,
/// i.e. a constant dB-per-octave slope above a 250 Hz anchor.
fn apply_spectral_tilt(x: &[f64], tilt_db_per_octave: f64, fs: f64) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&s| Complex::new(s, 0.0)).collect();
    fft.process(&mut buf);
    let alpha = tilt_db_per_octave / (20.0 * 2.0f64.log10());
    for (k, c) in buf.iter_mut().enumerate() {
        let f = if k <= n / 2 {
            k as f64 * fs / n as f64
        } else {
            (n - k) as f64 * fs / n as f64
        };
        let gain = (f.max(250.0) / 250.0).powf(alpha);
        *c *= gain;
    }
    ifft.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

/// Generates the full corpus under `out_dir`: WAV clips in a
/// content-addressed layout plus `manifest.ndjson`. Deterministic per
/// seed; regeneration produces identical files.
pub fn generate_corpus(
    identities: &[IdentityFactors],
    params: &GeneratorParams,
    corpus_seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<Manifest> {
    if identities.len() < 2 {
        return Err(Error::InsufficientIdentities {
            need: 2,
            got: identities.len(),
        });
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plan = plan_entries(identities.len(), params);

    let entries: Vec<ManifestEntry> = plan
        .par_iter()
        .map(|&(i, j, auth, rep)| -> Result<ManifestEntry> {
            let driver = &identities[i];
            let target = &identities[j];
            let (clip_id, clip_seed) = entry_hash(
                corpus_seed,
                &driver.identity,
                &target.identity,
                auth,
                rep,
                params,
            );
            let (clip, _) = synthesize_clip(
                driver,
                target,
                params.clip_duration_s,
                auth,
                clip_seed,
                params,
            )?;
            let rel_path = format!("clips/{}/{}.wav", &clip_id[..2], clip_id);
            let abs_path = out_dir.join(&rel_path);
            if let Some(parent) = abs_path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_wav(&clip, &abs_path)?;
            Ok(ManifestEntry {
                clip_id,
                path: rel_path,
                driver: driver.identity.clone(),
                target: target.identity.clone(),
                authenticity: auth,
                duration_s: params.clip_duration_s,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = entries;
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let manifest = Manifest {
        corpus_seed,
        generator_params: params.clone(),
        entries,
    };
    manifest.save(out_dir.join("manifest.ndjson"))?;
    Ok(manifest)
}

/// Identity-disjoint train/val/test split description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_identities: Vec<String>,
    pub test_identities: Vec<String>,
    pub val_fraction: f64,
}

impl SplitSpec {
    /// Exhaustive disjointness scan: no train/val entry may reference a
    /// test identity as driver or target.
    pub fn assert_disjoint(&self, train: &Manifest, val: &Manifest) -> Result<()> {
        let test: BTreeSet<&str> = self.test_identities.iter().map(String::as_str).collect();
        for (name, manifest) in [("train", train), ("val", val)] {
            for e in &manifest.entries {
                if test.contains(e.driver.as_str()) || test.contains(e.target.as_str()) {
                    return Err(Error::InvalidConfig(format!(
                        "{name} entry {} references test identity ({} -> {})",
                        e.clip_id, e.driver, e.target
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Split manifests plus their spec.
#[derive(Debug, Clone)]
pub struct Splits {
    pub spec: SplitSpec,
    pub train: Manifest,
    pub val: Manifest,
    pub test: Manifest,
}

/// Splits a manifest by identity: `n_test_identities` are sampled by seed
/// and every entry touching one of them in either role is removed from the
/// train/val pool. Entries whose driver and target are both test
/// identities form the test manifest; entries straddling the boundary are
/// dropped entirely. The remaining pool splits at clip level into
/// validation (`val_fraction`) and train.
pub fn make_splits(
    manifest: &Manifest,
    n_test_identities: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Splits> {
    let identities = manifest.identities();
    if n_test_identities + 1 >= identities.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot hold out {n_test_identities} of {} identities",
            identities.len()
        )));
    }
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig(format!(
            "val fraction {val_fraction} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5111_7001);
    let mut shuffled = identities.clone();
    shuffled.shuffle(&mut rng);
    let mut test_ids: Vec<String> = shuffled[..n_test_identities].to_vec();
    test_ids.sort();
    let test_set: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
    let train_ids: Vec<String> = identities
        .iter()
        .filter(|id| !test_set.contains(id.as_str()))
        .cloned()
        .collect();

    let sub = |entries: Vec<ManifestEntry>| Manifest {
        corpus_seed: manifest.corpus_seed,
        generator_params: manifest.generator_params.clone(),
        entries,
    };

    let test_entries: Vec<ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| test_set.contains(e.driver.as_str()) && test_set.contains(e.target.as_str()))
        .cloned()
        .collect();
    let mut pool: Vec<ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| !test_set.contains(e.driver.as_str()) && !test_set.contains(e.target.as_str()))
        .cloned()
        .collect();

    pool.shuffle(&mut rng);
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let mut val_entries: Vec<ManifestEntry> = pool[..n_val].to_vec();
    let mut train_entries: Vec<ManifestEntry> = pool[n_val..].to_vec();
    val_entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    train_entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));

    let spec = SplitSpec {
        train_identities: train_ids,
        test_identities: test_ids,
        val_fraction,
    };
    let splits = Splits {
        train: sub(train_entries),
        val: sub(val_entries),
        test: sub(test_entries),
        spec,
    };
    splits.spec.assert_disjoint(&splits.train, &splits.val)?;
    Ok(splits)
}

/// Measured central F0 (Hz) from the prosody channels: the median over
/// interior voiced frames (both neighbors voiced too). Frames whose pitch
/// window straddles a gap occasionally lock onto formant ringing, so a
/// robust summary is used rather than the raw mean.
pub fn measure_mean_f0(clip: &AudioClip) -> Result<f64> {
    let pros = prosody_channels(clip)?;
    let voiced_at = |t: usize| pros[t][2] == 1.0;
    let mut interior: Vec<f64> = (1..pros.len().saturating_sub(1))
        .filter(|&t| voiced_at(t - 1) && voiced_at(t) && voiced_at(t + 1))
        .map(|t| pros[t][0].exp())
        .collect();
    if interior.is_empty() {
        interior = pros
            .iter()
            .filter(|p| p[2] == 1.0)
            .map(|p| p[0].exp())
            .collect();
    }
    if interior.is_empty() {
        return Err(Error::InsufficientAudio("no voiced frames".into()));
    }
    interior.sort_by(f64::total_cmp);
    Ok(interior[interior.len() / 2])
}

/// Measured syllable rate (Hz): voicing onsets per second of non-pause
/// time, where a pause is a run of at least 180 ms of unvoiced frames.
pub fn measure_syllable_rate(clip: &AudioClip) -> Result<f64> {
    let pros = prosody_channels(clip)?;
    let voicing: Vec<bool> = pros.iter().map(|p| p[2] == 1.0).collect();
    // Debounced onsets: voicing flickers within a syllable last a frame
    // or two, real inter-syllable gaps are three frames and up.
    let min_gap = 3usize;
    let mut onsets = 0usize;
    let mut unvoiced_run = min_gap;
    for &v in &voicing {
        if v {
            if unvoiced_run >= min_gap {
                onsets += 1;
            }
            unvoiced_run = 0;
        } else {
            unvoiced_run += 1;
        }
    }
    // Inter-syllable gaps run at most 0.30 / 2 Hz = 150 ms; real pauses
    // start at 0.6 * 0.35 s = 210 ms. 180 ms separates the two cleanly.
    let pause_run = 18;
    let mut pause_frames = 0usize;
    let mut run = 0usize;
    for &v in &voicing {
        if v {
            if run >= pause_run {
                pause_frames += run;
            }
            run = 0;
        } else {
            run += 1;
        }
    }
    if run >= pause_run {
        pause_frames += run;
    }
    let hop_s = FRAME_HOP as f64 / CANONICAL_RATE_HZ as f64;
    let speech_s = (voicing.len() - pause_frames) as f64 * hop_s;
    if speech_s <= 0.0 {
        return Err(Error::InsufficientAudio("no speech time".into()));
    }
    Ok(onsets as f64 / speech_s)
}

/// Measured first-formant frequency (Hz): peak of the long-term average
/// power spectrum in the 180-1050 Hz band, parabolically refined.
pub fn measure_f1_peak(clip: &AudioClip) -> Result<f64> {
    let fs = CANONICAL_RATE_HZ as f64;
    let x = clip.samples();
    if x.len() < FRAME_LEN {
        return Err(Error::InsufficientAudio("clip shorter than one frame".into()));
    }
    let fft_size = 1024;
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let window: Vec<f64> = (0..FRAME_LEN)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (FRAME_LEN - 1) as f64).cos())
        .collect();
    let n_frames = (x.len() - FRAME_LEN) / FRAME_HOP + 1;
    let mut ltas = vec![0.0f64; fft_size / 2 + 1];
    for t in 0..n_frames {
        let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
        for i in 0..FRAME_LEN {
            buf[i].re = x[t * FRAME_HOP + i] * window[i];
        }
        fft.process(&mut buf);
        for (k, acc) in ltas.iter_mut().enumerate() {
            *acc += buf[k].norm_sqr();
        }
    }
    let bin_hz = fs / fft_size as f64;
    let k_lo = (180.0 / bin_hz).ceil() as usize;
    let k_hi = (1050.0 / bin_hz).floor() as usize;
    let (k_peak, _) = ltas[k_lo..=k_hi]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(k, v)| (k + k_lo, v))
        .ok_or_else(|| Error::InsufficientAudio("empty band".into()))?;
    let refine = if k_peak > 0 && k_peak + 1 < ltas.len() {
        let (lm, l0, lp) = (
            ltas[k_peak - 1].max(1e-300).ln(),
            ltas[k_peak].max(1e-300).ln(),
            ltas[k_peak + 1].max(1e-300).ln(),
        );
        let denom = lm - 2.0 * l0 + lp;
        if denom.abs() > 1e-12 {
            (0.5 * (lm - lp) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok((k_peak as f64 + refine) * bin_hz)
}
