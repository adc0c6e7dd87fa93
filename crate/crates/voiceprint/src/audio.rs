//! Monophonic PCM audio clips: reading, writing, validation, resampling.
//!
//! This is the bit-exact boundary between disk and DSP. Clips are kept as
//! `f64` samples in `[-1, 1]`; the canonical internal rate is 16 kHz and
//! every pipeline resamples on ingest.

use std::path::Path;

use crate::error::{Error, Result};

/// Canonical internal sample rate. All feature extraction runs at this rate.
pub const CANONICAL_RATE_HZ: u32 = 16_000;

/// Divisor used to normalize PCM16 samples (asymmetric on purpose: -32768
/// maps to exactly -1.0, +32767 to 32767/32768).
pub const INT16_SCALE: f64 = 32768.0;

/// A validated mono audio clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
    source_id: String,
}

impl AudioClip {
    /// Builds a clip, enforcing the type invariants: at least one sample,
    /// every sample finite and in `[-1, 1]`, positive sample rate.
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32, source_id: impl Into<String>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidClip("clip has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidClip(format!("non-finite sample at index {i}")));
            }
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::InvalidClip(format!(
                    "sample {s} at index {i} outside [-1, 1]"
                )));
            }
        }
        Ok(AudioClip {
            samples,
            sample_rate_hz,
            source_id: source_id.into(),
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Replaces the source id, e.g. to key a clip by its manifest clip id.
    pub fn with_source_id(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }
}

/// Reads a RIFF/WAVE file: mono, PCM integer 16-bit or IEEE float 32-bit.
///
/// PCM16 samples are normalized by dividing by 32768; float samples are
/// clamped to `[-1, 1]`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.into(),
            channels: spec.channels,
        });
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / INT16_SCALE))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound_error(path, e))?,
        (hound::SampleFormat::Float, 32) => {
            let mut out = Vec::new();
            for s in reader.into_samples::<f32>() {
                let v = f64::from(s.map_err(|e| map_hound_error(path, e))?);
                if v.is_nan() {
                    return Err(Error::Format {
                        path: path.into(),
                        reason: "NaN sample in float data".into(),
                    });
                }
                out.push(v.clamp(-1.0, 1.0));
            }
            out
        }
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.into(),
                reason: format!("{fmt:?} with {bits} bits per sample"),
            })
        }
    };
    if samples.is_empty() {
        return Err(Error::Format {
            path: path.into(),
            reason: "empty data chunk".into(),
        });
    }
    AudioClip::new(samples, spec.sample_rate, path.display().to_string())
}

fn map_hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        // Truncated or garbled headers surface as synthetic read errors;
        // only real OS errors stay in the I/O class.
        hound::Error::IoError(io)
            if matches!(
                io.kind(),
                std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other
            ) =>
        {
            Error::Format {
                path: path.into(),
                reason: io.to_string(),
            }
        }
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.into(),
            reason: "unknown codec".into(),
        },
        other => Error::Format {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Writes a clip as mono PCM16. Round trip through [`read_wav`] reproduces
/// the samples up to int16 quantization (max abs error 1/32768).
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    // Re-validate: callers can only construct valid clips, but the contract
    // here is a precondition, so an explicit check keeps the error mapping.
    AudioClip::new(
        clip.samples.clone(),
        clip.sample_rate_hz,
        clip.source_id.clone(),
    )
    .map_err(|e| Error::Precondition(e.to_string()))?;

    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(path, e))?;
    for &s in &clip.samples {
        let q = (s * INT16_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound_error(path, e))?;
    Ok(())
}

/// Number of sinc taps contributing to each output sample.
const RESAMPLE_TAPS: usize = 64;
/// Kaiser window shape parameter.
const KAISER_BETA: f64 = 8.6;

/// Resamples a clip with windowed-sinc interpolation (Kaiser window,
/// beta 8.6, 64 taps per phase). Duration is preserved within one output
/// sample. Resampling to the same rate returns a bit-identical copy.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz < 8000 {
        return Err(Error::UnsupportedRate {
            rate_hz: target_rate_hz,
        });
    }
    if target_rate_hz == clip.sample_rate_hz {
        return Ok(clip.clone());
    }

    let src = &clip.samples;
    let ratio = f64::from(target_rate_hz) / f64::from(clip.sample_rate_hz);
    let n_out = ((src.len() as f64) * ratio).round().max(1.0) as usize;
    // Anti-aliasing cutoff as a fraction of the input Nyquist frequency.
    let cutoff = ratio.min(1.0);
    let half = (RESAMPLE_TAPS / 2) as isize;
    let i0_beta = bessel_i0(KAISER_BETA);

    let step = 1.0 / ratio;
    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let pos = m as f64 * step;
        let i_center = pos.floor() as isize;
        let frac = pos - i_center as f64;
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for k in (1 - half)..=half {
            let u = k as f64 - frac;
            let w = cutoff * sinc(std::f64::consts::PI * cutoff * u)
                * kaiser(u / half as f64, i0_beta);
            wsum += w;
            let idx = i_center + k;
            if idx >= 0 && (idx as usize) < src.len() {
                acc += w * src[idx as usize];
            }
        }
        // Phase-wise normalization keeps DC gain exactly 1.
        out.push((acc / wsum).clamp(-1.0, 1.0));
    }
    AudioClip::new(out, target_rate_hz, clip.source_id.clone())
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        x.sin() / x
    }
}

fn kaiser(r: f64, i0_beta: f64) -> f64 {
    if r.abs() > 1.0 {
        0.0
    } else {
        bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta
    }
}

/// Modified Bessel function of the first kind, order zero (series expansion).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..64 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < 1e-16 * sum {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine_clip(freq_hz: f64, amp: f64, rate: u32, dur_s: f64) -> AudioClip {
        let n = (dur_s * f64::from(rate)) as usize;
        let samples = (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq_hz * i as f64 / f64::from(rate)).sin())
            .collect();
        AudioClip::new(samples, rate, "sine").unwrap()
    }

    #[test]
    fn read_pcm16_normalization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();

        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples(), &[0.0, 0.5, -1.0]);
        assert_eq!(clip.sample_rate_hz(), 16000);
    }

    #[test]
    fn read_garbage_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.wav");
        std::fs::write(&path, b"RIFFxxxxWAVEnot a real header at all").unwrap();
        match read_wav(&path) {
            Err(Error::Format { .. }) | Err(Error::UnsupportedCodec { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn read_empty_data_chunk_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let w = hound::WavWriter::create(&path, spec).unwrap();
        w.finalize().unwrap();
        match read_wav(&path) {
            Err(Error::Format { .. }) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn read_float32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples(), &[0.25]);
    }

    #[test]
    fn read_stereo_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        match read_wav(&path) {
            Err(Error::UnsupportedChannels { channels: 2, .. }) => {}
            other => panic!("expected unsupported channels, got {other:?}"),
        }
    }

    #[test]
    fn read_pcm24_rejected_as_codec() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p24.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i32).unwrap();
        w.finalize().unwrap();
        match read_wav(&path) {
            Err(Error::UnsupportedCodec { .. }) => {}
            other => panic!("expected unsupported codec, got {other:?}"),
        }
    }

    #[test]
    fn write_read_round_trip_quantization_bound() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.wav");
        let clip = sine_clip(440.0, 0.8, 16000, 1.0);
        write_wav(&clip, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples().len(), clip.samples().len());
        let max_err = clip
            .samples()
            .iter()
            .zip(back.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err <= 1.0 / INT16_SCALE, "max_err = {max_err}");
    }

    #[test]
    fn round_trip_bound_over_random_clips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rand.wav");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(1..400);
            let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let clip = AudioClip::new(samples, 16000, "r").unwrap();
            write_wav(&clip, &path).unwrap();
            let back = read_wav(&path).unwrap();
            for (a, b) in clip.samples().iter().zip(back.samples()) {
                assert!((a - b).abs() <= 1.0 / INT16_SCALE);
            }
        }
    }

    #[test]
    fn write_rejects_out_of_range_sample() {
        // Invariant breach has to be smuggled past the constructor.
        let mut clip = sine_clip(100.0, 0.5, 16000, 0.1);
        clip.samples[3] = 1.5;
        let dir = tempfile::tempdir().unwrap();
        match write_wav(&clip, dir.path().join("bad.wav")) {
            Err(Error::Precondition(_)) => {}
            other => panic!("expected precondition error, got {other:?}"),
        }
    }

    #[test]
    fn write_rejects_empty_clip() {
        let mut clip = sine_clip(100.0, 0.5, 16000, 0.1);
        clip.samples.clear();
        let dir = tempfile::tempdir().unwrap();
        match write_wav(&clip, dir.path().join("bad.wav")) {
            Err(Error::Precondition(_)) => {}
            other => panic!("expected precondition error, got {other:?}"),
        }
    }

    #[test]
    fn clip_constructor_enforces_invariants() {
        assert!(AudioClip::new(vec![], 16000, "x").is_err());
        assert!(AudioClip::new(vec![0.0], 0, "x").is_err());
        assert!(AudioClip::new(vec![1.1], 16000, "x").is_err());
        assert!(AudioClip::new(vec![f64::NAN], 16000, "x").is_err());
        assert!(AudioClip::new(vec![1.0, -1.0], 16000, "x").is_ok());
    }

    #[test]
    fn resample_identity_is_bit_exact() {
        let clip = sine_clip(440.0, 0.9, 16000, 0.5);
        let out = resample(&clip, 16000).unwrap();
        assert_eq!(out.samples(), clip.samples());
    }

    #[test]
    fn resample_preserves_duration() {
        let clip = sine_clip(440.0, 0.5, 48000, 1.0);
        let out = resample(&clip, 16000).unwrap();
        let diff = (out.samples().len() as i64 - 16000).abs();
        assert!(diff <= 1, "got {} samples", out.samples().len());
    }

    #[test]
    fn resample_rejects_low_rate() {
        let clip = sine_clip(440.0, 0.5, 16000, 0.1);
        match resample(&clip, 4000) {
            Err(Error::UnsupportedRate { rate_hz: 4000 }) => {}
            other => panic!("expected unsupported rate, got {other:?}"),
        }
    }

    #[test]
    fn resample_keeps_tone_frequency() {
        // Independent check: FFT of the resampled tone peaks at 1 kHz
        // within one FFT bin (1 Hz bins on a 1 s output).
        let clip = sine_clip(1000.0, 0.5, 48000, 1.0);
        let out = resample(&clip, 16000).unwrap();
        let n = out.samples().len();
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let mut buf: Vec<rustfft::num_complex::Complex<f64>> = out
            .samples()
            .iter()
            .map(|&s| rustfft::num_complex::Complex::new(s, 0.0))
            .collect();
        fft.process(&mut buf);
        let (peak_bin, _) = buf[..n / 2]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
            .unwrap();
        let bin_hz = 16000.0 / n as f64;
        let peak_hz = peak_bin as f64 * bin_hz;
        assert!(
            (peak_hz - 1000.0).abs() <= bin_hz,
            "peak at {peak_hz} Hz (bin width {bin_hz})"
        );
    }

    #[test]
    fn resample_is_linear_in_amplitude() {
        // Linearity holds in the unclipped region; amplitudes are kept at
        // 0.45 max so the [-1, 1] clamp never engages.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..25 {
            let n = rng.gen_range(2000..6000);
            let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.45..=0.45)).collect();
            let a = rng.gen_range(0.1..=1.0);
            let clip = AudioClip::new(samples.clone(), 48000, "x").unwrap();
            let scaled = AudioClip::new(samples.iter().map(|s| s * a).collect(), 48000, "ax").unwrap();
            let r1 = resample(&clip, 16000).unwrap();
            let r2 = resample(&scaled, 16000).unwrap();
            for (y1, y2) in r1.samples().iter().zip(r2.samples()) {
                assert!((y1 * a - y2).abs() < 1e-9);
            }
        }
    }
}
