//! Acoustic feature extraction: 80 log-mel channels carrying timbre plus
//! 3 prosody channels (log-F0, log energy, voicing) carrying talking
//! mannerism, so the embedding space downstream can represent both.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{resample, AudioClip, CANONICAL_RATE_HZ};
use crate::error::{Error, Result};

/// Samples per analysis frame (25 ms at 16 kHz).
pub const FRAME_LEN: usize = 400;
/// Samples per hop (10 ms at 16 kHz).
pub const FRAME_HOP: usize = 160;
/// FFT size for the mel spectrum.
pub const FFT_SIZE: usize = 512;
/// Number of mel filterbank channels.
pub const NUM_MEL: usize = 80;
/// Mel filterbank frequency span.
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;
/// Pre-emphasis coefficient.
pub const PRE_EMPHASIS: f64 = 0.97;
/// Log floor applied to mel energies and RMS.
pub const LOG_FLOOR: f64 = 1e-10;
/// F0 search range.
pub const F0_MIN_HZ: f64 = 50.0;
pub const F0_MAX_HZ: f64 = 400.0;
/// A frame is voiced iff its peak normalized autocorrelation reaches this
/// value and its RMS reaches `RMS_FLOOR`.
pub const VOICING_THRESHOLD: f64 = 0.5;
pub const RMS_FLOOR: f64 = 1e-4;
/// Samples in the F0 analysis window (50 ms), centered on the 25 ms
/// frame. Long lags need several periods of overlap or the normalized
/// autocorrelation rewards spurious single-pulse alignments.
pub const PITCH_WINDOW: usize = 800;

/// Total feature channels: mel bands plus log-F0, log energy, voicing.
pub const NUM_CHANNELS: usize = NUM_MEL + 3;

/// Time-by-channel feature matrix, row major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
    channel_layout: Vec<String>,
}

impl FeatureMatrix {
    fn from_rows(rows_data: Vec<Vec<f64>>, channel_layout: Vec<String>) -> Result<Self> {
        let rows = rows_data.len();
        let cols = channel_layout.len();
        let mut data = Vec::with_capacity(rows * cols);
        for row in &rows_data {
            if row.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        let m = FeatureMatrix {
            data,
            rows,
            cols,
            channel_layout,
        };
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix under the default 80-mel + 3-prosody layout, e.g.
    /// for features computed by external tooling. The layout invariants
    /// (83 channels, binary voicing, zero log-F0 when unvoiced, finite
    /// cells) are enforced.
    pub fn from_rows_default_layout(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(rows, channel_names())
    }

    fn validate(&self) -> Result<()> {
        if self.cols != NUM_CHANNELS {
            return Err(Error::DimensionMismatch {
                expected: NUM_CHANNELS,
                got: self.cols,
            });
        }
        for t in 0..self.rows {
            let row = self.row(t);
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "non-finite feature value in frame {t}"
                )));
            }
            let voicing = row[NUM_MEL + 2];
            if voicing != 0.0 && voicing != 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "voicing flag {voicing} in frame {t} is not 0 or 1"
                )));
            }
            if voicing == 0.0 && row[NUM_MEL] != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "nonzero log-F0 in unvoiced frame {t}"
                )));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        self.rows
    }

    pub fn num_channels(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn channel_layout(&self) -> &[String] {
        &self.channel_layout
    }

    pub fn frame_hop_s(&self) -> f64 {
        FRAME_HOP as f64 / CANONICAL_RATE_HZ as f64
    }

    pub fn frame_len_s(&self) -> f64 {
        FRAME_LEN as f64 / CANONICAL_RATE_HZ as f64
    }

    /// Column of one channel across all frames.
    pub fn channel(&self, c: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |t| self.data[t * self.cols + c])
    }

    /// Debug dump: one CSV row per frame, header is the channel layout.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = self.channel_layout.join(",");
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for t in 0..self.rows {
            let line = self
                .row(t)
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn channel_names() -> Vec<String> {
    let mut names: Vec<String> = (0..NUM_MEL).map(|i| format!("mel_{i:02}")).collect();
    names.push("log_f0".into());
    names.push("log_energy".into());
    names.push("voicing".into());
    names
}

fn require_canonical_min_length(clip: &AudioClip) -> Result<()> {
    if clip.samples().len() < CANONICAL_RATE_HZ as usize {
        return Err(Error::InsufficientAudio(format!(
            "clip {} is {:.3} s, need at least 1.0 s",
            clip.source_id(),
            clip.duration_s()
        )));
    }
    Ok(())
}

/// Number of frames produced for `n` samples.
pub fn num_frames_for(n: usize) -> usize {
    if n < FRAME_LEN {
        0
    } else {
        (n - FRAME_LEN) / FRAME_HOP + 1
    }
}

/// Pre-emphasizes, slices into 400-sample frames at a 160-sample hop and
/// applies a Hann window. Requires at least 1.0 s of 16 kHz audio.
pub fn frame_and_window(clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
    require_canonical_min_length(clip)?;
    let x = clip.samples();
    let mut emphasized = Vec::with_capacity(x.len());
    emphasized.push(x[0]);
    for n in 1..x.len() {
        emphasized.push(x[n] - PRE_EMPHASIS * x[n - 1]);
    }
    let window: Vec<f64> = (0..FRAME_LEN)
        .map(|n| {
            0.5 - 0.5
                * (2.0 * std::f64::consts::PI * n as f64 / (FRAME_LEN - 1) as f64).cos()
        })
        .collect();
    let t_frames = num_frames_for(x.len());
    let mut frames = Vec::with_capacity(t_frames);
    for t in 0..t_frames {
        let start = t * FRAME_HOP;
        let frame: Vec<f64> = emphasized[start..start + FRAME_LEN]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        frames.push(frame);
    }
    Ok(frames)
}

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over the `FFT_SIZE/2 + 1` magnitude bins.
/// Returned per filter: (center frequency in Hz, per-bin weights).
fn mel_filterbank() -> Vec<(f64, Vec<f64>)> {
    let n_bins = FFT_SIZE / 2 + 1;
    let bin_hz = CANONICAL_RATE_HZ as f64 / FFT_SIZE as f64;
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ);
    let points: Vec<f64> = (0..NUM_MEL + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (NUM_MEL + 1) as f64))
        .collect();
    (0..NUM_MEL)
        .map(|j| {
            let (lo, center, hi) = (points[j], points[j + 1], points[j + 2]);
            let weights: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= center {
                        (f - lo) / (center - lo)
                    } else {
                        (hi - f) / (hi - center)
                    }
                })
                .collect();
            (center, weights)
        })
        .collect()
}

/// Center frequencies (Hz) of the 80 mel filters.
pub fn mel_center_frequencies() -> Vec<f64> {
    mel_filterbank().into_iter().map(|(c, _)| c).collect()
}

/// Log-mel spectrum per frame: 512-point power spectrum through 80
/// triangular mel filters (20 Hz to 7.6 kHz, HTK scale), natural log with
/// a 1e-10 floor.
pub fn log_mel(frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let filterbank = mel_filterbank();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(FFT_SIZE);
    frames
        .iter()
        .map(|frame| {
            let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
            for (i, &s) in frame.iter().enumerate() {
                buf[i].re = s;
            }
            fft.process(&mut buf);
            let power: Vec<f64> = buf[..FFT_SIZE / 2 + 1]
                .iter()
                .map(|c| c.norm_sqr())
                .collect();
            filterbank
                .iter()
                .map(|(_, weights)| {
                    let e: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                    e.max(LOG_FLOOR).ln()
                })
                .collect()
        })
        .collect()
}

/// Per-frame prosody: (log-F0 or 0, log RMS energy, voicing flag).
///
/// A frame is voiced iff the peak of its normalized autocorrelation (over
/// lags in the 50-400 Hz range, within the 25 ms frame) reaches 0.5 and
/// the frame RMS reaches 1e-4. The short window keeps the voicing flag
/// temporally sharp. F0 for voiced frames comes from a 50 ms window
/// centered on the frame, where long lags still overlap several periods,
/// with sub-harmonic correction and parabolic refinement.
pub fn prosody_channels(clip: &AudioClip) -> Result<Vec<[f64; 3]>> {
    require_canonical_min_length(clip)?;
    let x = clip.samples();
    let fs = CANONICAL_RATE_HZ as f64;
    let lag_min = (fs / F0_MAX_HZ).floor() as usize; // 40
    let lag_max = (fs / F0_MIN_HZ).ceil() as usize; // 320
    let t_frames = num_frames_for(x.len());
    let mut out = Vec::with_capacity(t_frames);
    let mut r_at = vec![0.0; lag_max + 2];
    let mut frame_prefix = vec![0.0; FRAME_LEN + 1];
    let mut win_prefix = vec![0.0; PITCH_WINDOW + 1];
    for t in 0..t_frames {
        let frame = &x[t * FRAME_HOP..t * FRAME_HOP + FRAME_LEN];
        let rms = (frame.iter().map(|s| s * s).sum::<f64>() / FRAME_LEN as f64).sqrt();
        let log_energy = (rms + LOG_FLOOR).ln();

        let mut peak_r = f64::NEG_INFINITY;
        if rms >= RMS_FLOOR {
            for (i, &s) in frame.iter().enumerate() {
                frame_prefix[i + 1] = frame_prefix[i] + s * s;
            }
            let total = frame_prefix[FRAME_LEN];
            for lag in lag_min..=lag_max.min(FRAME_LEN - 1) {
                let n = FRAME_LEN - lag;
                let dot: f64 = frame[..n].iter().zip(&frame[lag..]).map(|(a, b)| a * b).sum();
                let denom = (frame_prefix[n] * (total - frame_prefix[lag])).sqrt();
                if denom > 0.0 {
                    peak_r = peak_r.max(dot / denom);
                }
            }
        }
        let voiced = rms >= RMS_FLOOR && peak_r >= VOICING_THRESHOLD;

        let log_f0 = if voiced {
            // 50 ms pitch window centered on the frame, clamped inside
            // the clip.
            let center = t * FRAME_HOP + FRAME_LEN / 2;
            let w0 = center
                .saturating_sub(PITCH_WINDOW / 2)
                .min(x.len() - PITCH_WINDOW);
            let win = &x[w0..w0 + PITCH_WINDOW];
            for (i, &s) in win.iter().enumerate() {
                win_prefix[i + 1] = win_prefix[i] + s * s;
            }
            let total = win_prefix[PITCH_WINDOW];
            let mut best_lag = lag_min;
            let mut best_r = f64::NEG_INFINITY;
            for lag in lag_min..=lag_max {
                let n = PITCH_WINDOW - lag;
                let dot: f64 = win[..n].iter().zip(&win[lag..]).map(|(a, b)| a * b).sum();
                let denom = (win_prefix[n] * (total - win_prefix[lag])).sqrt();
                let r = if denom > 0.0 { dot / denom } else { 0.0 };
                r_at[lag] = r;
                if r > best_r {
                    best_r = r;
                    best_lag = lag;
                }
            }
            // Sub-harmonic correction: prefer the shortest lag whose
            // correlation is nearly as strong as the peak.
            let mut lag = best_lag;
            for div in 2..=4usize {
                let cand = ((best_lag as f64 / div as f64).round()) as usize;
                if cand >= lag_min && r_at[cand] >= 0.9 * best_r {
                    lag = lag.min(cand);
                }
            }
            // Parabolic refinement around the chosen lag.
            let refined = lag as f64
                + if lag > lag_min && lag < lag_max {
                    let (rm, r0, rp) = (r_at[lag - 1], r_at[lag], r_at[lag + 1]);
                    let denom = rm - 2.0 * r0 + rp;
                    if denom.abs() > 1e-12 {
                        (0.5 * (rm - rp) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
            (fs / refined).ln()
        } else {
            0.0
        };
        out.push([log_f0, log_energy, if voiced { 1.0 } else { 0.0 }]);
    }
    Ok(out)
}

/// Full feature matrix: log-mel and prosody channels side by side, rows
/// truncated to the shorter of the two. Clips at other sample rates are
/// resampled to 16 kHz first.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureMatrix> {
    let resampled;
    let clip16 = if clip.sample_rate_hz() == CANONICAL_RATE_HZ {
        clip
    } else {
        resampled = resample(clip, CANONICAL_RATE_HZ)?;
        &resampled
    };
    let frames = frame_and_window(clip16)?;
    let mel = log_mel(&frames);
    let pros = prosody_channels(clip16)?;
    let t_frames = mel.len().min(pros.len());
    let rows: Vec<Vec<f64>> = (0..t_frames)
        .map(|t| {
            let mut row = mel[t].clone();
            row.extend_from_slice(&pros[t]);
            row
        })
        .collect();
    FeatureMatrix::from_rows(rows, channel_names())
}
