//! Audio clips and the log-mel frame statistics used by the toy encoders.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono waveform in `[-1, 1]` with a gain applied before encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    gain: f64,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::with_gain(samples, sample_rate, 1.0)
    }

    pub fn with_gain(samples: Vec<f64>, sample_rate: u32, gain: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidInput(format!("gain must be > 0, got {gain}")));
        }
        if samples.iter().any(|s| !s.is_finite() || s.abs() > 1.0) {
            return Err(Error::InvalidInput("samples must be finite and within [-1, 1]".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
            gain,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// Same waveform, different gain.
    pub fn at_gain(&self, gain: f64) -> Result<Self> {
        Self::with_gain(self.samples.clone(), self.sample_rate, gain)
    }

    /// Samples after gain, clipped to `[-1, 1]`.
    pub fn effective_samples(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| (s * self.gain).clamp(-1.0, 1.0))
            .collect()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Framing and filterbank parameters for log-mel statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Energy reference inside `ln(1 + E / energy_ref)`.
    pub energy_ref: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 256,
            n_mels: 8,
            energy_ref: 1e-2,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters with `n_mels + 2` edges evenly spaced in mel between 0
/// and Nyquist. Returns `n_mels` rows of `frame_len / 2 + 1` bin weights.
pub fn mel_filterbank(config: &MelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = config.frame_len / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    (0..config.n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / config.frame_len as f64;
                    let w = if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    };
                    w.max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Per-frame log-mel energies `ln(1 + E[t, m] / energy_ref)` of the gained clip.
///
/// Frames use a periodic Hann window and power `|X_k|² / frame_len`. Clips
/// shorter than one frame are zero-padded to a single frame.
pub fn log_mel_frames(clip: &AudioClip, config: &MelConfig) -> Vec<Vec<f64>> {
    let samples = clip.effective_samples();
    let n = config.frame_len;
    let n_frames = if samples.len() <= n {
        1
    } else {
        1 + (samples.len() - n) / config.hop
    };
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos()))
        .collect();
    let bank = mel_filterbank(config, clip.sample_rate());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    (0..n_frames)
        .map(|t| {
            let start = t * config.hop;
            for (i, slot) in buf.iter_mut().enumerate() {
                let s = samples.get(start + i).copied().unwrap_or(0.0);
                *slot = Complex::new(s * window[i], 0.0);
            }
            fft.process(&mut buf);
            let power: Vec<f64> = buf[..n / 2 + 1]
                .iter()
                .map(|c| c.norm_sqr() / n as f64)
                .collect();
            bank.iter()
                .map(|w| {
                    let e: f64 = w.iter().zip(&power).map(|(a, b)| a * b).sum();
                    (1.0 + e / config.energy_ref).ln()
                })
                .collect()
        })
        .collect()
}

/// Clip-level statistics: per-band mean over frames followed by per-band max.
pub fn log_mel_statistics(clip: &AudioClip, config: &MelConfig) -> Vec<f64> {
    let frames = log_mel_frames(clip, config);
    let t = frames.len() as f64;
    let mut means = vec![0.0; config.n_mels];
    let mut maxes = vec![0.0f64; config.n_mels];
    for frame in &frames {
        for (m, v) in frame.iter().enumerate() {
            means[m] += v / t;
            maxes[m] = maxes[m].max(*v);
        }
    }
    means.extend(maxes);
    means
}

/// A pure tone `amplitude · sin(2π f t)`.
pub fn tone(freq_hz: f64, amplitude: f64, sample_rate: u32, n_samples: usize) -> Result<AudioClip> {
    let samples = (0..n_samples)
        .map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / sample_rate as f64).sin())
        .collect();
    AudioClip::new(samples, sample_rate)
}
