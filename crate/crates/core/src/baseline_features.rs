//! Melspectrogram baseline features.
//!
//! Centered, reflect-padded STFT with a periodic Hann window, Slaney-style mel
//! filterbank with area-normalized triangles, and `10*log10(power + 1e-10)`.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::{Chunk, Waveform};
use crate::error::{Error, Result};
use crate::modulation::ChunkFeatures;

pub const MEL_DB_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub n_mels: usize,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub fmin: f64,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 32,
            n_fft: 2048,
            hop: 1024,
            sample_rate: 16_000,
            fmin: 0.0,
            fmax: 8000.0,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.n_fft > self.hop && self.hop > 0) {
            return Err(Error::Config("mel: need n_fft > hop > 0".into()));
        }
        if self.n_mels == 0 {
            return Err(Error::Config("mel: n_mels must be >= 1".into()));
        }
        if !(self.fmax > self.fmin && self.fmin >= 0.0) || self.sample_rate == 0 {
            return Err(Error::Config("mel: need 0 <= fmin < fmax and a positive rate".into()));
        }
        Ok(())
    }

    /// Frame count for centered framing of `n` samples.
    pub fn n_frames(&self, n: usize) -> usize {
        1 + n / self.hop
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn log_step() -> f64 {
    6.4f64.ln() / 27.0
}

pub fn hz_to_mel(hz: f64) -> f64 {
    if hz >= MIN_LOG_HZ {
        MIN_LOG_MEL + (hz / MIN_LOG_HZ).ln() / log_step()
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    if mel >= MIN_LOG_MEL {
        MIN_LOG_HZ * (log_step() * (mel - MIN_LOG_MEL)).exp()
    } else {
        F_SP * mel
    }
}

/// Band edges in Hz: `n_mels + 2` points evenly spaced on the mel scale.
pub fn mel_edges(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    let n = cfg.n_mels + 2;
    (0..n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
        .collect()
}

/// `n_mels x (n_fft/2 + 1)` weights, row-major.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let edges = mel_edges(cfg);
    let fft_freqs: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * cfg.sample_rate as f64 / cfg.n_fft as f64)
        .collect();
    (0..cfg.n_mels)
        .map(|i| {
            let (l, c, r) = (edges[i], edges[i + 1], edges[i + 2]);
            let enorm = 2.0 / (r - l);
            fft_freqs
                .iter()
                .map(|&f| {
                    let lower = (f - l) / (c - l);
                    let upper = (r - f) / (r - c);
                    lower.min(upper).max(0.0) * enorm
                })
                .collect()
        })
        .collect()
}

pub struct MelExtractor {
    cfg: MelConfig,
    chunk_len: usize,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor")
            .field("cfg", &self.cfg)
            .field("chunk_len", &self.chunk_len)
            .finish()
    }
}

impl MelExtractor {
    pub fn new(cfg: MelConfig, chunk_len: usize) -> Result<Self> {
        cfg.validate()?;
        if chunk_len <= cfg.n_fft / 2 {
            return Err(Error::Config("mel: chunk too short for reflect padding".into()));
        }
        let n = cfg.n_fft;
        let window = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
        let filters = mel_filterbank(&cfg);
        let fft = FftPlanner::new().plan_fft_forward(n);
        Ok(Self {
            cfg,
            chunk_len,
            window,
            filters,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn n_frames(&self) -> usize {
        self.cfg.n_frames(self.chunk_len)
    }

    /// Mel power in dB, `n_frames x n_mels`, frame-major.
    pub fn melspectrogram(&self, chunk: &Waveform) -> Result<Vec<f64>> {
        if chunk.len() != self.chunk_len || chunk.sample_rate != self.cfg.sample_rate {
            return Err(Error::shape(
                format!("{} samples at {} Hz", self.chunk_len, self.cfg.sample_rate),
                format!("{} samples at {} Hz", chunk.len(), chunk.sample_rate),
            ));
        }
        let x = &chunk.samples;
        let n = x.len() as isize;
        let pad = (self.cfg.n_fft / 2) as isize;
        let reflect = |i: isize| -> f64 {
            let j = if i < 0 {
                -i
            } else if i >= n {
                2 * (n - 1) - i
            } else {
                i
            };
            x[j as usize]
        };
        let n_bins = self.cfg.n_fft / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.cfg.n_fft];
        let mut power = vec![0.0; n_bins];
        let mut out = Vec::with_capacity(self.n_frames() * self.cfg.n_mels);
        for frame in 0..self.n_frames() {
            let start = (frame * self.cfg.hop) as isize - pad;
            for (j, (b, &w)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = Complex64::new(reflect(start + j as isize) * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for filter in &self.filters {
                let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                out.push(10.0 * (e + MEL_DB_EPS).log10());
            }
        }
        Ok(out)
    }
}

impl ChunkFeatures for MelExtractor {
    fn width(&self) -> usize {
        self.n_frames() * self.cfg.n_mels
    }

    fn chunk_features(&self, chunk: &Chunk) -> Result<Vec<f64>> {
        self.melspectrogram(&chunk.wave)
    }
}

/// Normalized melspectrogram vector of a single chunk.
pub fn melspectrogram(chunk: &Waveform, cfg: &MelConfig) -> Result<Vec<f64>> {
    let ex = MelExtractor::new(cfg.clone(), chunk.len())?;
    let chunk = Chunk {
        offset: 0,
        wave: chunk.clone(),
    };
    Ok(ex.recording_features(std::slice::from_ref(&chunk))?.features)
}
