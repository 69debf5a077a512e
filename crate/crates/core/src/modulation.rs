//! Spectrotemporal modulation (STM) power spectrum of a cochleagram.

use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{self, Chunk, SegmenterConfig};
use crate::cochleagram::{Cochleagram, CochleagramAnalyzer, Filterbank, BANDS_PER_OCTAVE};
use crate::error::{Error, Result};

/// Floor added to modulation power before taking dB.
pub const POWER_EPS: f64 = 1e-20;
pub const TEMPORAL_BINS: usize = 121;
pub const SPECTRAL_BINS: usize = 20;
pub const N_FEATURES: usize = TEMPORAL_BINS * SPECTRAL_BINS;
pub const TEMPORAL_STEP_HZ: f64 = 0.25;
pub const SPECTRAL_STEP_CYC_OCT: f64 = 0.375;

const EXPECTED_BANDS: usize = 128;
const EXPECTED_FRAMES: usize = 400;
const EXPECTED_ENV_RATE: u32 = 100;
/// Largest |k| kept on the temporal axis (60 * 0.25 Hz = 15 Hz).
const MAX_TEMPORAL_INDEX: i64 = 60;
/// Every second native spectral bin is kept.
const SPECTRAL_DECIMATION: usize = 2;

/// Axes of the cropped STM grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StmGrid {
    /// Temporal modulation in Hz, ascending from -15 to 15.
    pub temporal_axis: Vec<f64>,
    /// Spectral modulation in cycles/octave, ascending from 0.
    pub spectral_axis: Vec<f64>,
}

impl Default for StmGrid {
    fn default() -> Self {
        let temporal_axis = (-MAX_TEMPORAL_INDEX..=MAX_TEMPORAL_INDEX)
            .map(|k| k as f64 * TEMPORAL_STEP_HZ)
            .collect();
        let spectral_axis = (0..SPECTRAL_BINS).map(|m| m as f64 * SPECTRAL_STEP_CYC_OCT).collect();
        Self {
            temporal_axis,
            spectral_axis,
        }
    }
}

impl StmGrid {
    pub fn n_features(&self) -> usize {
        self.temporal_axis.len() * self.spectral_axis.len()
    }

    /// Flat feature index of (temporal, spectral) bin, temporal-major.
    pub fn index(&self, t_idx: usize, s_idx: usize) -> usize {
        t_idx * self.spectral_axis.len() + s_idx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StmSpectrum {
    /// `TEMPORAL_BINS x SPECTRAL_BINS`, temporal-major.
    pub power_db: Vec<f64>,
    pub normalized: bool,
}

impl StmSpectrum {
    pub fn get(&self, t_idx: usize, s_idx: usize) -> f64 {
        self.power_db[t_idx * SPECTRAL_BINS + s_idx]
    }

    pub fn grid(&self) -> StmGrid {
        StmGrid::default()
    }
}

/// Uncropped 2-D power spectrum `|F(k, m)|^2` of a cochleagram, indexed
/// `[m * n_frames + k]` with `m` the band-axis frequency and `k` the time-axis
/// frequency, both in standard DFT order.
pub fn power_spectrum_2d(c: &Cochleagram) -> Vec<f64> {
    let (nb, nf) = (c.n_bands, c.n_frames);
    let mut planner = FftPlanner::<f64>::new();
    let time_fft = planner.plan_fft_forward(nf);
    let band_fft = planner.plan_fft_forward(nb);

    let mut rows: Vec<Complex64> = c.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in rows.chunks_exact_mut(nf) {
        time_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); nb];
    let mut power = vec![0.0; nb * nf];
    for k in 0..nf {
        for (x, slot) in column.iter_mut().enumerate() {
            *slot = rows[x * nf + k];
        }
        band_fft.process(&mut column);
        for (m, v) in column.iter().enumerate() {
            power[m * nf + k] = v.norm_sqr();
        }
    }
    power
}

/// Cropped STM in dB: temporal |k| <= 60 (0.25 Hz steps), spectral bins
/// 0, 2, .., 38 of the native 24/128 cyc/oct grid.
pub fn stm(c: &Cochleagram) -> Result<StmSpectrum> {
    if c.n_bands != EXPECTED_BANDS || c.n_frames != EXPECTED_FRAMES || c.env_rate != EXPECTED_ENV_RATE {
        return Err(Error::shape(
            format!("{EXPECTED_BANDS}x{EXPECTED_FRAMES} at {EXPECTED_ENV_RATE} Hz"),
            format!("{}x{} at {} Hz", c.n_bands, c.n_frames, c.env_rate),
        ));
    }
    let nf = c.n_frames as i64;
    let power = power_spectrum_2d(c);
    let mut power_db = Vec::with_capacity(N_FEATURES);
    for k in -MAX_TEMPORAL_INDEX..=MAX_TEMPORAL_INDEX {
        let col = k.rem_euclid(nf) as usize;
        for s in 0..SPECTRAL_BINS {
            let m = s * SPECTRAL_DECIMATION;
            power_db.push(10.0 * (power[m * c.n_frames + col] + POWER_EPS).log10());
        }
    }
    Ok(StmSpectrum {
        power_db,
        normalized: false,
    })
}

/// Native spectral modulation resolution of the band axis in cyc/oct.
pub fn native_spectral_step(n_bands: usize) -> f64 {
    BANDS_PER_OCTAVE / n_bands as f64
}

pub fn average_stm(spectra: &[StmSpectrum]) -> Result<StmSpectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot average zero spectra".into()))?;
    if spectra.iter().any(|s| s.normalized) {
        return Err(Error::InvalidInput("average_stm expects unnormalized spectra".into()));
    }
    if spectra.iter().any(|s| s.power_db.len() != first.power_db.len()) {
        return Err(Error::shape(first.power_db.len(), "mixed grid sizes"));
    }
    let rows: Vec<&[f64]> = spectra.iter().map(|s| s.power_db.as_slice()).collect();
    Ok(StmSpectrum {
        power_db: mean_rows(&rows),
        normalized: false,
    })
}

pub fn normalize(s: &StmSpectrum) -> StmSpectrum {
    StmSpectrum {
        power_db: min_max_scale(&s.power_db),
        normalized: true,
    }
}

/// Element-wise mean of equally long rows, summed in row order.
pub(crate) fn mean_rows(rows: &[&[f64]]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut acc = vec![0.0; rows[0].len()];
    for row in rows {
        for (a, &v) in acc.iter_mut().zip(row.iter()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// `(x - min) / (max - min)`; a constant input maps to all zeros.
pub fn min_max_scale(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / range).collect()
}

/// Per-recording feature vector and the number of chunks that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct FileFeatures {
    pub features: Vec<f64>,
    pub n_chunks: usize,
}

/// Load, resample and segment a file into gated analysis chunks.
pub fn prepare_chunks(path: &Path, segmenter: &SegmenterConfig) -> Result<Vec<Chunk>> {
    let wave = audio_io::load_audio(path)?;
    let wave = audio_io::resample(&wave, segmenter.target_rate)?;
    let chunks = audio_io::segment(&wave, segmenter)?;
    if chunks.is_empty() {
        return Err(Error::NoChunks(path.to_path_buf()));
    }
    Ok(chunks)
}

/// Turns gated chunks into one fixed-width per-recording feature vector.
pub trait ChunkFeatures {
    fn width(&self) -> usize;

    /// Unnormalized features of one chunk (dB domain).
    fn chunk_features(&self, chunk: &Chunk) -> Result<Vec<f64>>;

    /// Chunk features averaged then min-max scaled to [0, 1].
    fn recording_features(&self, chunks: &[Chunk]) -> Result<FileFeatures> {
        if chunks.is_empty() {
            return Err(Error::InvalidInput("no chunks to average".into()));
        }
        let per_chunk = chunks
            .iter()
            .map(|c| self.chunk_features(c))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<&[f64]> = per_chunk.iter().map(Vec::as_slice).collect();
        Ok(FileFeatures {
            features: min_max_scale(&mean_rows(&rows)),
            n_chunks: chunks.len(),
        })
    }
}

/// STM feature extractor: cochleagram, 2-D modulation spectrum, crop.
#[derive(Debug)]
pub struct StmExtractor {
    analyzer: CochleagramAnalyzer,
}

impl StmExtractor {
    pub fn new(fb: Filterbank, segmenter: &SegmenterConfig, env_rate: u32) -> Result<Self> {
        segmenter.validate()?;
        let analyzer = CochleagramAnalyzer::new(fb, segmenter.target_rate, segmenter.chunk_len(), env_rate)?;
        Ok(Self { analyzer })
    }

    pub fn analyzer(&self) -> &CochleagramAnalyzer {
        &self.analyzer
    }

    pub fn chunk_stm(&self, chunk: &Chunk) -> Result<StmSpectrum> {
        stm(&self.analyzer.analyze(&chunk.wave)?)
    }
}

impl ChunkFeatures for StmExtractor {
    fn width(&self) -> usize {
        N_FEATURES
    }

    fn chunk_features(&self, chunk: &Chunk) -> Result<Vec<f64>> {
        Ok(self.chunk_stm(chunk)?.power_db)
    }
}

/// Full STM path for one file: load, resample, gate, analyze, average,
/// normalize and flatten (temporal-major).
pub fn extract_file(path: impl AsRef<Path>, segmenter: &SegmenterConfig, fb: &Filterbank) -> Result<FileFeatures> {
    let extractor = StmExtractor::new(fb.clone(), segmenter, crate::cochleagram::DEFAULT_ENV_RATE)?;
    let chunks = prepare_chunks(path.as_ref(), segmenter)?;
    extractor.recording_features(&chunks)
}
