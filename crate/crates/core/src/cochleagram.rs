//! Gaussian filter-Hilbert cochleagram.
//!
//! Each band is obtained by weighting the one-sided (analytic) spectrum of a
//! chunk with a Gaussian centred on the band's CF; the magnitude of the
//! inverse transform is the band envelope. Envelopes are converted to dB and
//! then band-limited and decimated to the envelope rate in the DFT domain.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio_io::Waveform;
use crate::error::{Error, Result};

/// Floor added to the linear envelope before taking dB.
pub const ENV_EPS: f64 = 1e-10;
const DB_PER_NEPER: f64 = 20.0 / std::f64::consts::LN_10;
pub const BANDS_PER_OCTAVE: f64 = 24.0;
pub const DEFAULT_BANDS: usize = 128;
pub const DEFAULT_ENV_RATE: u32 = 100;
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_CHUNK_LEN: usize = 64_000;

/// Gaussian weights below `exp(-TRUNCATE_SIGMAS^2 / 2)` are treated as zero.
const TRUNCATE_SIGMAS: f64 = 10.0;

/// Centre frequency in Hz of band `x` (1-based).
pub fn center_frequency(x: usize) -> f64 {
    440.0 * 2f64.powf((x as f64 - 32.0) / BANDS_PER_OCTAVE)
}

/// Full width at half maximum in Hz of a band centred at `cf` Hz.
pub fn bandwidth(cf: f64) -> f64 {
    24.7 * (cf * 4.37 / 1000.0 + 1.0)
}

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_3; // 2 * sqrt(2 ln 2)

#[derive(Debug, Clone, PartialEq)]
pub struct Filterbank {
    pub center_freqs: Vec<f64>,
    pub fwhm: Vec<f64>,
}

impl Filterbank {
    pub fn n_bands(&self) -> usize {
        self.center_freqs.len()
    }

    /// Standard deviation in Hz of band `i` (0-based).
    pub fn sigma(&self, i: usize) -> f64 {
        self.fwhm[i] / FWHM_TO_SIGMA
    }

    /// Gain of band `i` (0-based) at frequency `f` Hz.
    pub fn gain(&self, i: usize, f: f64) -> f64 {
        let z = (f - self.center_freqs[i]) / self.sigma(i);
        (-0.5 * z * z).exp()
    }
}

impl Default for Filterbank {
    fn default() -> Self {
        make_filterbank(DEFAULT_BANDS).expect("default band count is valid")
    }
}

pub fn make_filterbank(n_bands: usize) -> Result<Filterbank> {
    if n_bands == 0 {
        return Err(Error::InvalidInput("filterbank needs at least one band".into()));
    }
    let center_freqs: Vec<f64> = (1..=n_bands).map(center_frequency).collect();
    let fwhm = center_freqs.iter().map(|&cf| bandwidth(cf)).collect();
    Ok(Filterbank { center_freqs, fwhm })
}

/// Band × time matrix of dB envelopes, stored row-major by band.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochleagram {
    pub values: Vec<f64>,
    pub n_bands: usize,
    pub n_frames: usize,
    pub env_rate: u32,
}

impl Cochleagram {
    pub fn from_values(values: Vec<f64>, n_bands: usize, n_frames: usize, env_rate: u32) -> Result<Self> {
        if values.len() != n_bands * n_frames {
            return Err(Error::shape(
                format!("{n_bands}x{n_frames}"),
                format!("{} values", values.len()),
            ));
        }
        Ok(Self {
            values,
            n_bands,
            n_frames,
            env_rate,
        })
    }

    pub fn band(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_frames..(i + 1) * self.n_frames]
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }
}

struct BandWindow {
    first_bin: usize,
    /// Gaussian gain with the inverse-FFT `1/N` folded in.
    weights: Vec<f64>,
}

/// Reusable analysis state: FFT plans and tabulated band windows for one
/// (sample rate, chunk length, envelope rate) combination.
pub struct CochleagramAnalyzer {
    fb: Filterbank,
    sample_rate: u32,
    chunk_len: usize,
    env_rate: u32,
    n_frames: usize,
    windows: Vec<BandWindow>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    env_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for CochleagramAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CochleagramAnalyzer")
            .field("n_bands", &self.fb.n_bands())
            .field("sample_rate", &self.sample_rate)
            .field("chunk_len", &self.chunk_len)
            .field("env_rate", &self.env_rate)
            .finish()
    }
}

impl CochleagramAnalyzer {
    pub fn new(fb: Filterbank, sample_rate: u32, chunk_len: usize, env_rate: u32) -> Result<Self> {
        if sample_rate == 0 || env_rate == 0 || chunk_len == 0 {
            return Err(Error::InvalidInput("rates and chunk length must be positive".into()));
        }
        let frames = chunk_len as u64 * env_rate as u64;
        if !frames.is_multiple_of(sample_rate as u64) || !chunk_len.is_multiple_of(2) {
            return Err(Error::InvalidInput(format!(
                "chunk of {chunk_len} samples at {sample_rate} Hz is not a whole number of {env_rate} Hz frames"
            )));
        }
        let n_frames = (frames / sample_rate as u64) as usize;
        if n_frames < 2 || !n_frames.is_multiple_of(2) || env_rate >= sample_rate {
            return Err(Error::InvalidInput("envelope rate must give an even frame count below the audio rate".into()));
        }

        let half = chunk_len / 2;
        let bin_hz = sample_rate as f64 / chunk_len as f64;
        let windows = (0..fb.n_bands())
            .map(|i| {
                let (cf, sd) = (fb.center_freqs[i], fb.sigma(i));
                let lo = ((cf - TRUNCATE_SIGMAS * sd) / bin_hz).ceil().max(0.0) as usize;
                let hi = (((cf + TRUNCATE_SIGMAS * sd) / bin_hz).floor().max(0.0) as usize).min(half);
                let weights = if lo <= hi {
                    (lo..=hi).map(|k| fb.gain(i, k as f64 * bin_hz) / chunk_len as f64).collect()
                } else {
                    Vec::new()
                };
                BandWindow {
                    first_bin: lo,
                    weights,
                }
            })
            .collect();

        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(chunk_len),
            inverse: planner.plan_fft_inverse(chunk_len),
            env_inverse: planner.plan_fft_inverse(n_frames),
            fb,
            sample_rate,
            chunk_len,
            env_rate,
            n_frames,
            windows,
        })
    }

    pub fn filterbank(&self) -> &Filterbank {
        &self.fb
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    fn check(&self, chunk: &Waveform) -> Result<()> {
        if chunk.sample_rate != self.sample_rate || chunk.len() != self.chunk_len {
            return Err(Error::shape(
                format!("{} samples at {} Hz", self.chunk_len, self.sample_rate),
                format!("{} samples at {} Hz", chunk.len(), chunk.sample_rate),
            ));
        }
        Ok(())
    }

    /// One-sided spectrum: DC and Nyquist kept, positive bins doubled,
    /// negative bins dropped (only bins `0..=N/2` are returned).
    fn analytic_spectrum(&self, chunk: &Waveform) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = chunk.samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        self.forward.process(&mut buf);
        let half = self.chunk_len / 2;
        buf.truncate(half + 1);
        for v in &mut buf[1..half] {
            *v *= 2.0;
        }
        buf
    }

    fn scratch(&self) -> Vec<Complex64> {
        let len = self.inverse.get_inplace_scratch_len().max(self.forward.get_inplace_scratch_len());
        vec![Complex64::new(0.0, 0.0); len]
    }

    fn band_from_spectrum(&self, spectrum: &[Complex64], band: usize, out: &mut Vec<Complex64>, scratch: &mut [Complex64]) {
        out.clear();
        out.resize(self.chunk_len, Complex64::new(0.0, 0.0));
        let w = &self.windows[band];
        for (j, &g) in w.weights.iter().enumerate() {
            let k = w.first_bin + j;
            out[k] = spectrum[k] * g;
        }
        self.inverse.process_with_scratch(out, scratch);
    }

    /// Complex analytic signal of one band (0-based) at the audio rate.
    pub fn analytic_band(&self, chunk: &Waveform, band: usize) -> Result<Vec<Complex64>> {
        self.check(chunk)?;
        if band >= self.fb.n_bands() {
            return Err(Error::InvalidInput(format!("band {band} out of range")));
        }
        let spectrum = self.analytic_spectrum(chunk);
        let mut out = Vec::new();
        self.band_from_spectrum(&spectrum, band, &mut out, &mut self.scratch());
        Ok(out)
    }

    /// Linear envelope of every band at the audio rate (band-major).
    pub fn envelopes(&self, chunk: &Waveform) -> Result<Vec<Vec<f64>>> {
        self.check(chunk)?;
        let spectrum = self.analytic_spectrum(chunk);
        let mut buf = Vec::with_capacity(self.chunk_len);
        let mut scratch = self.scratch();
        Ok((0..self.fb.n_bands())
            .map(|b| {
                self.band_from_spectrum(&spectrum, b, &mut buf, &mut scratch);
                buf.iter().map(|c| c.norm()).collect()
            })
            .collect())
    }

    pub fn analyze(&self, chunk: &Waveform) -> Result<Cochleagram> {
        self.check(chunk)?;
        let n = self.chunk_len;
        let m = self.n_frames;
        let n_bands = self.fb.n_bands();
        let spectrum = self.analytic_spectrum(chunk);
        let mut values = vec![0.0; n_bands * m];
        let mut band_buf = Vec::with_capacity(n);
        let mut packed = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = self.scratch();

        // Two real dB envelopes share one complex FFT (real and imaginary parts).
        let mut b = 0;
        while b < n_bands {
            let pair = (b + 1 < n_bands) as usize + 1;
            for (slot, band) in (b..b + pair).enumerate() {
                self.band_from_spectrum(&spectrum, band, &mut band_buf, &mut scratch);
                // 20 log10(x) via ln, which is markedly cheaper in common libms.
                let db = |c: &Complex64| DB_PER_NEPER * ((c.re * c.re + c.im * c.im).sqrt() + ENV_EPS).ln();
                if slot == 0 {
                    for (p, c) in packed.iter_mut().zip(&band_buf) {
                        *p = Complex64::new(db(c), 0.0);
                    }
                } else {
                    for (p, c) in packed.iter_mut().zip(&band_buf) {
                        p.im = db(c);
                    }
                }
            }
            self.forward.process_with_scratch(&mut packed, &mut scratch);
            for slot in 0..pair {
                let spec = |k: usize| -> Complex64 {
                    let z = packed[k];
                    let zc = packed[(n - k) % n].conj();
                    if slot == 0 {
                        (z + zc) * 0.5
                    } else {
                        (z - zc) * Complex64::new(0.0, -0.5)
                    }
                };
                let row = &mut values[(b + slot) * m..(b + slot + 1) * m];
                self.decimate(spec, row);
            }
            b += pair;
        }
        Cochleagram::from_values(values, n_bands, m, self.env_rate)
    }

    /// Ideal lowpass at half the envelope rate followed by resampling, using
    /// the full-rate DFT `spec(k)` of a real signal.
    fn decimate(&self, spec: impl Fn(usize) -> Complex64, out: &mut [f64]) {
        let (n, m) = (self.chunk_len, self.n_frames);
        let half = m / 2;
        let mut y = vec![Complex64::new(0.0, 0.0); m];
        y[0] = spec(0);
        for k in 1..half {
            let v = spec(k);
            y[k] = v;
            y[m - k] = v.conj();
        }
        // Split the Nyquist bin evenly between +/- half; the result is real.
        y[half] = Complex64::new(spec(half).re, 0.0);
        self.env_inverse.process(&mut y);
        let scale = 1.0 / n as f64;
        for (o, v) in out.iter_mut().zip(&y) {
            *o = v.re * scale;
        }
    }
}

/// Convenience wrapper for one-off analysis at 16 kHz / 4 s chunks.
pub fn analyze(chunk: &Waveform, fb: &Filterbank, env_rate: u32) -> Result<Cochleagram> {
    CochleagramAnalyzer::new(fb.clone(), DEFAULT_SAMPLE_RATE, DEFAULT_CHUNK_LEN, env_rate)?.analyze(chunk)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_centre_frequencies() {
        let fb = make_filterbank(128).unwrap();
        assert_eq!(fb.center_freqs[31], 440.0);
        assert_eq!(fb.center_freqs[127], 7040.0);
        assert!((fb.center_freqs[0] - 179.73).abs() < 0.01);
        assert!((bandwidth(1000.0) - 132.639).abs() < 1e-9);
    }

    #[test]
    fn zero_bands_rejected() {
        assert!(make_filterbank(0).is_err());
    }

    #[test]
    fn gaussian_half_maximum_at_fwhm() {
        let fb = Filterbank::default();
        for i in [0, 40, 127] {
            let cf = fb.center_freqs[i];
            let g = fb.gain(i, cf + fb.fwhm[i] / 2.0);
            assert!((g - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn silence_hits_floor() {
        let chunk = Waveform::new(vec![0.0; DEFAULT_CHUNK_LEN], 16000).unwrap();
        let c = analyze(&chunk, &Filterbank::default(), 100).unwrap();
        assert_eq!((c.n_bands, c.n_frames), (128, 400));
        for &v in &c.values {
            assert!((v + 200.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn wrong_shape_rejected() {
        let fb = Filterbank::default();
        let short = Waveform::new(vec![0.0; 1000], 16000).unwrap();
        assert!(analyze(&short, &fb, 100).is_err());
        let wrong_rate = Waveform::new(vec![0.0; DEFAULT_CHUNK_LEN], 44100).unwrap();
        assert!(analyze(&wrong_rate, &fb, 100).is_err());
        assert!(CochleagramAnalyzer::new(fb.clone(), 16000, 64001, 100).is_err());
        assert!(CochleagramAnalyzer::new(fb, 16000, 64000, 16000).is_err());
    }
}
