//! Synthetic test signals and the three-class modulation corpus.
//!
//! All carriers are Gaussian noise shaped in the frequency domain so that
//! every cochlear band receives the same expected power; modulations are
//! then added on top in dB so that they land on isolated STM bins.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::{write_wav_i16, Waveform};
use crate::cochleagram::{bandwidth, BANDS_PER_OCTAVE, DEFAULT_BANDS};
use crate::dataset::{write_labels, ClassLabel, LabelEntry};
use crate::error::{Error, Result};

/// Carriers carry no energy below this frequency.
const LOW_CUT_HZ: f64 = 50.0;
const TARGET_RMS: f64 = 0.1;

/// Continuous band coordinate of `f`: 0 at the lowest band's centre, one unit
/// per band.
fn band_position(f: f64) -> f64 {
    BANDS_PER_OCTAVE * (f / 440.0).log2() + 31.0
}

/// Hermitian spectrum of Gaussian noise with gain `gain_db(f)` on top of a
/// level that is flat per cochlear band (power proportional to 1/bandwidth).
fn shaped_spectrum(n: usize, sample_rate: u32, rng: &mut impl Rng, gain_db: impl Fn(f64) -> f64) -> Vec<Complex64> {
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    let bin_hz = sample_rate as f64 / n as f64;
    for k in 1..n.div_ceil(2) {
        let f = k as f64 * bin_hz;
        let (re, im): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        if f < LOW_CUT_HZ {
            continue;
        }
        let amp = 10f64.powf(gain_db(f) / 20.0) / bandwidth(f).sqrt();
        spec[k] = Complex64::new(re, im) * amp;
        spec[n - k] = spec[k].conj();
    }
    spec
}

fn real_ifft(mut spec: Vec<Complex64>) -> Vec<f64> {
    FftPlanner::new().plan_fft_inverse(spec.len()).process(&mut spec);
    spec.iter().map(|c| c.re).collect()
}

/// Gaussian noise shaped by `gain_db(f)`, flat per cochlear band.
pub fn shaped_noise(n: usize, sample_rate: u32, rng: &mut impl Rng, gain_db: impl Fn(f64) -> f64) -> Vec<f64> {
    real_ifft(shaped_spectrum(n, sample_rate, rng, gain_db))
}

/// A sinusoidal dB pattern over log frequency and time:
/// `depth_db * sin(2 pi (density * octaves + rate * t) + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ripple {
    pub density: f64,
    pub rate: f64,
    pub depth_db: f64,
    pub phase: f64,
}

impl Ripple {
    fn db(&self, band_pos: f64, t: f64) -> f64 {
        self.depth_db * (2.0 * PI * (self.density * band_pos / BANDS_PER_OCTAVE + self.rate * t) + self.phase).sin()
    }
}

/// Subband spacing (in cochlear bands) used to impose time-varying ripples.
const SUBBAND_STEP: f64 = 2.0;
/// Subband gains are evaluated every this many samples and interpolated.
const GAIN_STEP: usize = 16;

/// Imposes moving `ripples` on the noise spectrum `spec` by splitting it into
/// overlapping log-frequency subbands (raised-cosine weights that sum to one)
/// and modulating each subband with the ripple gain at its centre.
fn moving_ripple_signal(spec: &[Complex64], sample_rate: u32, ripples: &[Ripple]) -> Vec<f64> {
    let n = spec.len();
    let bin_hz = sample_rate as f64 / n as f64;
    let first = -2.0 * SUBBAND_STEP;
    let last = DEFAULT_BANDS as f64 + 2.0 * SUBBAND_STEP;
    let centres: Vec<f64> = (0..)
        .map(|j| first + j as f64 * SUBBAND_STEP)
        .take_while(|&c| c <= last)
        .collect();
    let weight = |j: usize, pos: f64| -> f64 {
        let c = centres[j];
        if (j == 0 && pos <= c) || (j + 1 == centres.len() && pos >= c) {
            return 1.0;
        }
        let d = (pos - c) / SUBBAND_STEP;
        if d.abs() < 1.0 {
            (0.5 * PI * d).cos().powi(2)
        } else {
            0.0
        }
    };
    let positions: Vec<f64> = (0..=n / 2).map(|k| band_position((k as f64 * bin_hz).max(1e-9))).collect();

    let n_coarse = n / GAIN_STEP + 2;
    let mut out = vec![0.0; n];
    let mut fft_buf = vec![Complex64::new(0.0, 0.0); n];
    let inverse = FftPlanner::new().plan_fft_inverse(n);
    // Two real subband signals share one complex inverse FFT.
    for pair in (0..centres.len()).collect::<Vec<_>>().chunks(2) {
        fft_buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for (slot, &j) in pair.iter().enumerate() {
            let rot = if slot == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
            for k in 1..n.div_ceil(2) {
                let w = weight(j, positions[k]);
                if w > 0.0 && spec[k] != Complex64::new(0.0, 0.0) {
                    fft_buf[k] += rot * spec[k] * w;
                    fft_buf[n - k] += rot * spec[n - k] * w;
                }
            }
        }
        inverse.process(&mut fft_buf);
        for (slot, &j) in pair.iter().enumerate() {
            let gains: Vec<f64> = (0..n_coarse)
                .map(|i| {
                    let t = (i * GAIN_STEP) as f64 / sample_rate as f64;
                    10f64.powf(ripples.iter().map(|r| r.db(centres[j], t)).sum::<f64>() / 20.0)
                })
                .collect();
            for (i, o) in out.iter_mut().enumerate() {
                let (q, r) = (i / GAIN_STEP, (i % GAIN_STEP) as f64 / GAIN_STEP as f64);
                let g = gains[q] + (gains[q + 1] - gains[q]) * r;
                let v = if slot == 0 { fft_buf[i].re } else { fft_buf[i].im };
                *o += g * v;
            }
        }
    }
    out
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Noise with sinusoidal amplitude modulation `1 + depth * sin(2 pi rate t)`.
pub fn am_noise(rate_hz: f64, depth: f64, duration: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if !(0.0..=1.0).contains(&depth) || rate_hz < 0.0 {
        return Err(Error::InvalidInput(format!("bad AM parameters rate={rate_hz} depth={depth}")));
    }
    let n = (duration * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = shaped_noise(n, sample_rate, &mut rng, |_| 0.0);
    for (i, v) in x.iter_mut().enumerate() {
        *v *= 1.0 + depth * (2.0 * PI * rate_hz * i as f64 / sample_rate as f64).sin();
    }
    scale_to_rms(&mut x, TARGET_RMS);
    Waveform::new(x, sample_rate)
}

/// Stationary noise with a sinusoidal ripple of `density` cycles per octave
/// and `depth_db` peak deviation across log frequency.
pub fn ripple_noise(density: f64, depth_db: f64, duration: f64, sample_rate: u32, seed: u64) -> Result<Waveform> {
    if density < 0.0 || depth_db < 0.0 {
        return Err(Error::InvalidInput(format!("bad ripple parameters density={density} depth={depth_db}")));
    }
    let n = (duration * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = shaped_noise(n, sample_rate, &mut rng, |f| {
        depth_db * (2.0 * PI * density * band_position(f) / BANDS_PER_OCTAVE).sin()
    });
    scale_to_rms(&mut x, TARGET_RMS);
    Waveform::new(x, sample_rate)
}

/// Parameters of the synthetic corpus. Each class gets `groups_per_class`
/// groups of `clips_per_group` clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub groups_per_class: usize,
    pub clips_per_group: usize,
    pub duration: f64,
    pub sample_rate: u32,
    /// Slow AM rates (Hz), all present in every speech-like clip.
    pub am_rates: Vec<f64>,
    /// Ripple densities (cyc/oct) of the music-like class.
    pub ripple_densities: Vec<f64>,
    /// Ripple drift rates (Hz); every density/rate pair is present in every
    /// music-like clip.
    pub ripple_rates: Vec<f64>,
    /// Peak deviation range (dB) of each class-defining component.
    pub class_depth_db: (f64, f64),
    /// Nuisance AM rate range (Hz) applied to every clip.
    pub nuisance_rates: (f64, f64),
    /// Nuisance ripple density range (cyc/oct) applied to every clip.
    pub nuisance_densities: (f64, f64),
    pub nuisance_depth_db: (f64, f64),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 20240,
            groups_per_class: 20,
            clips_per_group: 10,
            duration: 4.0,
            sample_rate: 16000,
            am_rates: vec![0.25, 0.5, 0.75, 1.0],
            ripple_densities: vec![0.375, 0.75],
            ripple_rates: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            class_depth_db: (1.5, 3.0),
            nuisance_rates: (5.0, 12.0),
            nuisance_densities: (2.0, 7.0),
            nuisance_depth_db: (2.0, 6.0),
        }
    }
}

/// Corpus classes and their file-name stems.
pub const CORPUS_CLASSES: [(ClassLabel, &str); 3] = [
    (ClassLabel::NontonalSpeech, "speech_like"),
    (ClassLabel::NonvocalMusic, "music_like"),
    (ClassLabel::UrbanEnv, "env_like"),
];

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo >= 0.0 && hi >= lo;
        let ok = self.groups_per_class >= 1
            && self.clips_per_group >= 1
            && self.duration > 0.0
            && self.sample_rate > 0
            && !self.am_rates.is_empty()
            && !self.ripple_densities.is_empty()
            && !self.ripple_rates.is_empty()
            && range_ok(self.class_depth_db)
            && range_ok(self.nuisance_rates)
            && range_ok(self.nuisance_densities)
            && range_ok(self.nuisance_depth_db);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid corpus config {self:?}")))
        }
    }

    pub fn n_clips(&self) -> usize {
        CORPUS_CLASSES.len() * self.groups_per_class * self.clips_per_group
    }
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// One corpus clip. `class` indexes [`CORPUS_CLASSES`]; the clip is fully
/// determined by the config seed and `(class, group, clip)`.
pub fn corpus_clip(cfg: &CorpusConfig, class: usize, group: usize, clip: usize) -> Result<Waveform> {
    let index = (class * cfg.groups_per_class + group) * cfg.clips_per_group + clip;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let n = (cfg.duration * cfg.sample_rate as f64).round() as usize;
    let phase = |rng: &mut ChaCha8Rng| rng.gen_range(0.0..2.0 * PI);

    // Nuisance modulation shared by all classes: one fast AM and one static
    // dense ripple, outside the slow region that carries the class.
    let nuisance_ripple = Ripple {
        density: uniform(&mut rng, cfg.nuisance_densities),
        rate: 0.0,
        depth_db: uniform(&mut rng, cfg.nuisance_depth_db),
        phase: phase(&mut rng),
    };
    let mut ams = vec![(uniform(&mut rng, cfg.nuisance_rates), uniform(&mut rng, cfg.nuisance_depth_db), phase(&mut rng))];
    let mut moving = Vec::new();
    match CORPUS_CLASSES.get(class).map(|c| c.0) {
        Some(ClassLabel::NontonalSpeech) => {
            for &rate in &cfg.am_rates {
                ams.push((rate, uniform(&mut rng, cfg.class_depth_db), phase(&mut rng)));
            }
        }
        Some(ClassLabel::NonvocalMusic) => {
            for &density in &cfg.ripple_densities {
                for &rate in &cfg.ripple_rates {
                    moving.push(Ripple {
                        density,
                        rate,
                        depth_db: uniform(&mut rng, cfg.class_depth_db),
                        phase: phase(&mut rng),
                    });
                }
            }
        }
        Some(_) => {}
        None => return Err(Error::InvalidInput(format!("corpus class index {class} out of range"))),
    }

    let spec = shaped_spectrum(n, cfg.sample_rate, &mut rng, |f| nuisance_ripple.db(band_position(f), 0.0));
    let mut x = if moving.is_empty() {
        real_ifft(spec)
    } else {
        moving_ripple_signal(&spec, cfg.sample_rate, &moving)
    };
    let sr = cfg.sample_rate as f64;
    for (i, v) in x.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let db: f64 = ams.iter().map(|&(r, a, p)| a * (2.0 * PI * r * t + p).sin()).sum();
        *v *= 10f64.powf(db / 20.0);
    }
    scale_to_rms(&mut x, TARGET_RMS);
    Waveform::new(x, cfg.sample_rate)
}

/// Writes every corpus clip as 16-bit WAV under `dir` plus `dir/labels.csv`
/// with paths relative to `dir`. Returns the label entries.
pub fn write_corpus(dir: impl AsRef<Path>, cfg: &CorpusConfig) -> Result<Vec<LabelEntry>> {
    cfg.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(cfg.n_clips());
    for (c, (label, stem)) in CORPUS_CLASSES.iter().enumerate() {
        for g in 0..cfg.groups_per_class {
            for k in 0..cfg.clips_per_group {
                let name = format!("{stem}_g{g:02}_{k:02}.wav");
                write_wav_i16(dir.join(&name), &corpus_clip(cfg, c, g, k)?)?;
                entries.push(LabelEntry {
                    path: name,
                    label: *label,
                    group: format!("{stem}_g{g:02}"),
                });
            }
        }
    }
    write_labels(dir.join("labels.csv"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clips_are_deterministic_and_scaled() {
        let cfg = CorpusConfig::default();
        let a = corpus_clip(&cfg, 1, 3, 2).unwrap();
        let b = corpus_clip(&cfg, 1, 3, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, corpus_clip(&cfg, 1, 3, 3).unwrap());
        assert_eq!(a.len(), 64000);
        let rms = (a.samples.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - TARGET_RMS).abs() < 1e-12);
    }

    #[test]
    fn am_noise_envelope_follows_modulator() {
        let w = am_noise(2.0, 0.8, 2.0, 8000, 1).unwrap();
        // Mean power over the modulator's peak and trough quarter-cycles.
        let power = |start: usize| w.samples[start..start + 500].iter().map(|v| v * v).sum::<f64>();
        assert!(power(750) > 10.0 * power(2750));
        assert!(am_noise(2.0, 1.5, 1.0, 8000, 1).is_err());
    }

    #[test]
    fn unmodulated_subbands_sum_to_carrier() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = shaped_spectrum(8000, 16000, &mut rng, |_| 0.0);
        let direct = real_ifft(spec.clone());
        let split = moving_ripple_signal(&spec, 16000, &[]);
        let peak = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in direct.iter().zip(&split) {
            assert!((a - b).abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn config_validation() {
        assert!(CorpusConfig::default().validate().is_ok());
        assert_eq!(CorpusConfig::default().n_clips(), 600);
        let bad = CorpusConfig {
            nuisance_rates: (5.0, 1.0),
            ..CorpusConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn band_position_matches_filterbank() {
        for x in [1, 32, 128] {
            let pos = band_position(crate::cochleagram::center_frequency(x));
            assert!((pos - (x as f64 - 1.0)).abs() < 1e-9);
        }
    }
}
