//! WAV loading, resampling and segmentation into fixed-length analysis chunks.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub target_rate: u32,
    pub chunk_seconds: f64,
    pub max_seconds: f64,
    pub silence_threshold_db: f64,
    pub silence_frame_seconds: f64,
    pub max_silence_seconds: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            target_rate: 16_000,
            chunk_seconds: 4.0,
            max_seconds: 120.0,
            silence_threshold_db: -50.0,
            silence_frame_seconds: 0.05,
            max_silence_seconds: 1.0,
        }
    }
}

impl SegmenterConfig {
    pub fn chunk_len(&self) -> usize {
        (self.chunk_seconds * self.target_rate as f64).round() as usize
    }

    pub fn frame_len(&self) -> usize {
        (self.silence_frame_seconds * self.target_rate as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.target_rate == 0 {
            return bad("target_rate must be positive");
        }
        if !(self.chunk_seconds > 0.0) {
            return bad("chunk_seconds must be positive");
        }
        if !(self.max_seconds >= self.chunk_seconds) {
            return bad("max_seconds must be >= chunk_seconds");
        }
        if !(self.silence_frame_seconds > 0.0) || !(self.max_silence_seconds >= 0.0) {
            return bad("silence frame and duration must be positive");
        }
        let (chunk, frame) = (self.chunk_len(), self.frame_len());
        if frame == 0 || chunk % frame != 0 {
            return bad("silence_frame_seconds must divide chunk_seconds evenly");
        }
        Ok(())
    }
}

/// Reads a RIFF/WAVE file, mixing all channels down to mono.
///
/// Integer PCM is scaled by `2^(bits-1)` so that full scale maps to [-1, 1].
pub fn load_audio(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(source) => Error::Unreadable {
            path: path.to_path_buf(),
            source,
        },
        other => Error::UnsupportedCodec {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    let unsupported = |reason: String| Error::UnsupportedCodec {
        path: path.to_path_buf(),
        reason,
    };
    let channels = spec.channels as usize;
    if !(1..=8).contains(&channels) {
        return Err(unsupported(format!("{channels} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
        }
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => return Err(unsupported(format!("{fmt:?} {bits}-bit samples"))),
    }
    .map_err(|e| unsupported(e.to_string()))?;

    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::EmptyAudio {
            path: path.to_path_buf(),
        });
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono samples as 16-bit PCM, clipping to full scale.
pub fn write_wav_i16(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(e) => Error::Io(e),
        other => Error::InvalidInput(other.to_string()),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(to_io)?;
    }
    writer.finalize().map_err(to_io)
}

/// Zero crossings of the lowpass kernel on each side of the centre tap.
const SINC_ZERO_CROSSINGS: f64 = 48.0;
const KAISER_BETA: f64 = 8.6;
/// Cutoff as a fraction of the lower of the two Nyquist frequencies.
const CUTOFF_FRACTION: f64 = 0.9;
/// Above this many phases the kernel is evaluated per output sample.
const MAX_TABLE_PHASES: u64 = 4096;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

struct SincKernel {
    /// Normalized cutoff in cycles per input sample.
    fc: f64,
    half_width: f64,
    n_taps: usize,
    norm: f64,
}

impl SincKernel {
    fn new(source: u32, target: u32) -> Self {
        let nyquist = 0.5 * source.min(target) as f64;
        let fc = CUTOFF_FRACTION * nyquist / source as f64;
        let half_width = SINC_ZERO_CROSSINGS / (2.0 * fc);
        let n_taps = 2 * half_width.ceil() as usize + 1;
        Self {
            fc,
            half_width,
            n_taps,
            norm: bessel_i0(KAISER_BETA),
        }
    }

    fn eval(&self, x: f64) -> f64 {
        let r = x / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * self.fc * x;
        let sinc = if arg == 0.0 {
            1.0
        } else {
            (PI * arg).sin() / (PI * arg)
        };
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / self.norm;
        2.0 * self.fc * sinc * window
    }

    /// Taps for input offsets `first..first + n_taps` relative to the integer
    /// input position, for an output instant `frac` samples past it.
    fn row(&self, frac: f64) -> Vec<f64> {
        let first = -(self.n_taps as isize / 2);
        (0..self.n_taps)
            .map(|j| self.eval((first + j as isize) as f64 - frac))
            .collect()
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The output has `round(len * target / source)` samples; equal rates return
/// the input untouched.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let (src, dst) = (w.sample_rate as u64, target_rate as u64);
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let n_in = w.samples.len() as u64;
    let n_out = ((n_in as u128 * dst as u128 + src as u128 / 2) / src as u128) as usize;

    let kernel = SincKernel::new(w.sample_rate, target_rate);
    let table: Option<Vec<Vec<f64>>> = (up <= MAX_TABLE_PHASES)
        .then(|| (0..up).map(|p| kernel.row(p as f64 / up as f64)).collect());
    let first = -(kernel.n_taps as i64 / 2);
    let x = &w.samples;

    let out = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let phase = pos % up;
            let owned;
            let taps: &[f64] = match &table {
                Some(t) => &t[phase as usize],
                None => {
                    owned = kernel.row(phase as f64 / up as f64);
                    &owned
                }
            };
            let start = base + first;
            let mut acc = 0.0;
            for (j, &h) in taps.iter().enumerate() {
                let idx = start + j as i64;
                if idx >= 0 && (idx as u64) < n_in {
                    acc += h * x[idx as usize];
                }
            }
            acc
        })
        .collect();
    Waveform::new(out, target_rate)
}

/// One analysis chunk together with its sample offset in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub offset: usize,
    pub wave: Waveform,
}

/// Splits a waveform into non-overlapping chunks, dropping the trailing
/// partial chunk and any chunk whose cumulative silent time reaches the limit.
pub fn segment(w: &Waveform, cfg: &SegmenterConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    if w.sample_rate != cfg.target_rate {
        return Err(Error::InvalidInput(format!(
            "segment expects {} Hz audio, got {} Hz",
            cfg.target_rate, w.sample_rate
        )));
    }
    let chunk_len = cfg.chunk_len();
    let frame_len = cfg.frame_len();
    let max_len = (cfg.max_seconds * cfg.target_rate as f64).round() as usize;
    let usable = w.samples.len().min(max_len);
    let rms_floor = 10f64.powf(cfg.silence_threshold_db / 20.0);
    // Smallest silent-frame count that reaches the silence limit.
    let silent_limit = (cfg.max_silence_seconds / cfg.silence_frame_seconds - 1e-9).ceil() as usize;

    let chunks = w.samples[..usable]
        .chunks_exact(chunk_len)
        .enumerate()
        .filter(|(_, chunk)| {
            let silent = chunk
                .chunks_exact(frame_len)
                .filter(|frame| {
                    let ms = frame.iter().map(|s| s * s).sum::<f64>() / frame_len as f64;
                    ms.sqrt() < rms_floor
                })
                .count();
            silent < silent_limit
        })
        .map(|(i, chunk)| Chunk {
            offset: i * chunk_len,
            wave: Waveform {
                samples: chunk.to_vec(),
                sample_rate: w.sample_rate,
            },
        })
        .collect();
    Ok(chunks)
}
