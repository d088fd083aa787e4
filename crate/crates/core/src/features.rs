//! Audio decoding and power-compressed magnitude spectrogram features.
//!
//! Frames are Hann-windowed (periodic window), zero-padded to `fft_length`
//! and transformed with a real DFT. Entry `(t, f)` is `|X_t(f)|^p` where `p`
//! is [`FeatureParams::magnitude_power`].

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unsupported audio format in {path}: {reason}")]
    UnsupportedFormat { path: String, reason: String },
    #[error("corrupt audio file {path}: {reason}")]
    CorruptFile { path: String, reason: String },
    #[error("audio has {samples} samples, shorter than one frame of {frame_length}")]
    TooShort { samples: usize, frame_length: usize },
    #[error("invalid feature parameters: {0}")]
    InvalidParams(String),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("feature cache {path}: {reason}")]
    BadCache { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, FeatureError> {
        if sample_rate == 0 {
            return Err(FeatureError::InvalidWaveform("sample rate is zero".into()));
        }
        if samples.is_empty() {
            return Err(FeatureError::InvalidWaveform("no samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureParams {
    pub frame_length: usize,
    pub frame_step: usize,
    pub fft_length: usize,
    pub magnitude_power: f64,
    pub epsilon: f64,
    /// Rate the pipeline expects; files at other rates are rejected by the
    /// training and decoding commands.
    pub sample_rate: u32,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            frame_length: 256,
            frame_step: 160,
            fft_length: 384,
            magnitude_power: 0.5,
            epsilon: 1e-10,
            sample_rate: 16_000,
        }
    }
}

impl FeatureParams {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: &str| Err(FeatureError::InvalidParams(m.to_string()));
        if self.frame_step == 0 {
            return bad("frame_step must be positive");
        }
        if self.frame_step > self.frame_length {
            return bad("frame_step must not exceed frame_length");
        }
        if self.frame_length > self.fft_length {
            return bad("frame_length must not exceed fft_length");
        }
        if !self.fft_length.is_multiple_of(2) {
            return bad("fft_length must be even");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_length / 2 + 1
    }

    /// Frame count for `num_samples` samples, `None` when shorter than a frame.
    pub fn num_frames(&self, num_samples: usize) -> Option<usize> {
        (num_samples >= self.frame_length)
            .then(|| 1 + (num_samples - self.frame_length) / self.frame_step)
    }
}

/// Row-major `T x F` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Vec<f64>,
    pub num_frames: usize,
    pub num_bins: usize,
    /// Frame count before any batch padding.
    pub source_length: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, num_frames: usize, num_bins: usize) -> Self {
        assert_eq!(data.len(), num_frames * num_bins);
        Self {
            data,
            num_frames,
            num_bins,
            source_length: num_frames,
        }
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.num_bins..(t + 1) * self.num_bins]
    }

    pub fn get(&self, t: usize, f: usize) -> f64 {
        self.data[t * self.num_bins + f]
    }
}

fn wav_err(path: &Path, e: hound::Error) -> FeatureError {
    let path = path.display().to_string();
    match e {
        hound::Error::IoError(io) if io.kind() == std::io::ErrorKind::NotFound => {
            FeatureError::Io(io)
        }
        hound::Error::IoError(io) => FeatureError::CorruptFile {
            path,
            reason: io.to_string(),
        },
        hound::Error::Unsupported => FeatureError::UnsupportedFormat {
            path,
            reason: "unsupported WAV encoding".into(),
        },
        other => FeatureError::CorruptFile {
            path,
            reason: other.to_string(),
        },
    }
}

/// Reads a mono 16-bit PCM WAV file; samples are scaled by `1 / 32768`.
pub fn read_wav(path: &Path) -> Result<Waveform, FeatureError> {
    let file = File::open(path)?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let unsupported = |reason: String| FeatureError::UnsupportedFormat {
        path: path.display().to_string(),
        reason,
    };
    if spec.channels != 1 {
        return Err(unsupported(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} {}-bit samples, expected 16-bit PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e))?;
    if samples.len() != declared {
        return Err(FeatureError::CorruptFile {
            path: path.display().to_string(),
            reason: format!(
                "data chunk declares {declared} samples, found {}",
                samples.len()
            ),
        });
    }
    Waveform::new(samples, spec.sample_rate).map_err(|_| FeatureError::CorruptFile {
        path: path.display().to_string(),
        reason: "no samples".into(),
    })
}

/// Quantizes a sample in `[-1, 1]` to 16-bit PCM. Values on the `1/32768`
/// grid map back exactly.
pub fn quantize_sample(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), FeatureError> {
    let samples: Vec<i16> = w.samples.iter().map(|&x| quantize_sample(x)).collect();
    write_wav_i16(path, &samples, w.sample_rate)
}

pub fn write_wav_i16(path: &Path, samples: &[i16], sample_rate: u32) -> Result<(), FeatureError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in samples {
        writer.write_sample(s).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn spectrogram(w: &Waveform, p: &FeatureParams) -> Result<FeatureMatrix, FeatureError> {
    p.validate()?;
    let num_frames = p
        .num_frames(w.samples.len())
        .ok_or(FeatureError::TooShort {
            samples: w.samples.len(),
            frame_length: p.frame_length,
        })?;
    let bins = p.num_bins();
    let window = hann_window(p.frame_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(p.fft_length);
    let mut buf = vec![Complex::new(0.0, 0.0); p.fft_length];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(num_frames * bins);
    for t in 0..num_frames {
        let start = t * p.frame_step;
        let frame = &w.samples[start..start + p.frame_length];
        for (slot, (&x, &h)) in buf.iter_mut().zip(frame.iter().zip(&window)) {
            *slot = Complex::new(x * h, 0.0);
        }
        for slot in &mut buf[p.frame_length..] {
            *slot = Complex::new(0.0, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..bins].iter().map(|c| c.norm().powf(p.magnitude_power)));
    }
    Ok(FeatureMatrix::new(data, num_frames, bins))
}

/// Standardizes all `T * F` cells of one utterance to zero mean and unit
/// (population) standard deviation.
pub fn normalize(x: &FeatureMatrix, epsilon: f64) -> FeatureMatrix {
    let n = x.data.len() as f64;
    let mean = x.data.iter().sum::<f64>() / n;
    let var = x.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    FeatureMatrix {
        data: x.data.iter().map(|v| (v - mean) / denom).collect(),
        num_frames: x.num_frames,
        num_bins: x.num_bins,
        source_length: x.source_length,
    }
}

/// Reads a WAV file and returns its normalized spectrogram.
pub fn extract(path: &Path, p: &FeatureParams) -> Result<FeatureMatrix, FeatureError> {
    let w = read_wav(path)?;
    if w.sample_rate != p.sample_rate {
        return Err(FeatureError::UnsupportedFormat {
            path: path.display().to_string(),
            reason: format!(
                "sample rate {} Hz, expected {} Hz",
                w.sample_rate, p.sample_rate
            ),
        });
    }
    Ok(normalize(&spectrogram(&w, p)?, p.epsilon))
}

const CACHE_MAGIC: &[u8; 8] = b"CSFEAT01";

/// Writes features as `magic, T (u64), F (u64), sample_rate (u32)` followed
/// by `T * F` little-endian f64 values.
pub fn write_feature_cache(
    path: &Path,
    x: &FeatureMatrix,
    sample_rate: u32,
) -> Result<(), FeatureError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CACHE_MAGIC)?;
    out.write_all(&(x.num_frames as u64).to_le_bytes())?;
    out.write_all(&(x.num_bins as u64).to_le_bytes())?;
    out.write_all(&sample_rate.to_le_bytes())?;
    for v in &x.data {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_feature_cache(path: &Path) -> Result<(FeatureMatrix, u32), FeatureError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |reason: &str| FeatureError::BadCache {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    if bytes.len() < 28 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("missing header"));
    }
    let t = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let f = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let rate = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let body = &bytes[28..];
    if t == 0 || Some(body.len()) != t.checked_mul(f).and_then(|n| n.checked_mul(8)) {
        return Err(bad("payload size does not match header"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((FeatureMatrix::new(data, t, f), rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sine(freq: f64, rate: u32, n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin())
            .collect();
        Waveform::new(samples, rate).unwrap()
    }

    /// Direct O(N^2) DFT magnitude of a windowed, zero-padded frame.
    fn naive_frame_magnitudes(frame: &[f64], fft_length: usize, power: f64) -> Vec<f64> {
        let window = hann_window(frame.len());
        (0..=fft_length / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, &h)) in frame.iter().zip(&window).enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / fft_length as f64;
                    re += x * h * ang.cos();
                    im += x * h * ang.sin();
                }
                (re * re + im * im).sqrt().powf(power)
            })
            .collect()
    }

    #[test]
    fn wav_scaling_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        write_wav_i16(&path, &[0, 16384, -32768], 16000).unwrap();
        let w = read_wav(&path).unwrap();
        assert_eq!(w.samples, vec![0.0, 0.5, -1.0]);
        assert_eq!(w.sample_rate, 16000);

        let grid: Vec<f64> = (-50..50).map(|i| i as f64 * 517.0 / 32768.0).collect();
        let w = Waveform::new(grid, 8000).unwrap();
        write_wav(&path, &w).unwrap();
        assert_eq!(read_wav(&path).unwrap(), w);
    }

    #[test]
    fn stereo_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..8 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(FeatureError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav_i16(&path, &[1; 100], 16000).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 51]).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(FeatureError::CorruptFile { .. })
        ));
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(
            read_wav(&path),
            Err(FeatureError::CorruptFile { .. })
        ));
    }

    #[test]
    fn frame_counts() {
        let p = FeatureParams::default();
        let w = Waveform::new(vec![0.1; 256], 16000).unwrap();
        assert_eq!(spectrogram(&w, &p).unwrap().num_frames, 1);
        let w = Waveform::new(vec![0.1; 576], 16000).unwrap();
        let x = spectrogram(&w, &p).unwrap();
        assert_eq!((x.num_frames, x.num_bins), (3, 193));
        let w = Waveform::new(vec![0.1; 255], 16000).unwrap();
        assert!(matches!(
            spectrogram(&w, &p),
            Err(FeatureError::TooShort { samples: 255, .. })
        ));
    }

    #[test]
    fn sine_peak_bin() {
        let p = FeatureParams::default();
        let w = sine(1000.0, 16000, 4000);
        let x = spectrogram(&w, &p).unwrap();
        for t in 0..x.num_frames {
            let row = x.row(t);
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                .unwrap();
            assert_eq!(argmax, 24);
        }
    }

    #[test]
    fn matches_direct_dft() {
        let p = FeatureParams {
            frame_length: 200,
            frame_step: 100,
            fft_length: 512,
            magnitude_power: 1.0,
            ..FeatureParams::default()
        };
        let samples: Vec<f64> = (0..700)
            .map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5)
            .collect();
        let w = Waveform::new(samples.clone(), 16000).unwrap();
        let x = spectrogram(&w, &p).unwrap();
        for t in 0..x.num_frames {
            let frame = &samples[t * 100..t * 100 + 200];
            let oracle = naive_frame_magnitudes(frame, 512, 1.0);
            for (a, b) in x.row(t).iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn normalize_constant_is_zero() {
        let x = FeatureMatrix::new(vec![3.5; 12], 3, 4);
        assert!(normalize(&x, 1e-10).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn params_validation() {
        let p = FeatureParams {
            fft_length: 385,
            ..FeatureParams::default()
        };
        assert!(p.validate().is_err());
        let p = FeatureParams {
            frame_step: 300,
            ..FeatureParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn feature_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let x = FeatureMatrix::new((0..15).map(|i| i as f64 * 0.25 - 1.0).collect(), 5, 3);
        write_feature_cache(&path, &x, 8000).unwrap();
        let (y, rate) = read_feature_cache(&path).unwrap();
        assert_eq!((y, rate), (x, 8000));
        std::fs::write(&path, b"CSFEAT01").unwrap();
        assert!(read_feature_cache(&path).is_err());
    }

    fn stats(d: &[f64]) -> (f64, f64) {
        let n = d.len() as f64;
        let m = d.iter().sum::<f64>() / n;
        (
            m,
            (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt(),
        )
    }

    proptest! {
        #[test]
        fn frame_count_formula(n in 1usize..3000, fl in 1usize..300, fs_frac in 0.01f64..1.0) {
            let fs = ((fl as f64 * fs_frac) as usize).max(1);
            let p = FeatureParams { frame_length: fl, frame_step: fs, fft_length: fl + fl % 2, ..FeatureParams::default() };
            let w = Waveform::new(vec![0.25; n], 16000).unwrap();
            match spectrogram(&w, &p) {
                Ok(x) => {
                    prop_assert!(n >= fl);
                    prop_assert_eq!(x.num_frames, 1 + (n - fl) / fs);
                }
                Err(FeatureError::TooShort { .. }) => prop_assert!(n < fl),
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }

        #[test]
        fn scaling_law(alpha in 0.05f64..3.0, seed in 0u64..1000) {
            let p = FeatureParams::default();
            // Generic noise: structured signals can have exactly-zero bins,
            // where a relative comparison is meaningless.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..800).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let scaled: Vec<f64> = samples.iter().map(|v| v * alpha).collect();
            let a = spectrogram(&Waveform::new(samples, 16000).unwrap(), &p).unwrap();
            let b = spectrogram(&Waveform::new(scaled, 16000).unwrap(), &p).unwrap();
            let k = alpha.powf(p.magnitude_power);
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((k * x - y).abs() <= 1e-9 * y.abs().max(1e-12) + 1e-12);
            }
        }

        #[test]
        fn normalize_statistics(vals in proptest::collection::vec(-100.0f64..100.0, 2..200)) {
            prop_assume!(vals.iter().any(|v| (v - vals[0]).abs() > 1e-3));
            let n = vals.len();
            let x = FeatureMatrix::new(vals, n, 1);
            let y = normalize(&x, 1e-10);
            let (m, s) = stats(&y.data);
            prop_assert!(m.abs() <= 1e-10);
            prop_assert!((1.0 - 1e-6..=1.0).contains(&s));
            let z = normalize(&y, 1e-10);
            for (a, b) in y.data.iter().zip(&z.data) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }
    }
}
