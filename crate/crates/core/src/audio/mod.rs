//! Audio ingestion and spectrogram fingerprints.

mod classifier;

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub use classifier::{
    classify_sample, read_label_manifest, train_classifier, write_label_manifest, ClassifierConfig, ClassifierModel,
    ClassifierShape, TrainedClassifier,
};

/// Every waveform is resampled to this rate.
pub const SAMPLE_RATE: u32 = 16_000;
/// Samples analysed per fingerprint (1.0 s).
pub const ANALYSIS_SAMPLES: usize = SAMPLE_RATE as usize;
pub const FFT_LEN: usize = 512;
pub const HOP: usize = 496;
pub const FRAMES: usize = 1 + (ANALYSIS_SAMPLES - FFT_LEN) / HOP;
/// Adjacent FFT bins averaged into one spectrogram band.
pub const BINS_PER_BAND: usize = 8;
pub const BANDS: usize = FFT_LEN / 2 / BINS_PER_BAND;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("{path}: unsupported audio: {detail}")]
    Unsupported { path: String, detail: String },
    #[error("{path}: no audio samples")]
    Empty { path: String },
    #[error("{path}: audio is silent")]
    Silent { path: String },
    #[error("{path}: {source}")]
    Wav {
        path: String,
        #[source]
        source: hound::Error,
    },
    #[error("spectrogram shape {got:?} does not match model input {expected:?}")]
    ShapeMismatch {
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error("training corpus of {0} examples is too small to hold out 10%")]
    CorpusTooSmall(usize),
    #[error("label index {0} is outside the model's classes")]
    BadLabel(usize),
    #[error("model file: {0}")]
    Model(String),
    #[error("label manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Mono audio at 16 kHz.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Resamples mono `samples` from `rate` to 16 kHz and normalizes the peak
    /// to 1. `name` is used in error messages.
    pub fn from_samples(samples: &[f64], rate: u32, name: &str) -> Result<Self, AudioError> {
        if samples.is_empty() || rate == 0 {
            return Err(AudioError::Empty { path: name.to_string() });
        }
        let mut out = resample_linear(samples, rate, SAMPLE_RATE);
        if out.is_empty() {
            return Err(AudioError::Empty { path: name.to_string() });
        }
        let peak = out.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak == 0.0 {
            return Err(AudioError::Silent { path: name.to_string() });
        }
        for s in &mut out {
            *s /= peak;
        }
        Ok(Waveform { samples: out })
    }

    /// Wraps samples already at 16 kHz without normalizing them.
    pub fn from_raw(samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "waveform must be non-empty");
        Waveform { samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn rate(&self) -> u32 {
        SAMPLE_RATE
    }

    /// Amplitude-scaled copy.
    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|s| s * gain).collect(),
        }
    }
}

fn resample_linear(input: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return input.to_vec();
    }
    let out_len = (input.len() as u64 * u64::from(to) / u64::from(from)) as usize;
    let step = f64::from(from) / f64::from(to);
    (0..out_len)
        .map(|j| {
            let src = j as f64 * step;
            let i = src.floor() as usize;
            let frac = src - i as f64;
            let a = input[i.min(input.len() - 1)];
            let b = input[(i + 1).min(input.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

/// Reads an 8- or 16-bit PCM WAV file, mixes it to mono, resamples it to
/// 16 kHz and normalizes the peak.
pub fn load_wave(path: &Path) -> Result<Waveform, AudioError> {
    let name = path.display().to_string();
    let wav_err = |source| AudioError::Wav {
        path: name.clone(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || !(spec.bits_per_sample == 8 || spec.bits_per_sample == 16) {
        return Err(AudioError::Unsupported {
            path: name,
            detail: format!("{:?} {}-bit", spec.sample_format, spec.bits_per_sample),
        });
    }
    let full_scale = f64::from(1u32 << (spec.bits_per_sample - 1));
    let interleaved: Vec<i32> = reader.samples::<i32>().collect::<Result<_, _>>().map_err(wav_err)?;
    let channels = usize::from(spec.channels.max(1));
    let mono: Vec<f64> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / full_scale).sum::<f64>() / channels as f64)
        .collect();
    Waveform::from_samples(&mono, spec.sample_rate, &name)
}

/// Writes a 16-bit mono 16 kHz WAV file.
pub fn write_wave(path: &Path, wave: &Waveform) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let name = path.display().to_string();
    let wav_err = |source| AudioError::Wav {
        path: name.clone(),
        source,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in wave.samples() {
        let v = (s.clamp(-1.0, 1.0) * f64::from(i16::MAX)).round() as i16;
        writer.write_sample(v).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Frames-by-bands magnitude matrix, row-major by frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub frame_step: usize,
    pub window_len: usize,
    pub data: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.data[frame * self.bins + bin]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }
}

fn fft_plan() -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_forward(FFT_LEN)
}

/// Hann-windowed short-time magnitudes over the first second of audio
/// (zero-padded when shorter), averaged into bands. Not normalized.
pub fn magnitude_spectrogram(w: &Waveform) -> Spectrogram {
    let fft = fft_plan();
    let window: Vec<f64> = (0..FFT_LEN)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FFT_LEN as f64).cos())
        .collect();
    let samples = w.samples();
    let mut data = Vec::with_capacity(FRAMES * BANDS);
    let mut buf = vec![Complex::new(0.0, 0.0); FFT_LEN];
    for f in 0..FRAMES {
        let start = f * HOP;
        for (n, slot) in buf.iter_mut().enumerate() {
            let s = samples.get(start + n).copied().unwrap_or(0.0);
            *slot = Complex::new(s * window[n], 0.0);
        }
        fft.process(&mut buf);
        for band in 0..BANDS {
            let bins = &buf[band * BINS_PER_BAND..(band + 1) * BINS_PER_BAND];
            data.push(bins.iter().map(|c| c.norm()).sum::<f64>() / BINS_PER_BAND as f64);
        }
    }
    Spectrogram {
        frames: FRAMES,
        bins: BANDS,
        frame_step: HOP,
        window_len: FFT_LEN,
        data,
    }
}

/// Magnitude spectrogram scaled so its largest value is 1 (silence stays 0).
pub fn fingerprint(w: &Waveform) -> Spectrogram {
    let mut spec = magnitude_spectrogram(w);
    let peak = spec.data.iter().fold(0.0f64, |m, &v| m.max(v));
    if peak > 0.0 {
        for v in &mut spec.data {
            *v /= peak;
        }
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resample_keeps_samples() {
        let input: Vec<f64> = (0..100).map(|i| ((i as f64) * 0.1).sin()).collect();
        let w = Waveform::from_samples(&input, SAMPLE_RATE, "x").unwrap();
        assert_eq!(w.samples().len(), 100);
        let peak = input.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        for (a, b) in w.samples().iter().zip(&input) {
            assert!((a - b / peak).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_halves_length() {
        let input: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.01).sin()).collect();
        let w = Waveform::from_samples(&input, 32_000, "x").unwrap();
        assert_eq!(w.samples().len(), 1000);
    }

    #[test]
    fn silence_and_empty_are_rejected() {
        assert!(matches!(
            Waveform::from_samples(&[0.0; 64], SAMPLE_RATE, "quiet.wav"),
            Err(AudioError::Silent { .. })
        ));
        assert!(matches!(
            Waveform::from_samples(&[], SAMPLE_RATE, "none.wav"),
            Err(AudioError::Empty { .. })
        ));
    }

    #[test]
    fn fingerprint_has_fixed_shape() {
        assert_eq!((FRAMES, BANDS), (32, 32));
        let short = fingerprint(&Waveform::from_raw(vec![0.5; 300]));
        let long = fingerprint(&Waveform::from_raw(vec![0.5; 40_000]));
        assert_eq!(short.shape(), long.shape());
        assert_eq!(short.data.len(), FRAMES * BANDS);
    }

    #[test]
    fn silence_fingerprint_is_zero() {
        let s = fingerprint(&Waveform::from_raw(vec![0.0; 16_000]));
        assert!(s.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn magnitudes_scale_linearly_before_normalization() {
        let w = Waveform::from_raw((0..16_000).map(|i| (i as f64 * 0.3).sin()).collect());
        let full = magnitude_spectrogram(&w);
        let half = magnitude_spectrogram(&w.scaled(0.5));
        for (a, b) in full.data.iter().zip(&half.data) {
            assert!((a * 0.5 - b).abs() < 1e-9);
        }
        assert_eq!(fingerprint(&w), fingerprint(&w.scaled(0.5)));
    }

    #[test]
    fn wav_round_trip_and_unsupported_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tone.wav");
        let w = Waveform::from_raw((0..800).map(|i| (i as f64 * 0.05).sin() * 0.9).collect());
        write_wave(&path, &w).unwrap();
        let back = load_wave(&path).unwrap();
        assert_eq!(back.samples().len(), 800);

        let float_path = dir.path().join("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut writer = hound::WavWriter::create(&float_path, spec).unwrap();
        writer.write_sample(0.5f32).unwrap();
        writer.finalize().unwrap();
        assert!(matches!(load_wave(&float_path), Err(AudioError::Unsupported { .. })));
    }

    #[test]
    fn stereo_is_mixed_down() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for (l, r) in [(1000i16, 3000i16), (-2000, 0), (0, 0)] {
            writer.write_sample(l).unwrap();
            writer.write_sample(r).unwrap();
        }
        writer.finalize().unwrap();
        let w = load_wave(&path).unwrap();
        assert_eq!(w.samples().len(), 3);
        assert!((w.samples()[0] - 1.0).abs() < 1e-12);
        assert!((w.samples()[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn eight_bit_and_all_zero_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u8.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8_000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for v in [0i8, 64, -64, 32] {
            writer.write_sample(v).unwrap();
        }
        writer.finalize().unwrap();
        assert_eq!(load_wave(&path).unwrap().samples().len(), 8);

        let zero = dir.path().join("zero.wav");
        let mut writer = hound::WavWriter::create(&zero, spec).unwrap();
        for _ in 0..16 {
            writer.write_sample(0i8).unwrap();
        }
        writer.finalize().unwrap();
        assert!(matches!(load_wave(&zero), Err(AudioError::Silent { .. })));
    }
}
