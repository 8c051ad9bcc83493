use std::path::Path;

use crate::error::{Error, Result};

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("audio clip is empty".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if let Some((i, v)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(Error::Validation(format!(
                "sample {i} = {v} is outside [-1, 1]"
            )));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Reads a 16-bit PCM mono WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        if spec.channels != 1
            || spec.bits_per_sample != 16
            || spec.sample_format != hound::SampleFormat::Int
        {
            return Err(Error::Input(format!(
                "{}: expected 16-bit PCM mono, got {} channel(s), {} bits, {:?}",
                path.display(),
                spec.channels,
                spec.bits_per_sample,
                spec.sample_format
            )));
        }
        let samples = reader
            .samples::<i16>()
            .map(|s| s.map(|v| f32::from(v) / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| wav_error(path, e))?;
        Self::new(samples, spec.sample_rate)
    }

    /// Writes the clip as 16-bit PCM mono WAV.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate_hz,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
        for &s in &self.samples {
            let q = (f64::from(s) * 32767.0).round() as i16;
            writer.write_sample(q).map_err(|e| wav_error(path, e))?;
        }
        writer.finalize().map_err(|e| wav_error(path, e))
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Input(format!("{}: {other}", path.display())),
    }
}

/// Window and hop in samples: `ceil(seconds * sample_rate)`.
pub fn frame_geometry(sample_rate_hz: u32, window_s: f64, hop_s: f64) -> Result<(usize, usize)> {
    if !(window_s > 0.0 && hop_s > 0.0 && window_s.is_finite() && hop_s.is_finite()) {
        return Err(Error::Input(format!(
            "window ({window_s} s) and hop ({hop_s} s) must be positive"
        )));
    }
    if hop_s > window_s {
        return Err(Error::Input(format!(
            "hop ({hop_s} s) exceeds window ({window_s} s)"
        )));
    }
    let sr = f64::from(sample_rate_hz);
    // the slack absorbs products such as 0.025 * 16000 landing just above an integer
    let to_samples = |s: f64| ((s * sr - 1e-9).ceil() as usize).max(1);
    Ok((to_samples(window_s), to_samples(hop_s)))
}

/// Number of frames `1 + floor((n - window) / hop)`.
pub fn frame_count(samples: usize, window: usize, hop: usize) -> Option<usize> {
    (samples >= window).then(|| 1 + (samples - window) / hop)
}

/// Splits a clip into overlapping frames. Frame `t` is centred at
/// `t * hop_s + window_s / 2`.
pub fn frame(clip: &AudioClip, window_s: f64, hop_s: f64) -> Result<Vec<&[f32]>> {
    let (window, hop) = frame_geometry(clip.sample_rate_hz(), window_s, hop_s)?;
    let count = frame_count(clip.samples().len(), window, hop).ok_or_else(|| {
        Error::Input(format!(
            "clip of {} samples is shorter than one {window}-sample window",
            clip.samples().len()
        ))
    })?;
    Ok((0..count)
        .map(|t| &clip.samples()[t * hop..t * hop + window])
        .collect())
}
