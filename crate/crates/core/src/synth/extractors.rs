use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::audio::{frame, frame_geometry, AudioClip};
use crate::error::{Error, Result};
use crate::fusion::{resample, EmbeddingSequence, LayerStack};

/// Band count of the spectral front end that feeds a projection stack.
pub const PROJECTION_FRONT_END_BANDS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractorKind {
    Spectral,
    ProjectionStack,
    PitchSalience,
}

fn default_window() -> f64 {
    0.025
}
fn default_hop() -> f64 {
    0.01
}
fn default_layers() -> usize {
    1
}
fn default_f0_min() -> f64 {
    50.0
}
fn default_f0_max() -> f64 {
    2000.0
}

/// Parameters of one deterministic stand-in extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub id: String,
    pub kind: ExtractorKind,
    #[serde(default = "default_window")]
    pub window_s: f64,
    #[serde(default = "default_hop")]
    pub hop_s: f64,
    pub channels: usize,
    #[serde(default = "default_layers")]
    pub layer_count: usize,
    #[serde(default)]
    pub seed: u64,
    /// Lowest and highest pitch candidate, in Hz.
    #[serde(default = "default_f0_min")]
    pub f0_min_hz: f64,
    #[serde(default = "default_f0_max")]
    pub f0_max_hz: f64,
    /// Filterbank range; the upper edge defaults to Nyquist.
    #[serde(default)]
    pub min_freq_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_freq_hz: Option<f64>,
}

impl ExtractorSpec {
    pub fn new(id: impl Into<String>, kind: ExtractorKind, channels: usize) -> Self {
        Self {
            id: id.into(),
            kind,
            window_s: default_window(),
            hop_s: default_hop(),
            channels,
            layer_count: 1,
            seed: 0,
            f0_min_hz: default_f0_min(),
            f0_max_hz: default_f0_max(),
            min_freq_hz: 0.0,
            max_freq_hz: None,
        }
    }

    pub fn spectral(id: impl Into<String>, channels: usize) -> Self {
        Self::new(id, ExtractorKind::Spectral, channels)
    }

    pub fn projection_stack(
        id: impl Into<String>,
        channels: usize,
        layers: usize,
        seed: u64,
    ) -> Self {
        Self {
            layer_count: layers,
            seed,
            ..Self::new(id, ExtractorKind::ProjectionStack, channels)
        }
    }

    pub fn pitch_salience(id: impl Into<String>, channels: usize) -> Self {
        Self::new(id, ExtractorKind::PitchSalience, channels)
    }

    pub fn with_frames(mut self, window_s: f64, hop_s: f64) -> Self {
        self.window_s = window_s;
        self.hop_s = hop_s;
        self
    }

    pub fn with_f0_range(mut self, lo: f64, hi: f64) -> Self {
        self.f0_min_hz = lo;
        self.f0_max_hz = hi;
        self
    }

    pub fn with_band(mut self, lo: f64, hi: f64) -> Self {
        self.min_freq_hz = lo;
        self.max_freq_hz = Some(hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.hop_s > 0.0 && self.hop_s <= self.window_s) {
            return Err(Error::Config(format!(
                "{}: need 0 < hop ({}) <= window ({})",
                self.id, self.hop_s, self.window_s
            )));
        }
        if self.channels == 0 || self.layer_count == 0 {
            return Err(Error::Config(format!(
                "{}: channels and layer count must be at least 1",
                self.id
            )));
        }
        if self.kind != ExtractorKind::ProjectionStack && self.layer_count != 1 {
            return Err(Error::Config(format!(
                "{}: only projection stacks have more than one layer",
                self.id
            )));
        }
        if !(self.f0_min_hz > 0.0 && self.f0_min_hz <= self.f0_max_hz) {
            return Err(Error::Config(format!(
                "{}: bad f0 range {}..{}",
                self.id, self.f0_min_hz, self.f0_max_hz
            )));
        }
        if let Some(hi) = self.max_freq_hz {
            if !(self.min_freq_hz >= 0.0 && self.min_freq_hz < hi) {
                return Err(Error::Config(format!(
                    "{}: bad filterbank range {}..{hi}",
                    self.id, self.min_freq_hz
                )));
            }
        }
        Ok(())
    }

    fn expect_kind(&self, kind: ExtractorKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::Config(format!(
                "{}: extractor is {:?}, not {kind:?}",
                self.id, self.kind
            )));
        }
        Ok(())
    }

    fn stack(&self, layers: Vec<Array2<f32>>) -> Result<LayerStack> {
        LayerStack::new(layers, 1.0 / self.hop_s, self.window_s / 2.0)
    }
}

/// Runs whichever extractor `spec.kind` names.
pub fn extract(clip: &AudioClip, spec: &ExtractorSpec) -> Result<LayerStack> {
    match spec.kind {
        ExtractorKind::Spectral => extract_spectral(clip, spec),
        ExtractorKind::ProjectionStack => extract_projection_stack(clip, spec),
        ExtractorKind::PitchSalience => extract_pitch_salience(clip, spec),
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// `bands + 2` mel-spaced edge frequencies; band `b` peaks at edge `b + 1`.
pub fn filterbank_edges_hz(spec: &ExtractorSpec, bands: usize, sample_rate_hz: u32) -> Vec<f64> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    let lo = hz_to_mel(spec.min_freq_hz);
    let hi = hz_to_mel(spec.max_freq_hz.unwrap_or(nyquist).min(nyquist));
    (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect()
}

pub fn band_centers_hz(spec: &ExtractorSpec, sample_rate_hz: u32) -> Vec<f64> {
    let edges = filterbank_edges_hz(spec, spec.channels, sample_rate_hz);
    edges[1..edges.len() - 1].to_vec()
}

/// Peak-normalised triangular filters over the `window / 2 + 1` magnitude bins.
fn triangular_filterbank(edges: &[f64], window: usize, sample_rate_hz: u32) -> Array2<f64> {
    let bins = window / 2 + 1;
    let bands = edges.len() - 2;
    let bin_hz = f64::from(sample_rate_hz) / window as f64;
    Array2::from_shape_fn((bands, bins), |(b, k)| {
        let f = k as f64 * bin_hz;
        let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
        if f >= lo && f <= mid && mid > lo {
            (f - lo) / (mid - lo)
        } else if f > mid && f <= hi && hi > mid {
            (hi - f) / (hi - mid)
        } else {
            0.0
        }
    })
}

struct SpectralFrontEnd {
    fft: Arc<dyn Fft<f64>>,
    window_fn: Vec<f64>,
    filters: Array2<f64>,
}

impl SpectralFrontEnd {
    fn new(spec: &ExtractorSpec, bands: usize, sample_rate_hz: u32) -> Result<Self> {
        let (window, _) = frame_geometry(sample_rate_hz, spec.window_s, spec.hop_s)?;
        let fft = FftPlanner::new().plan_fft_forward(window);
        let window_fn = (0..window)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window as f64).cos())
            .collect();
        let edges = filterbank_edges_hz(spec, bands, sample_rate_hz);
        let filters = triangular_filterbank(&edges, window, sample_rate_hz);
        Ok(Self {
            fft,
            window_fn,
            filters,
        })
    }

    fn run(&self, frames: &[&[f32]]) -> Array2<f32> {
        let bins = self.filters.ncols();
        let mut out = Array2::<f32>::zeros((frames.len(), self.filters.nrows()));
        let mut buf = vec![Complex::new(0.0, 0.0); self.window_fn.len()];
        for (t, frame) in frames.iter().enumerate() {
            for ((b, &x), &w) in buf.iter_mut().zip(frame.iter()).zip(&self.window_fn) {
                *b = Complex::new(f64::from(x) * w, 0.0);
            }
            self.fft.process(&mut buf);
            let magnitude: ndarray::Array1<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
            let energies = self.filters.dot(&magnitude);
            for (o, e) in out.row_mut(t).iter_mut().zip(energies.iter()) {
                *o = e.ln_1p() as f32;
            }
        }
        out
    }
}

/// Hann-windowed DFT magnitude, mel-spaced triangular filterbank to
/// `spec.channels` bands, then `log(1 + x)`. One layer.
pub fn extract_spectral(clip: &AudioClip, spec: &ExtractorSpec) -> Result<LayerStack> {
    spec.expect_kind(ExtractorKind::Spectral)?;
    let frames = frame(clip, spec.window_s, spec.hop_s)?;
    let front = SpectralFrontEnd::new(spec, spec.channels, clip.sample_rate_hz())?;
    spec.stack(vec![front.run(&frames)])
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform `[0, 1)` value addressed by `(seed, layer, row, col, stream)`.
///
/// Every address is hashed independently, so a shorter stack sees exactly
/// the same weights as the prefix of a longer one.
pub fn counter_uniform(seed: u64, layer: u64, row: u64, col: u64, stream: u64) -> f64 {
    let mut h = splitmix64(seed);
    for word in [layer, row, col, stream] {
        h = splitmix64(h ^ word);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

const WEIGHT_STREAM: u64 = 0;
const BIAS_STREAM: u64 = 1;
const BIAS_SCALE: f64 = 0.1;

/// Largest `f32` strictly below one.
const OPEN_UNIT: f64 = 1.0 - f32::EPSILON as f64 / 2.0;

/// Layer 0 is a 64-band spectral front end resampled to `spec.channels`;
/// layer `i >= 1` is `tanh(W_i h_{i-1} + b_i)` with counter-generated
/// weights in `±1/sqrt(C)` and biases in `±0.1`.
pub fn extract_projection_stack(clip: &AudioClip, spec: &ExtractorSpec) -> Result<LayerStack> {
    spec.expect_kind(ExtractorKind::ProjectionStack)?;
    let frames = frame(clip, spec.window_s, spec.hop_s)?;
    let front = SpectralFrontEnd::new(spec, PROJECTION_FRONT_END_BANDS, clip.sample_rate_hz())?;
    let spectral =
        EmbeddingSequence::new(front.run(&frames), 1.0 / spec.hop_s, spec.window_s / 2.0)?;
    let c = spec.channels;
    let layer0 = resample(&spectral, spectral.frames(), c)?.into_data();

    let scale = 1.0 / (c as f64).sqrt();
    let mut layers = vec![layer0];
    for i in 1..spec.layer_count as u64 {
        let weights = Array2::from_shape_fn((c, c), |(r, k)| {
            (2.0 * counter_uniform(spec.seed, i, r as u64, k as u64, WEIGHT_STREAM) - 1.0) * scale
        });
        let bias: ndarray::Array1<f64> = (0..c)
            .map(|r| {
                (2.0 * counter_uniform(spec.seed, i, r as u64, 0, BIAS_STREAM) - 1.0) * BIAS_SCALE
            })
            .collect();
        let prev = layers.last().expect("layer 0 exists").mapv(f64::from);
        let pre = prev.dot(&weights.t()) + &bias;
        // f32 rounds tanh to exactly ±1 past |x| ~ 9; keep the open interval
        layers.push(pre.mapv(|v| v.tanh().clamp(-OPEN_UNIT, OPEN_UNIT) as f32));
    }
    spec.stack(layers)
}

/// Integer lags for `spec.channels` pitch candidates log-spaced from
/// `f0_min_hz` (channel 0) to `f0_max_hz` (last channel).
pub fn pitch_lags(spec: &ExtractorSpec, sample_rate_hz: u32) -> Vec<usize> {
    let c = spec.channels;
    let ratio = spec.f0_max_hz / spec.f0_min_hz;
    (0..c)
        .map(|i| {
            let f0 = if c == 1 {
                spec.f0_min_hz
            } else {
                spec.f0_min_hz * ratio.powf(i as f64 / (c - 1) as f64)
            };
            ((f64::from(sample_rate_hz) / f0).round() as usize).max(1)
        })
        .collect()
}

/// Energy-normalised autocorrelation `sum x[n] x[n + lag] / sum x[n]^2`; zero for silent frames.
pub fn normalized_autocorrelation(frame: &[f32], lag: usize) -> f64 {
    let energy: f64 = frame.iter().map(|&x| f64::from(x) * f64::from(x)).sum();
    if energy == 0.0 {
        return 0.0;
    }
    let cross: f64 = frame
        .iter()
        .zip(frame.iter().skip(lag))
        .map(|(&a, &b)| f64::from(a) * f64::from(b))
        .sum();
    cross / energy
}

/// Per frame, normalised autocorrelation at each candidate lag. One layer.
pub fn extract_pitch_salience(clip: &AudioClip, spec: &ExtractorSpec) -> Result<LayerStack> {
    spec.expect_kind(ExtractorKind::PitchSalience)?;
    let frames = frame(clip, spec.window_s, spec.hop_s)?;
    let lags = pitch_lags(spec, clip.sample_rate_hz());
    let window = frames[0].len();
    if let Some(&lag) = lags.iter().find(|&&l| l >= window) {
        return Err(Error::Config(format!(
            "{}: lag {lag} does not fit a {window}-sample window; raise f0_min_hz or the window",
            spec.id
        )));
    }
    let data = Array2::from_shape_fn((frames.len(), lags.len()), |(t, c)| {
        normalized_autocorrelation(frames[t], lags[c]) as f32
    });
    spec.stack(vec![data])
}
