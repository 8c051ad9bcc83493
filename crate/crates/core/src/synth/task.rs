use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::audio::AudioClip;
use crate::error::{Error, Result};

/// Knobs of the two-factor synthetic corpus.
///
/// Factor 1 is the frequency of a steady tone placed above the pitch range;
/// factor 2 is the rate of a raised-cosine amplitude modulation applied to a
/// low carrier that is a multiple of the rate, so the modulated component is
/// periodic at the rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskParams {
    pub sample_rate_hz: u32,
    pub duration_s: f64,
    /// Lowest and highest class tone, log-spaced between.
    pub tone_hz: (f64, f64),
    /// Relative per-clip spread of the tone around its class frequency.
    pub tone_jitter: f64,
    pub tone_amplitude: f64,
    /// Lowest and highest class modulation rate, log-spaced between. A span
    /// under one octave keeps every class clear of the others' multiples.
    pub am_rate_hz: (f64, f64),
    pub am_carrier_hz: f64,
    pub am_amplitude: f64,
    pub noise_std: f64,
}

impl Default for SyntheticTaskParams {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            duration_s: 1.0,
            tone_hz: (1800.0, 6400.0),
            tone_jitter: 0.1,
            tone_amplitude: 0.1,
            am_rate_hz: (80.0, 140.0),
            am_carrier_hz: 500.0,
            am_amplitude: 0.5,
            noise_std: 0.05,
        }
    }
}

/// Generated clips with one label vector per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub clip_ids: Vec<String>,
    pub clips: Vec<AudioClip>,
    /// `labels[f][i]` is the factor-`f` class of clip `i`.
    pub labels: Vec<Vec<usize>>,
    /// Index of each clip among those sharing its label combination.
    pub replicate: Vec<usize>,
    pub classes_per_factor: usize,
}

impl SyntheticCorpus {
    /// Label combination encoded as one class id, factor 1 most significant.
    pub fn joint_label(&self, clip: usize) -> usize {
        self.labels
            .iter()
            .fold(0, |acc, f| acc * self.classes_per_factor + f[clip])
    }
}

fn class_values((lo, hi): (f64, f64), classes: usize) -> Vec<f64> {
    if classes == 1 {
        return vec![lo];
    }
    (0..classes)
        .map(|k| lo * (hi / lo).powf(k as f64 / (classes - 1) as f64))
        .collect()
}

impl SyntheticTaskParams {
    pub fn tone_classes_hz(&self, classes: usize) -> Vec<f64> {
        class_values(self.tone_hz, classes)
    }

    pub fn am_rates_hz(&self, classes: usize) -> Vec<f64> {
        class_values(self.am_rate_hz, classes)
    }

    /// Every label combination gets `clips_per_class` clips, in
    /// lexicographic combination order.
    pub fn generate(
        &self,
        factor_count: usize,
        classes_per_factor: usize,
        clips_per_class: usize,
        seed: u64,
    ) -> Result<SyntheticCorpus> {
        if factor_count == 0 || classes_per_factor == 0 || clips_per_class == 0 {
            return Err(Error::Input(
                "synthetic task counts must be at least 1".into(),
            ));
        }
        if factor_count > 2 {
            return Err(Error::Input(format!(
                "synthetic task encodes at most 2 factors, asked for {factor_count}"
            )));
        }
        let tones = self.tone_classes_hz(classes_per_factor);
        let rates = if factor_count == 2 {
            self.am_rates_hz(classes_per_factor)
        } else {
            self.am_rates_hz(1)
        };
        let sr = f64::from(self.sample_rate_hz);
        let n = (self.duration_s * sr).round() as usize;
        let noise = Normal::new(0.0, self.noise_std)
            .map_err(|e| Error::Input(format!("noise std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut corpus = SyntheticCorpus {
            clip_ids: Vec::new(),
            clips: Vec::new(),
            labels: vec![Vec::new(); factor_count],
            replicate: Vec::new(),
            classes_per_factor,
        };
        for (tone_class, &tone) in tones.iter().enumerate() {
            for (rate_class, &rate) in rates.iter().enumerate() {
                for rep in 0..clips_per_class {
                    let freq = tone * (1.0 + self.tone_jitter * rng.random_range(-1.0..=1.0));
                    let tone_phase = rng.random_range(0.0..2.0 * PI);
                    let env_phase = rng.random_range(0.0..2.0 * PI);
                    let carrier_phase = rng.random_range(0.0..2.0 * PI);
                    let carrier = rate * (self.am_carrier_hz / rate).round().max(1.0);
                    let samples = (0..n)
                        .map(|i| {
                            let t = i as f64 / sr;
                            let tone_part =
                                self.tone_amplitude * (2.0 * PI * freq * t + tone_phase).sin();
                            let env = 0.5 * (1.0 - (2.0 * PI * rate * t + env_phase).cos());
                            let am_part = self.am_amplitude
                                * env
                                * (2.0 * PI * carrier * t + carrier_phase).sin();
                            let v = tone_part + am_part + noise.sample(&mut rng);
                            v.clamp(-1.0, 1.0) as f32
                        })
                        .collect();
                    let index = corpus.clips.len();
                    corpus.clip_ids.push(format!("clip_{index:04}"));
                    corpus
                        .clips
                        .push(AudioClip::new(samples, self.sample_rate_hz)?);
                    corpus.labels[0].push(tone_class);
                    if factor_count == 2 {
                        corpus.labels[1].push(rate_class);
                    }
                    corpus.replicate.push(rep);
                }
            }
        }
        Ok(corpus)
    }
}

/// [`SyntheticTaskParams::generate`] with default parameters.
pub fn make_synthetic_task(
    factor_count: usize,
    classes_per_factor: usize,
    clips_per_class: usize,
    seed: u64,
) -> Result<SyntheticCorpus> {
    SyntheticTaskParams::default().generate(factor_count, classes_per_factor, clips_per_class, seed)
}
