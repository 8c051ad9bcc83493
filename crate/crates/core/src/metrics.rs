//! Scoring: accuracy, macro mean average precision, and event-onset
//! F-measure over events extracted from frame-level probabilities.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default onset matching tolerance, in seconds.
pub const DEFAULT_ONSET_TOLERANCE_S: f64 = 0.05;

/// Fraction of positions where `pred` equals `reference`.
pub fn accuracy(pred: &[usize], reference: &[usize]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} references",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Input("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(reference).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Average precision of one ranking. `None` when there are no positives.
///
/// Samples are ranked by descending score, ties by ascending index.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Option<f64> {
    let total = positives.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positives[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanAveragePrecision {
    pub value: f64,
    /// AP of every evaluated class, `None` for skipped ones.
    pub per_class: Vec<Option<f64>>,
    /// Classes without a single positive.
    pub skipped: Vec<usize>,
}

/// Macro mean over classes of [`average_precision`]; classes without a
/// positive are skipped and listed.
pub fn mean_average_precision(
    scores: ArrayView2<'_, f64>,
    labels: ArrayView2<'_, bool>,
) -> Result<MeanAveragePrecision> {
    if scores.dim() != labels.dim() {
        return Err(Error::Shape(format!(
            "scores are {:?}, labels are {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    let per_class: Vec<Option<f64>> = (0..scores.ncols())
        .map(|k| {
            let s: Vec<f64> = scores.column(k).to_vec();
            let p: Vec<bool> = labels.column(k).to_vec();
            average_precision(&s, &p)
        })
        .collect();
    let skipped: Vec<usize> = (0..per_class.len())
        .filter(|&k| per_class[k].is_none())
        .collect();
    let evaluated: Vec<f64> = per_class.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return Err(Error::MetricUndefined(format!(
            "no class has a positive label; empty classes: {skipped:?}"
        )));
    }
    Ok(MeanAveragePrecision {
        value: evaluated.iter().sum::<f64>() / evaluated.len() as f64,
        per_class,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Onset {
    pub time_s: f64,
    pub label: usize,
}

/// Labelled onsets, sorted by time (then label).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventList {
    onsets: Vec<Onset>,
}

impl EventList {
    /// Validates and sorts.
    pub fn new(mut onsets: Vec<Onset>) -> Result<Self> {
        if let Some(bad) = onsets
            .iter()
            .find(|o| !(o.time_s.is_finite() && o.time_s >= 0.0))
        {
            return Err(Error::Validation(format!(
                "onset time must be finite and non-negative, got {}",
                bad.time_s
            )));
        }
        onsets.sort_by(|a, b| a.time_s.total_cmp(&b.time_s).then(a.label.cmp(&b.label)));
        Ok(Self { onsets })
    }

    pub fn onsets(&self) -> &[Onset] {
        &self.onsets
    }

    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }

    fn times_for(&self, label: usize) -> Vec<f64> {
        self.onsets
            .iter()
            .filter(|o| o.label == label)
            .map(|o| o.time_s)
            .collect()
    }

    fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.onsets.iter().map(|o| o.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }
}

fn default_threshold() -> f64 {
    0.5
}
fn default_min_duration() -> f64 {
    0.06
}
fn default_median_window() -> usize {
    3
}

/// Absorbs rounding when run durations are measured on a frame grid.
const DURATION_SLACK_S: f64 = 1e-9;

/// Post-processing that turns frame probabilities into onsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventizerConfig {
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_min_duration")]
    pub min_duration_s: f64,
    #[serde(default = "default_median_window")]
    pub median_window: usize,
}

impl Default for EventizerConfig {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            min_duration_s: default_min_duration(),
            median_window: default_median_window(),
        }
    }
}

impl EventizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.min_duration_s.is_finite() && self.min_duration_s >= 0.0) {
            return Err(Error::Config(format!(
                "minimum duration must be non-negative, got {}",
                self.min_duration_s
            )));
        }
        if self.median_window == 0 || self.median_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "median window must be odd and positive, got {}",
                self.median_window
            )));
        }
        Ok(())
    }
}

/// Running median with edge replication.
pub fn median_filter(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 || values.is_empty() {
        return values.to_vec();
    }
    let half = window / 2;
    let last = values.len() - 1;
    let mut buf = Vec::with_capacity(window);
    (0..values.len())
        .map(|i| {
            buf.clear();
            buf.extend((0..window).map(|j| {
                let idx = (i + j).saturating_sub(half).min(last);
                values[idx]
            }));
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect()
}

/// Inclusive frame ranges `[start, end]` where `active` holds.
fn runs(active: &[bool]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &a) in active.iter().enumerate() {
        match (a, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, i - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, active.len() - 1));
    }
    out
}

/// Per class: median filter, threshold (`>=`), drop runs shorter than the
/// minimum duration, and emit one onset at the first frame of each surviving run.
///
/// A run spanning frames `a..=b` lasts from `times[a]` to `times[b + 1]`; the
/// final frame is taken to last one mean frame step.
pub fn eventize(
    frame_probs: ArrayView2<'_, f64>,
    frame_times: &[f64],
    cfg: &EventizerConfig,
) -> Result<EventList> {
    cfg.validate()?;
    let frames = frame_probs.nrows();
    if frame_times.len() != frames {
        return Err(Error::Shape(format!(
            "{} frame times for {frames} frames",
            frame_times.len()
        )));
    }
    if frame_probs
        .iter()
        .any(|p| !(p.is_finite() && (0.0..=1.0).contains(p)))
    {
        return Err(Error::Validation(
            "frame probabilities must lie in [0, 1]".into(),
        ));
    }
    if frame_times
        .windows(2)
        .any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater))
        || frame_times.iter().any(|t| !t.is_finite())
    {
        return Err(Error::Validation(
            "frame times must be strictly increasing".into(),
        ));
    }
    if frames == 0 {
        return Ok(EventList::default());
    }
    let step = if frames > 1 {
        (frame_times[frames - 1] - frame_times[0]) / (frames - 1) as f64
    } else {
        0.0
    };
    let end_of = |b: usize| {
        if b + 1 < frames {
            frame_times[b + 1]
        } else {
            frame_times[b] + step
        }
    };

    let mut onsets = Vec::new();
    for k in 0..frame_probs.ncols() {
        let column: Vec<f64> = frame_probs.column(k).to_vec();
        let smooth = median_filter(&column, cfg.median_window);
        let active: Vec<bool> = smooth.iter().map(|&p| p >= cfg.threshold).collect();
        for (a, b) in runs(&active) {
            if end_of(b) - frame_times[a] >= cfg.min_duration_s - DURATION_SLACK_S {
                onsets.push(Onset {
                    time_s: frame_times[a].max(0.0),
                    label: k,
                });
            }
        }
    }
    EventList::new(onsets)
}

/// Match counts of an onset comparison.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OnsetCounts {
    pub matched: usize,
    pub predicted: usize,
    pub reference: usize,
}

impl std::ops::Add for OnsetCounts {
    type Output = OnsetCounts;

    fn add(self, other: OnsetCounts) -> OnsetCounts {
        OnsetCounts {
            matched: self.matched + other.matched,
            predicted: self.predicted + other.predicted,
            reference: self.reference + other.reference,
        }
    }
}

impl OnsetCounts {
    pub fn score(&self) -> OnsetScore {
        let ratio = |num: usize, den: usize| {
            if den > 0 {
                num as f64 / den as f64
            } else if self.predicted == 0 && self.reference == 0 {
                1.0
            } else {
                0.0
            }
        };
        let precision = ratio(self.matched, self.predicted);
        let recall = ratio(self.matched, self.reference);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        OnsetScore {
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnsetScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Greedy one-to-one matching per label: in ascending time, each prediction
/// takes the earliest unmatched reference within `±tolerance_s`.
pub fn onset_counts(
    pred: &EventList,
    reference: &EventList,
    tolerance_s: f64,
) -> Result<OnsetCounts> {
    if !(tolerance_s.is_finite() && tolerance_s > 0.0) {
        return Err(Error::Input(format!(
            "onset tolerance must be positive, got {tolerance_s}"
        )));
    }
    let mut labels = pred.labels();
    labels.extend(reference.labels());
    labels.sort_unstable();
    labels.dedup();

    let mut matched = 0;
    for label in labels {
        let refs = reference.times_for(label);
        let mut taken = vec![false; refs.len()];
        for p in pred.times_for(label) {
            if let Some(j) =
                (0..refs.len()).find(|&j| !taken[j] && (refs[j] - p).abs() <= tolerance_s)
            {
                taken[j] = true;
                matched += 1;
            }
        }
    }
    Ok(OnsetCounts {
        matched,
        predicted: pred.len(),
        reference: reference.len(),
    })
}

/// Micro-averaged onset precision, recall and F1.
pub fn onset_fms(pred: &EventList, reference: &EventList, tolerance_s: f64) -> Result<OnsetScore> {
    Ok(onset_counts(pred, reference, tolerance_s)?.score())
}

/// Times of frame-row centres, `t_start + i / rate`.
pub fn frame_times(frames: usize, frame_rate_hz: f64, t_start_s: f64) -> Array1<f64> {
    Array1::from_shape_fn(frames, |i| t_start_s + i as f64 / frame_rate_hz)
}
