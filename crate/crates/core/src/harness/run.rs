//! One evaluation cell: fuse every clip, train a probe on the train split,
//! score the test split.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::{ClipEntry, LabelPayload, MetricKind, Split, TaskKind, TaskManifest};
use super::store::StackSource;
use crate::error::{Error, Result};
use crate::fusion::{fuse_with, scene_embed, EmbeddingSequence, FusionConfig};
use crate::metrics::{
    accuracy, eventize, mean_average_precision, onset_counts, EventList, EventizerConfig, Onset,
    OnsetCounts, DEFAULT_ONSET_TOLERANCE_S,
};
use crate::probe::{train_probe, Objective, ProbeConfig, Standardizer, Targets};

/// Settings used only by event-detection tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(default)]
    pub eventizer: EventizerConfig,
    #[serde(default = "default_tolerance")]
    pub onset_tolerance_s: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_ONSET_TOLERANCE_S
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eventizer: EventizerConfig::default(),
            onset_tolerance_s: DEFAULT_ONSET_TOLERANCE_S,
        }
    }
}

/// Outcome of one (task, variant) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub task_id: String,
    pub variant: String,
    pub metric: String,
    /// `None` when the cell failed.
    pub value: Option<f64>,
    /// Width of the probe's input features.
    pub probe_input_dim: usize,
    /// Channels of the fused timestamp embedding.
    pub fused_channels: usize,
    /// First 16 hex digits of the SHA-256 of the effective probe config as JSON.
    pub probe_digest: String,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Every training sample carried the same target.
    pub degenerate: bool,
    /// `ok`, or the error that stopped the cell.
    pub status: String,
}

impl ReportRow {
    pub fn failed(task_id: &str, variant: &str, metric: &str, seed: u64, err: &Error) -> Self {
        Self {
            task_id: task_id.to_string(),
            variant: variant.to_string(),
            metric: metric.to_string(),
            value: None,
            probe_input_dim: 0,
            fused_channels: 0,
            probe_digest: String::new(),
            seed,
            wall_time_s: 0.0,
            degenerate: false,
            status: format!("error: {err}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.value.is_some()
    }
}

/// The probe config actually trained: the objective follows the task kind.
pub fn effective_probe(kind: TaskKind, probe_cfg: &ProbeConfig) -> ProbeConfig {
    let mut cfg = probe_cfg.clone();
    cfg.objective = match kind {
        TaskKind::SceneClassification => Objective::SoftmaxXent,
        TaskKind::SceneMultilabel | TaskKind::EventDetection => Objective::SigmoidBce,
    };
    cfg
}

pub fn probe_digest(cfg: &ProbeConfig) -> String {
    let json = serde_json::to_string(cfg).expect("probe config serialises");
    Sha256::digest(json.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Lists every `member/clip` pair the source cannot provide.
pub fn missing_embeddings(
    manifest: &TaskManifest,
    source: &dyn StackSource,
    fusion_cfg: &FusionConfig,
) -> Vec<String> {
    let mut missing = Vec::new();
    for clip in &manifest.clips {
        for id in fusion_cfg.member_ids() {
            if !source.contains(id, &clip.clip_id) {
                missing.push(format!("{id}/{}", clip.clip_id));
            }
        }
    }
    missing
}

fn fuse_clip(
    source: &dyn StackSource,
    clip_id: &str,
    fusion_cfg: &FusionConfig,
) -> Result<EmbeddingSequence> {
    let stacks = fusion_cfg
        .member_ids()
        .map(|id| Ok((id.to_string(), source.stack(id, clip_id)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    fuse_with(|id| stacks.get(id), fusion_cfg)
}

fn fuse_split(
    clips: &[&ClipEntry],
    source: &dyn StackSource,
    fusion_cfg: &FusionConfig,
) -> Result<Vec<EmbeddingSequence>> {
    clips
        .par_iter()
        .map(|c| fuse_clip(source, &c.clip_id, fusion_cfg))
        .collect()
}

fn stack_rows(rows: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    concatenate(Axis(0), &views).expect("rows share a width")
}

fn to_f64(seq: &EmbeddingSequence) -> Array2<f64> {
    seq.data().mapv(f64::from)
}

/// Train on the manifest's train split and score its test split.
///
/// The valid split is not used.
pub fn run_variant(
    manifest: &TaskManifest,
    source: &dyn StackSource,
    variant: &str,
    fusion_cfg: &FusionConfig,
    probe_cfg: &ProbeConfig,
    opts: &RunOptions,
) -> Result<ReportRow> {
    let started = Instant::now();
    manifest.validate()?;
    fusion_cfg.validate()?;
    let probe_cfg = effective_probe(manifest.kind, probe_cfg);
    probe_cfg.validate()?;
    if manifest.kind == TaskKind::EventDetection {
        opts.eventizer.validate()?;
    }

    let train: Vec<&ClipEntry> = manifest.clips_in(Split::Train).collect();
    let test: Vec<&ClipEntry> = manifest.clips_in(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Config(format!(
            "task {}: empty test split",
            manifest.task_id
        )));
    }
    if train.is_empty() {
        return Err(Error::Config(format!(
            "task {}: empty train split",
            manifest.task_id
        )));
    }
    let missing = missing_embeddings(manifest, source, fusion_cfg);
    if !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }

    let train_seqs = fuse_split(&train, source, fusion_cfg)?;
    let test_seqs = fuse_split(&test, source, fusion_cfg)?;
    let fused_channels = train_seqs[0].channels();

    let scored = match manifest.kind {
        TaskKind::SceneClassification | TaskKind::SceneMultilabel => score_scene(
            manifest,
            &train,
            &test,
            &train_seqs,
            &test_seqs,
            fusion_cfg,
            &probe_cfg,
        )?,
        TaskKind::EventDetection => score_events(
            manifest,
            &train,
            &test,
            &train_seqs,
            &test_seqs,
            &probe_cfg,
            opts,
        )?,
    };
    if !(0.0..=1.0).contains(&scored.value) {
        return Err(Error::Validation(format!(
            "{} = {} lies outside [0, 1]",
            manifest.metric.name(),
            scored.value
        )));
    }

    Ok(ReportRow {
        task_id: manifest.task_id.clone(),
        variant: variant.to_string(),
        metric: manifest.metric.name().to_string(),
        value: Some(scored.value),
        probe_input_dim: scored.input_dim,
        fused_channels,
        probe_digest: probe_digest(&probe_cfg),
        seed: probe_cfg.seed,
        wall_time_s: started.elapsed().as_secs_f64(),
        degenerate: scored.degenerate,
        status: "ok".into(),
    })
}

struct Scored {
    value: f64,
    input_dim: usize,
    degenerate: bool,
}

fn scene_features(seqs: &[EmbeddingSequence], fusion_cfg: &FusionConfig) -> Result<Array2<f64>> {
    let rows = seqs
        .iter()
        .map(|s| {
            let v = scene_embed(s, fusion_cfg)?;
            Ok(v.values().mapv(f64::from).insert_axis(Axis(0)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(stack_rows(&rows))
}

fn class_ids(manifest: &TaskManifest, clips: &[&ClipEntry]) -> Vec<usize> {
    let index = manifest.label_index();
    clips
        .iter()
        .map(|c| match &c.payload {
            LabelPayload::Class { label } => index[label.as_str()],
            _ => unreachable!("validated scene classification payload"),
        })
        .collect()
}

fn label_matrix(manifest: &TaskManifest, clips: &[&ClipEntry]) -> Array2<bool> {
    let index = manifest.label_index();
    let mut m = Array2::from_elem((clips.len(), manifest.label_vocab.len()), false);
    for (i, c) in clips.iter().enumerate() {
        match &c.payload {
            LabelPayload::Class { label } => m[[i, index[label.as_str()]]] = true,
            LabelPayload::Multi { labels } => {
                for l in labels {
                    m[[i, index[l.as_str()]]] = true;
                }
            }
            LabelPayload::Events { .. } => unreachable!("validated scene payload"),
        }
    }
    m
}

fn score_scene(
    manifest: &TaskManifest,
    train: &[&ClipEntry],
    test: &[&ClipEntry],
    train_seqs: &[EmbeddingSequence],
    test_seqs: &[EmbeddingSequence],
    fusion_cfg: &FusionConfig,
    probe_cfg: &ProbeConfig,
) -> Result<Scored> {
    let x_train = scene_features(train_seqs, fusion_cfg)?;
    let x_test = scene_features(test_seqs, fusion_cfg)?;
    let scaler = Standardizer::fit(x_train.view());
    let (x_train, x_test) = (
        scaler.transform(x_train.view()),
        scaler.transform(x_test.view()),
    );
    let k = manifest.label_vocab.len();

    let targets = match manifest.kind {
        TaskKind::SceneClassification => Targets::classes(class_ids(manifest, train), k),
        _ => Targets::Multilabel(label_matrix(manifest, train).mapv(|b| f64::from(u8::from(b)))),
    };
    let fit = train_probe(x_train.view(), &targets, probe_cfg)?;
    let value = match manifest.metric {
        MetricKind::Accuracy => {
            let pred = fit.model.predict(x_test.view())?;
            accuracy(&pred, &class_ids(manifest, test))?
        }
        MetricKind::Map => {
            let scores = fit.model.predict_proba(x_test.view())?;
            mean_average_precision(scores.view(), label_matrix(manifest, test).view())?.value
        }
        MetricKind::OnsetFms => unreachable!("validated metric for scene task"),
    };
    Ok(Scored {
        value,
        input_dim: x_train.ncols(),
        degenerate: fit.degenerate_labels,
    })
}

fn reference_events(manifest: &TaskManifest, clip: &ClipEntry) -> Result<EventList> {
    let index = manifest.label_index();
    match &clip.payload {
        LabelPayload::Events { events } => EventList::new(
            events
                .iter()
                .map(|e| Onset {
                    time_s: e.onset_s,
                    label: index[e.label.as_str()],
                })
                .collect(),
        ),
        _ => unreachable!("validated event payload"),
    }
}

/// Frame `i` is positive for class `k` when some onset of `k` satisfies
/// `onset <= t_i < onset + window_s`.
pub fn frame_targets(
    events: &EventList,
    times: &[f64],
    classes: usize,
    window_s: f64,
) -> Array2<f64> {
    let mut y = Array2::zeros((times.len(), classes));
    for onset in events.onsets() {
        for (i, &t) in times.iter().enumerate() {
            if onset.time_s <= t && t < onset.time_s + window_s {
                y[[i, onset.label]] = 1.0;
            }
        }
    }
    y
}

fn score_events(
    manifest: &TaskManifest,
    train: &[&ClipEntry],
    test: &[&ClipEntry],
    train_seqs: &[EmbeddingSequence],
    test_seqs: &[EmbeddingSequence],
    probe_cfg: &ProbeConfig,
    opts: &RunOptions,
) -> Result<Scored> {
    let k = manifest.label_vocab.len();
    let window = opts.eventizer.min_duration_s;
    let mut y_rows = Vec::with_capacity(train.len());
    for (clip, seq) in train.iter().zip(train_seqs) {
        let events = reference_events(manifest, clip)?;
        y_rows.push(frame_targets(&events, &seq.frame_times(), k, window));
    }
    let x_rows: Vec<_> = train_seqs.iter().map(to_f64).collect();
    let x_train = stack_rows(&x_rows);
    let y_train = stack_rows(&y_rows);
    let scaler = Standardizer::fit(x_train.view());
    let x_train = scaler.transform(x_train.view());
    let fit = train_probe(x_train.view(), &Targets::Multilabel(y_train), probe_cfg)?;

    let mut counts = OnsetCounts::default();
    for (clip, seq) in test.iter().zip(test_seqs) {
        let x = scaler.transform(to_f64(seq).view());
        let probs = fit.model.predict_proba(x.view())?;
        let predicted = eventize(probs.view(), &seq.frame_times(), &opts.eventizer)?;
        let reference = reference_events(manifest, clip)?;
        counts = counts + onset_counts(&predicted, &reference, opts.onset_tolerance_s)?;
    }
    Ok(Scored {
        value: counts.score().f1,
        input_dim: x_train.ncols(),
        degenerate: fit.degenerate_labels,
    })
}
