//! Ready-made evaluation setup over the synthetic two-factor corpus.
//!
//! Three extractors with different `(L, T, C)`:
//!
//! | id         | kind             | window / hop | L | C  | sees              |
//! |------------|------------------|--------------|---|----|-------------------|
//! | `spectral` | spectral         | 25 / 10 ms   | 1 | 32 | tone (1.5-7.8 kHz) |
//! | `pitch`    | pitch salience   | 40 / 20 ms   | 1 | 32 | modulation rate   |
//! | `proj`     | projection stack | 25 / 20 ms   | 4 | 48 | full band         |
//!
//! Three tasks: `tone` (factor 1), `rate` (factor 2) and `joint` (their
//! product). Replicates with index `r % 3 == 2` form the test split.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::manifest::{ClipEntry, LabelPayload, MetricKind, Split, TaskKind, TaskManifest};
use super::store::{EmbeddingStore, MemoryStore};
use super::suite::{SuiteConfig, VariantEntry, PRESETS};
use crate::error::{Error, Result};
use crate::fusion::LayerStack;
use crate::metrics::{EventizerConfig, DEFAULT_ONSET_TOLERANCE_S};
use crate::probe::ProbeConfig;
use crate::synth::{extract, AudioClip, ExtractorSpec, SyntheticCorpus};

pub const SPECTRAL_ID: &str = "spectral";
pub const PITCH_ID: &str = "pitch";
pub const PROJECTION_ID: &str = "proj";

pub fn default_extractors() -> Vec<ExtractorSpec> {
    vec![
        ExtractorSpec::spectral(SPECTRAL_ID, 32).with_band(1500.0, 7800.0),
        ExtractorSpec::pitch_salience(PITCH_ID, 32)
            .with_frames(0.04, 0.02)
            .with_f0_range(50.0, 200.0),
        ExtractorSpec::projection_stack(PROJECTION_ID, 48, 4, 17).with_frames(0.025, 0.02),
    ]
}

pub fn split_of(replicate: usize) -> Split {
    if replicate % 3 == 2 {
        Split::Test
    } else {
        Split::Train
    }
}

fn task(
    corpus: &SyntheticCorpus,
    task_id: &str,
    vocab: Vec<String>,
    label_of: impl Fn(usize) -> usize,
) -> TaskManifest {
    let clips = (0..corpus.clips.len())
        .map(|i| ClipEntry {
            clip_id: corpus.clip_ids[i].clone(),
            split: split_of(corpus.replicate[i]),
            payload: LabelPayload::Class {
                label: vocab[label_of(i)].clone(),
            },
        })
        .collect();
    TaskManifest {
        task_id: task_id.to_string(),
        kind: TaskKind::SceneClassification,
        metric: MetricKind::Accuracy,
        label_vocab: vocab,
        clips,
    }
}

/// `tone` and, for two-factor corpora, `rate` and `joint`.
pub fn synthetic_manifests(corpus: &SyntheticCorpus) -> Vec<TaskManifest> {
    let k = corpus.classes_per_factor;
    let tones: Vec<String> = (0..k).map(|c| format!("tone_{c}")).collect();
    let mut out = vec![task(corpus, "tone", tones, |i| corpus.labels[0][i])];
    if corpus.labels.len() == 2 {
        let rates: Vec<String> = (0..k).map(|c| format!("rate_{c}")).collect();
        out.push(task(corpus, "rate", rates, |i| corpus.labels[1][i]));
        let joint: Vec<String> = (0..k * k)
            .map(|c| format!("tone_{}_rate_{}", c / k, c % k))
            .collect();
        out.push(task(corpus, "joint", joint, |i| corpus.joint_label(i)));
    }
    out
}

/// Runs every extractor over every clip; results are ordered extractor-major.
pub fn extract_all(
    clip_ids: &[String],
    clips: &[AudioClip],
    specs: &[ExtractorSpec],
) -> Result<Vec<(String, String, LayerStack)>> {
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..clips.len()).map(move |c| (s, c)))
        .collect();
    jobs.par_iter()
        .map(|&(s, c)| {
            let stack = extract(&clips[c], &specs[s]).map_err(|e| match e {
                Error::Input(msg) => Error::Input(format!("{}: {msg}", clip_ids[c])),
                other => other,
            })?;
            Ok((specs[s].id.clone(), clip_ids[c].clone(), stack))
        })
        .collect()
}

pub fn extract_corpus(corpus: &SyntheticCorpus, specs: &[ExtractorSpec]) -> Result<MemoryStore> {
    let mut store = MemoryStore::new();
    for (extractor, clip, stack) in extract_all(&corpus.clip_ids, &corpus.clips, specs)? {
        store.insert(extractor, clip, stack);
    }
    Ok(store)
}

/// Probe settings the synthetic experiments use.
pub fn default_probe() -> ProbeConfig {
    ProbeConfig {
        epochs: 200,
        ..ProbeConfig::default()
    }
}

/// Every preset over `spectral, pitch, proj`, plus single-member variants
/// for the other two extractors, with the projection stack both
/// layer-averaged and last-layer only.
pub fn default_variants() -> Vec<VariantEntry> {
    let single = |name: &str, preset: &str, member: &str| VariantEntry::Custom {
        name: name.to_string(),
        preset: Some(preset.to_string()),
        members: Some(vec![member.to_string()]),
        fusion: None,
    };
    let mut out: Vec<VariantEntry> = PRESETS
        .iter()
        .map(|p| VariantEntry::Preset(p.to_string()))
        .collect();
    out.push(single("pitch_single", "fusion_single", PITCH_ID));
    out.push(single("proj_single", "fusion_single", PROJECTION_ID));
    out.push(single(
        "proj_last_layer",
        "last_layer_single",
        PROJECTION_ID,
    ));
    out
}

/// Suite over `<dir>/store` and `<dir>/tasks/*.json`, with paths relative to `dir`.
pub fn synthetic_suite(task_ids: &[String], seed: u64) -> SuiteConfig {
    SuiteConfig {
        seed,
        store: PathBuf::from("store"),
        tasks: task_ids
            .iter()
            .map(|t| PathBuf::from(format!("tasks/{t}.json")))
            .collect(),
        members: [SPECTRAL_ID, PITCH_ID, PROJECTION_ID]
            .map(String::from)
            .to_vec(),
        variants: default_variants(),
        probe: default_probe(),
        eventizer: EventizerConfig::default(),
        onset_tolerance_s: DEFAULT_ONSET_TOLERANCE_S,
    }
}

/// Writes the task manifests to `<dir>/tasks/` and returns their ids.
pub fn write_manifests(dir: &Path, corpus: &SyntheticCorpus) -> Result<Vec<String>> {
    let tasks_dir = dir.join("tasks");
    std::fs::create_dir_all(&tasks_dir).map_err(|e| Error::io(&tasks_dir, e))?;
    synthetic_manifests(corpus)
        .into_iter()
        .map(|m| {
            m.save(tasks_dir.join(format!("{}.json", m.task_id)))?;
            Ok(m.task_id)
        })
        .collect()
}

pub fn write_suite_config(path: &Path, cfg: &SuiteConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(cfg).expect("suite config serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Extracts `<dir>/store`, writes the manifests and `<dir>/suite.json`,
/// and returns the suite path.
pub fn write_synthetic_suite(
    dir: &Path,
    corpus: &SyntheticCorpus,
    specs: &[ExtractorSpec],
    seed: u64,
) -> Result<PathBuf> {
    let mut store = EmbeddingStore::create(dir.join("store"))?;
    for (extractor, clip, stack) in extract_all(&corpus.clip_ids, &corpus.clips, specs)? {
        store.insert(&extractor, &clip, &stack)?;
    }
    store.save_index()?;
    let task_ids = write_manifests(dir, corpus)?;
    let path = dir.join("suite.json");
    write_suite_config(&path, &synthetic_suite(&task_ids, seed))?;
    Ok(path)
}
