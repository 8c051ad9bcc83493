//! Task manifests: clips, their split and labels, and the metric to report.
//!
//! ```json
//! {
//!   "task_id": "tone",
//!   "kind": "scene_classification",
//!   "metric": "accuracy",
//!   "label_vocab": ["low", "high"],
//!   "clips": [
//!     {"clip_id": "clip_0000", "split": "train", "label": "low"},
//!     {"clip_id": "clip_0001", "split": "test", "label": "high"}
//!   ]
//! }
//! ```
//!
//! Multilabel clips carry `"labels": [...]`; event clips carry
//! `"events": [{"onset_s": 0.25, "label": "..."}]`.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    SceneClassification,
    SceneMultilabel,
    EventDetection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Accuracy,
    Map,
    OnsetFms,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Accuracy => "accuracy",
            MetricKind::Map => "map",
            MetricKind::OnsetFms => "onset_fms",
        }
    }

    pub fn compatible_with(self, kind: TaskKind) -> bool {
        matches!(
            (kind, self),
            (
                TaskKind::SceneClassification,
                MetricKind::Accuracy | MetricKind::Map
            ) | (TaskKind::SceneMultilabel, MetricKind::Map)
                | (TaskKind::EventDetection, MetricKind::OnsetFms)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventLabel {
    pub onset_s: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelPayload {
    Class { label: String },
    Multi { labels: Vec<String> },
    Events { events: Vec<EventLabel> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub split: Split,
    #[serde(flatten)]
    pub payload: LabelPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task_id: String,
    pub kind: TaskKind,
    pub metric: MetricKind,
    pub label_vocab: Vec<String>,
    pub clips: Vec<ClipEntry>,
}

impl TaskManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: TaskManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Config(format!("task {}: {msg}", self.task_id));
        if self.label_vocab.is_empty() {
            return Err(err("empty label vocabulary".into()));
        }
        let vocab: BTreeSet<&str> = self.label_vocab.iter().map(String::as_str).collect();
        if vocab.len() != self.label_vocab.len() {
            return Err(err("duplicate label in vocabulary".into()));
        }
        if !self.metric.compatible_with(self.kind) {
            return Err(err(format!(
                "metric {} does not fit task kind {:?}",
                self.metric.name(),
                self.kind
            )));
        }
        let mut seen = BTreeSet::new();
        for clip in &self.clips {
            if !seen.insert(clip.clip_id.as_str()) {
                return Err(err(format!("clip {} listed more than once", clip.clip_id)));
            }
            let labels: Vec<&str> = match (&clip.payload, self.kind) {
                (LabelPayload::Class { label }, TaskKind::SceneClassification) => vec![label],
                (LabelPayload::Multi { labels }, TaskKind::SceneMultilabel) => {
                    labels.iter().map(String::as_str).collect()
                }
                (LabelPayload::Events { events }, TaskKind::EventDetection) => {
                    if let Some(e) = events
                        .iter()
                        .find(|e| !(e.onset_s.is_finite() && e.onset_s >= 0.0))
                    {
                        return Err(err(format!(
                            "clip {}: bad onset time {}",
                            clip.clip_id, e.onset_s
                        )));
                    }
                    events.iter().map(|e| e.label.as_str()).collect()
                }
                _ => {
                    return Err(err(format!(
                        "clip {} label payload does not fit task kind {:?}",
                        clip.clip_id, self.kind
                    )))
                }
            };
            if let Some(bad) = labels.iter().find(|l| !vocab.contains(*l)) {
                return Err(err(format!(
                    "clip {}: label {bad:?} not in vocabulary",
                    clip.clip_id
                )));
            }
        }
        Ok(())
    }

    pub fn label_index(&self) -> HashMap<&str, usize> {
        self.label_vocab
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }

    pub fn clips_in(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}
