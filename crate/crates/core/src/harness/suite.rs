//! Suites: every (task x variant) cell, one global seed, a sorted report.
//!
//! ```json
//! {
//!   "seed": 7,
//!   "store": "store",
//!   "tasks": ["tasks/tone.json"],
//!   "members": ["spectral", "pitch", "proj"],
//!   "variants": ["fusion_single", "cat_pair", {"name": "pitch_only", "preset": "fusion_single", "members": ["pitch"]}],
//!   "probe": {"objective": "softmax_xent", "learning_rate": 0.1, "batch_size": 32, "epochs": 100},
//!   "eventizer": {"threshold": 0.5, "min_duration_s": 0.06, "median_window": 3},
//!   "onset_tolerance_s": 0.05
//! }
//! ```
//!
//! Relative paths resolve against the config file's directory. Presets take
//! their members from the front of `members`:
//!
//! | preset               | members | layers    | combine | scene       |
//! |----------------------|---------|-----------|---------|-------------|
//! | `last_layer_single`  | 1       | last      | concat  | mean        |
//! | `fusion_single`      | 1       | averaged  | concat  | mean        |
//! | `avg_pair`           | 2       | averaged  | average | mean        |
//! | `cat_pair`           | 2       | averaged  | concat  | mean        |
//! | `cat_triple`         | 3       | averaged  | concat  | mean        |
//! | `cat_triple_grouped` | 3       | averaged  | concat  | 5 groups    |
//!
//! A cell's probe seed is [`cell_seed`] of the global seed and the task id,
//! so every variant of a task trains from the same seed.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::manifest::TaskManifest;
use super::run::{run_variant, ReportRow, RunOptions};
use super::store::{EmbeddingStore, StackSource};
use crate::error::{Error, Result};
use crate::fusion::{Combine, FusionConfig, DEFAULT_GROUP_COUNT};
use crate::metrics::{EventizerConfig, DEFAULT_ONSET_TOLERANCE_S};
use crate::probe::ProbeConfig;

pub const PRESETS: [&str; 6] = [
    "last_layer_single",
    "fusion_single",
    "avg_pair",
    "cat_pair",
    "cat_triple",
    "cat_triple_grouped",
];

/// Fusion config of a named preset over `members`.
pub fn preset(name: &str, members: &[String]) -> Result<FusionConfig> {
    let need = match name {
        "last_layer_single" | "fusion_single" => 1,
        "avg_pair" | "cat_pair" => 2,
        "cat_triple" | "cat_triple_grouped" => 3,
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    if members.len() < need {
        return Err(Error::Config(format!(
            "preset {name} needs {need} members, {} given",
            members.len()
        )));
    }
    let base = FusionConfig::concat(members[..need].iter().cloned());
    Ok(match name {
        "last_layer_single" => base.with_aggregation(false),
        "avg_pair" => base.with_combine(Combine::Average),
        "cat_triple_grouped" => base.grouped(DEFAULT_GROUP_COUNT),
        _ => base,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VariantEntry {
    Preset(String),
    Custom {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        preset: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        members: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fusion: Option<FusionConfig>,
    },
}

impl VariantEntry {
    pub fn name(&self) -> &str {
        match self {
            VariantEntry::Preset(name) | VariantEntry::Custom { name, .. } => name,
        }
    }

    /// Resolves to a fusion config; an explicit `fusion` wins over a preset.
    pub fn resolve(&self, suite_members: &[String]) -> Result<FusionConfig> {
        let cfg = match self {
            VariantEntry::Preset(name) => preset(name, suite_members)?,
            VariantEntry::Custom {
                fusion: Some(f), ..
            } => f.clone(),
            VariantEntry::Custom {
                name,
                preset: p,
                members,
                fusion: None,
            } => preset(
                p.as_deref().unwrap_or(name),
                members.as_deref().unwrap_or(suite_members),
            )?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    pub store: PathBuf,
    pub tasks: Vec<PathBuf>,
    #[serde(default)]
    pub members: Vec<String>,
    pub variants: Vec<VariantEntry>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eventizer: EventizerConfig,
    #[serde(default = "default_tolerance")]
    pub onset_tolerance_s: f64,
}

fn default_tolerance() -> f64 {
    DEFAULT_ONSET_TOLERANCE_S
}

impl SuiteConfig {
    /// Parses a config and resolves its relative paths against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: SuiteConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        cfg.store = base.join(&cfg.store);
        for task in &mut cfg.tasks {
            *task = base.join(&*task);
        }
        Ok(cfg)
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            eventizer: self.eventizer,
            onset_tolerance_s: self.onset_tolerance_s,
        }
    }

    /// Named fusion configs, checked for unique names.
    pub fn resolve_variants(&self) -> Result<Vec<(String, FusionConfig)>> {
        let mut out: Vec<(String, FusionConfig)> = Vec::with_capacity(self.variants.len());
        for v in &self.variants {
            if out.iter().any(|(n, _)| n == v.name()) {
                return Err(Error::Config(format!("variant {} listed twice", v.name())));
            }
            out.push((v.name().to_string(), v.resolve(&self.members)?));
        }
        Ok(out)
    }
}

/// First 8 bytes, little-endian, of SHA-256 over the global seed's 8
/// little-endian bytes followed by the UTF-8 task id.
pub fn cell_seed(global_seed: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global_seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Rows sorted by (task, variant).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ReportRow>,
}

const CSV_HEADER: [&str; 9] = [
    "task_id",
    "variant",
    "metric",
    "value",
    "probe_input_dim",
    "fused_channels",
    "probe_digest",
    "seed",
    "status",
];

impl RunReport {
    pub fn new(mut rows: Vec<ReportRow>) -> Self {
        rows.sort_by(|a, b| (&a.task_id, &a.variant).cmp(&(&b.task_id, &b.variant)));
        Self { rows }
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.is_ok())
    }

    pub fn find(&self, task_id: &str, variant: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.task_id == task_id && r.variant == variant)
    }

    fn fields(row: &ReportRow) -> [String; 9] {
        [
            row.task_id.clone(),
            row.variant.clone(),
            row.metric.clone(),
            row.value.map(|v| format!("{v:.6}")).unwrap_or_default(),
            row.probe_input_dim.to_string(),
            row.fused_channels.to_string(),
            row.probe_digest.clone(),
            row.seed.to_string(),
            row.status.clone(),
        ]
    }

    /// Machine-readable report. Wall time is left out so reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER).expect("in-memory write");
        for row in &self.rows {
            w.write_record(Self::fields(row)).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }

    /// Aligned text table, with wall time.
    pub fn to_table(&self) -> String {
        let header = [
            "task", "variant", "metric", "value", "input", "seed", "time_s", "status",
        ];
        let rows: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.task_id.clone(),
                    r.variant.clone(),
                    r.metric.clone(),
                    r.value
                        .map(|v| format!("{v:.4}"))
                        .unwrap_or_else(|| "-".into()),
                    r.probe_input_dim.to_string(),
                    r.seed.to_string(),
                    format!("{:.2}", r.wall_time_s),
                    r.status.clone(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(header.to_vec()) + "\n";
        out += &line(
            widths
                .iter()
                .map(|&w| &"----------------------------------------"[..w.min(40)])
                .collect(),
        );
        out += "\n";
        for row in &rows {
            out += &line(row.iter().map(String::as_str).collect());
            out += "\n";
        }
        out
    }
}

/// Runs every cell over already-loaded tasks. Failing cells become error rows.
pub fn run_cells(
    tasks: &[TaskManifest],
    source: &dyn StackSource,
    variants: &[(String, FusionConfig)],
    global_seed: u64,
    probe_cfg: &ProbeConfig,
    opts: &RunOptions,
) -> RunReport {
    let cells: Vec<(&TaskManifest, &(String, FusionConfig))> = tasks
        .iter()
        .flat_map(|t| variants.iter().map(move |v| (t, v)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|(task, (name, fusion))| {
            let seed = cell_seed(global_seed, &task.task_id);
            let probe = ProbeConfig {
                seed,
                ..probe_cfg.clone()
            };
            run_variant(task, source, name, fusion, &probe, opts).unwrap_or_else(|e| {
                ReportRow::failed(&task.task_id, name, task.metric.name(), seed, &e)
            })
        })
        .collect();
    RunReport::new(rows)
}

/// Loads and verifies the store and tasks, then runs every cell.
///
/// A task that fails to load yields one error row per variant.
pub fn run_suite(cfg: &SuiteConfig) -> Result<RunReport> {
    let variants = cfg.resolve_variants()?;
    let store = EmbeddingStore::open(&cfg.store)?;
    store.verify()?;
    let mut tasks = Vec::new();
    let mut broken = Vec::new();
    for path in &cfg.tasks {
        match TaskManifest::load(path) {
            Ok(t) => tasks.push(t),
            Err(e) => {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                for (name, _) in &variants {
                    broken.push(ReportRow::failed(
                        &id,
                        name,
                        "",
                        cell_seed(cfg.seed, &id),
                        &e,
                    ));
                }
            }
        }
    }
    let mut report = run_cells(
        &tasks,
        &store,
        &variants,
        cfg.seed,
        &cfg.probe,
        &cfg.options(),
    );
    report.rows.extend(broken);
    Ok(RunReport::new(report.rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::SceneMode;

    fn members() -> Vec<String> {
        ["a", "b", "c"].map(String::from).to_vec()
    }

    #[test]
    fn presets_expand_to_ablation_axes() {
        let m = members();
        let p = |n| preset(n, &m).unwrap();
        assert!(!p("last_layer_single").members[0].aggregate_layers);
        assert!(p("fusion_single").members[0].aggregate_layers);
        assert_eq!(p("fusion_single").members.len(), 1);
        assert_eq!(p("avg_pair").combine, Combine::Average);
        assert_eq!(p("cat_pair").combine, Combine::Concat);
        assert_eq!(p("cat_pair").member_ids().collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(p("cat_triple").members.len(), 3);
        assert_eq!(p("cat_triple").scene_mode, SceneMode::Mean);
        let g = p("cat_triple_grouped");
        assert_eq!((g.scene_mode, g.group_count), (SceneMode::Grouped, 5));
        assert!(preset("cat_triple", &m[..2]).is_err());
        assert!(preset("nope", &m).is_err());
    }

    #[test]
    fn variant_entries_parse() {
        let v: Vec<VariantEntry> = serde_json::from_str(
            r#"["cat_pair",
                {"name": "pitch_only", "preset": "fusion_single", "members": ["b"]},
                {"name": "manual", "fusion": {"members": [{"id": "c"}], "combine": "average"}}]"#,
        )
        .unwrap();
        let m = members();
        assert_eq!(v[0].resolve(&m).unwrap(), preset("cat_pair", &m).unwrap());
        assert_eq!(
            v[1].resolve(&m).unwrap().member_ids().collect::<Vec<_>>(),
            ["b"]
        );
        let manual = v[2].resolve(&m).unwrap();
        assert_eq!(manual.combine, Combine::Average);
        assert_eq!(v[2].name(), "manual");
    }

    #[test]
    fn cell_seed_is_stable_and_task_specific() {
        assert_eq!(cell_seed(7, "tone"), cell_seed(7, "tone"));
        assert_ne!(cell_seed(7, "tone"), cell_seed(7, "rate"));
        assert_ne!(cell_seed(7, "tone"), cell_seed(8, "tone"));
    }

    #[test]
    fn report_sorts_and_formats() {
        let row = |t: &str, v: &str, value| ReportRow {
            task_id: t.into(),
            variant: v.into(),
            metric: "accuracy".into(),
            value,
            probe_input_dim: 4,
            fused_channels: 4,
            probe_digest: "00".into(),
            seed: 1,
            wall_time_s: 0.5,
            degenerate: false,
            status: "ok".into(),
        };
        let r = RunReport::new(vec![
            row("b", "x", Some(0.5)),
            row("a", "y", None),
            row("a", "x", Some(1.0)),
        ]);
        let order: Vec<_> = r
            .rows
            .iter()
            .map(|r| (r.task_id.as_str(), r.variant.as_str()))
            .collect();
        assert_eq!(order, [("a", "x"), ("a", "y"), ("b", "x")]);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(
            lines[0],
            "task_id,variant,metric,value,probe_input_dim,fused_channels,probe_digest,seed,status"
        );
        assert_eq!(lines[1], "a,x,accuracy,1.000000,4,4,00,1,ok");
        assert_eq!(lines[2], "a,y,accuracy,,4,4,00,1,ok");
        assert_eq!(r.to_table().lines().count(), 5);
    }
}
