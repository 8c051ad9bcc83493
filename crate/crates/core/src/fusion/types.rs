use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_timing(frame_rate_hz: f64, t_start_s: f64) -> Result<()> {
    if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
        return Err(Error::Validation(format!(
            "frame rate must be positive and finite, got {frame_rate_hz}"
        )));
    }
    if !(t_start_s.is_finite() && t_start_s >= 0.0) {
        return Err(Error::Validation(format!(
            "start time must be non-negative and finite, got {t_start_s}"
        )));
    }
    Ok(())
}

fn check_matrix(what: &str, m: ArrayView2<'_, f32>) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(Error::Validation(format!(
            "{what} must be at least 1x1, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if let Some(((t, c), v)) = m.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Validation(format!(
            "{what} holds non-finite value {v} at ({t}, {c})"
        )));
    }
    Ok(())
}

/// Hidden states of every layer of one extractor for one clip.
///
/// All layers share one `T x C` shape and one frame timing.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    layers: Vec<Array2<f32>>,
    frame_rate_hz: f64,
    t_start_s: f64,
}

impl LayerStack {
    pub fn new(layers: Vec<Array2<f32>>, frame_rate_hz: f64, t_start_s: f64) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Validation("layer stack needs at least one layer".into()))?;
        let shape = first.dim();
        for (i, layer) in layers.iter().enumerate() {
            if layer.dim() != shape {
                return Err(Error::Shape(format!(
                    "layer {i} is {:?}, layer 0 is {:?}",
                    layer.dim(),
                    shape
                )));
            }
            check_matrix(&format!("layer {i}"), layer.view())?;
        }
        check_timing(frame_rate_hz, t_start_s)?;
        Ok(Self {
            layers,
            frame_rate_hz,
            t_start_s,
        })
    }

    pub fn layers(&self) -> &[Array2<f32>] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn frames(&self) -> usize {
        self.layers[0].nrows()
    }

    pub fn channels(&self) -> usize {
        self.layers[0].ncols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn t_start_s(&self) -> f64 {
        self.t_start_s
    }

    /// The final layer as a sequence carrying the stack's timing.
    pub fn last_layer(&self) -> EmbeddingSequence {
        EmbeddingSequence {
            data: self.layers[self.layers.len() - 1].clone(),
            frame_rate_hz: self.frame_rate_hz,
            t_start_s: self.t_start_s,
        }
    }

    pub fn layer(&self, index: usize) -> Option<EmbeddingSequence> {
        self.layers.get(index).map(|data| EmbeddingSequence {
            data: data.clone(),
            frame_rate_hz: self.frame_rate_hz,
            t_start_s: self.t_start_s,
        })
    }

    pub fn into_layers(self) -> Vec<Array2<f32>> {
        self.layers
    }
}

/// A `T x C` timestamp embedding. Row `i` is centred at
/// `t_start_s + i / frame_rate_hz`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Array2<f32>,
    frame_rate_hz: f64,
    t_start_s: f64,
}

impl EmbeddingSequence {
    pub fn new(data: Array2<f32>, frame_rate_hz: f64, t_start_s: f64) -> Result<Self> {
        check_matrix("sequence", data.view())?;
        check_timing(frame_rate_hz, t_start_s)?;
        Ok(Self {
            data,
            frame_rate_hz,
            t_start_s,
        })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(data: Array2<f32>, frame_rate_hz: f64, t_start_s: f64) -> Self {
        debug_assert!(data.nrows() > 0 && data.ncols() > 0);
        Self {
            data,
            frame_rate_hz,
            t_start_s,
        }
    }

    pub fn data(&self) -> &Array2<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f32> {
        self.data
    }

    pub fn frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn t_start_s(&self) -> f64 {
        self.t_start_s
    }

    pub fn frame_time(&self, row: usize) -> f64 {
        self.t_start_s + row as f64 / self.frame_rate_hz
    }

    pub fn frame_times(&self) -> Vec<f64> {
        (0..self.frames()).map(|i| self.frame_time(i)).collect()
    }

    /// Same data, different timing.
    pub fn with_timing(self, frame_rate_hz: f64, t_start_s: f64) -> Result<Self> {
        check_timing(frame_rate_hz, t_start_s)?;
        Ok(Self {
            frame_rate_hz,
            t_start_s,
            ..self
        })
    }

    pub(crate) fn same_timing(&self, other: &Self) -> bool {
        self.frame_rate_hz == other.frame_rate_hz && self.t_start_s == other.t_start_s
    }
}

/// One fixed-length vector summarising a whole clip.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneVector {
    values: Array1<f32>,
}

impl SceneVector {
    pub fn new(values: Array1<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Validation("scene vector must be non-empty".into()));
        }
        if let Some((i, v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "scene vector holds non-finite value {v} at {i}"
            )));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_values(values: Array1<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &Array1<f32> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Array1<f32> {
        self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Concat,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    Mean,
    Grouped,
}

pub const DEFAULT_GROUP_COUNT: usize = 5;

fn default_true() -> bool {
    true
}

fn default_group_count() -> usize {
    DEFAULT_GROUP_COUNT
}

fn default_combine() -> Combine {
    Combine::Concat
}

fn default_scene_mode() -> SceneMode {
    SceneMode::Mean
}

/// One extractor in an ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionMember {
    pub id: String,
    /// Mean over all layers when set; otherwise only the last layer is used.
    #[serde(default = "default_true")]
    pub aggregate_layers: bool,
}

impl FusionMember {
    pub fn new(id: impl Into<String>, aggregate_layers: bool) -> Self {
        Self {
            id: id.into(),
            aggregate_layers,
        }
    }
}

/// How an ensemble of extractors is turned into one sequence and one scene vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionConfig {
    pub members: Vec<FusionMember>,
    #[serde(default = "default_combine")]
    pub combine: Combine,
    /// Every member is resampled to this member's `(T, C)`. Defaults to the first member.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_member: Option<String>,
    #[serde(default = "default_scene_mode")]
    pub scene_mode: SceneMode,
    #[serde(default = "default_group_count")]
    pub group_count: usize,
}

impl FusionConfig {
    /// Concatenation of `members` with layer aggregation, first member as reference.
    pub fn concat<I, S>(members: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            members: members
                .into_iter()
                .map(|id| FusionMember::new(id, true))
                .collect(),
            combine: Combine::Concat,
            reference_member: None,
            scene_mode: SceneMode::Mean,
            group_count: DEFAULT_GROUP_COUNT,
        }
    }

    pub fn with_combine(mut self, combine: Combine) -> Self {
        self.combine = combine;
        self
    }

    pub fn with_aggregation(mut self, aggregate_layers: bool) -> Self {
        for m in &mut self.members {
            m.aggregate_layers = aggregate_layers;
        }
        self
    }

    pub fn with_reference(mut self, id: impl Into<String>) -> Self {
        self.reference_member = Some(id.into());
        self
    }

    pub fn grouped(mut self, k: usize) -> Self {
        self.scene_mode = SceneMode::Grouped;
        self.group_count = k;
        self
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.id.as_str())
    }

    /// The member whose dimensions everyone is resampled to.
    pub fn reference(&self) -> Option<&str> {
        match &self.reference_member {
            Some(id) => Some(id.as_str()),
            None => self.members.first().map(|m| m.id.as_str()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::Config("fusion needs at least one member".into()));
        }
        for (i, m) in self.members.iter().enumerate() {
            if self.members[..i].iter().any(|p| p.id == m.id) {
                return Err(Error::Config(format!("member {:?} listed twice", m.id)));
            }
        }
        let reference = self.reference().unwrap_or_default();
        if !self.members.iter().any(|m| m.id == reference) {
            return Err(Error::Config(format!(
                "reference member {reference:?} is not among the members"
            )));
        }
        if self.group_count == 0 {
            return Err(Error::Config("group count must be at least 1".into()));
        }
        Ok(())
    }
}
