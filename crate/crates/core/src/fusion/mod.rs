//! Tensor containers and the fusion operations: layer aggregation,
//! resampling to a reference member, concatenation or averaging, and
//! scene pooling.

mod ops;
mod types;

pub use ops::{
    average_features, concat_features, fuse, fuse_with, group_bounds, grouped_pool,
    layer_aggregate, mean_pool, resample, scene_dim, scene_embed,
};
pub use types::{
    Combine, EmbeddingSequence, FusionConfig, FusionMember, LayerStack, SceneMode, SceneVector,
    DEFAULT_GROUP_COUNT,
};
