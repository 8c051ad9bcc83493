//! Deterministic stand-in extractors with heterogeneous `(L, T, C)`, and a
//! synthetic two-factor corpus they can be evaluated on.

mod audio;
mod extractors;
mod task;

pub use audio::{frame, frame_count, frame_geometry, AudioClip};
pub use extractors::{
    band_centers_hz, counter_uniform, extract, extract_pitch_salience, extract_projection_stack,
    extract_spectral, filterbank_edges_hz, normalized_autocorrelation, pitch_lags, ExtractorKind,
    ExtractorSpec, PROJECTION_FRONT_END_BANDS,
};
pub use task::{make_synthetic_task, SyntheticCorpus, SyntheticTaskParams};
