//! Evaluation harness: embedding files and stores, task manifests, and
//! the runner that turns (task, fusion variant) cells into report rows.

pub mod emb1;
pub mod manifest;
pub mod run;
pub mod store;
pub mod suite;
pub mod synthetic;

pub use emb1::{
    decode_embedding, decode_header, encode_embedding, load_embedding, read_header,
    write_embedding, Emb1Header, DTYPE_F32, HEADER_LEN, MAGIC, VERSION,
};
pub use manifest::{
    ClipEntry, EventLabel, LabelPayload, MetricKind, Split, TaskKind, TaskManifest,
};
pub use run::{
    effective_probe, frame_targets, missing_embeddings, probe_digest, run_variant, ReportRow,
    RunOptions,
};
pub use store::{EmbeddingStore, IndexEntry, MemoryStore, StackSource, INDEX_FILE};
pub use suite::{
    cell_seed, preset, run_cells, run_suite, RunReport, SuiteConfig, VariantEntry, PRESETS,
};
pub use synthetic::{
    default_extractors, default_probe, default_variants, extract_all, extract_corpus, split_of,
    synthetic_manifests, synthetic_suite, write_manifests, write_suite_config,
    write_synthetic_suite, PITCH_ID, PROJECTION_ID, SPECTRAL_ID,
};
