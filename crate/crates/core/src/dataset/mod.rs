//! Manifest ingestion, sharded job execution with checkpointing,
//! synthetic-variant emission, mixing, long-tail augmentation, and corpus
//! statistics.

mod job;
mod manifest;
mod mix;
mod record;
mod stats;
mod tail;

pub use job::{
    config_digest, run_synthesis_job, JobCheckpoint, JobError, JobOutcome, JobSpec, ShardCounts,
    DEFAULT_CHECKPOINT_EVERY,
};
pub use manifest::{ingest_manifest, Manifest, ManifestError, ManifestHeader, MixInfo};
pub use mix::{epoch_budget, mix_manifests, MixConfig, MixError, MixRule};
pub use record::{Origin, PolicyIds, Provenance, SampleRecord};
pub use stats::{
    compute_stats, histogram_csv, word_count, HistogramBin, ManifestStats, WORD_BIN_MAX,
    WORD_BIN_WIDTH,
};
pub use tail::{
    augment_tail_classes, TailError, TailOutcome, DEFAULT_PER_CLASS, DEFAULT_TAIL_THRESHOLD,
    TAIL_PATH_NAME,
};
