//! Sharded synthesis jobs: execute a path per record, pair the variant,
//! filter, and emit passed records in input order — committing progress per
//! shard so a killed job resumes exactly where it stopped.
//!
//! Commit protocol: processed entries are appended to a per-shard partial
//! log and fsynced, then the shard checkpoint is replaced atomically. On
//! resume the partial log is truncated to the committed count, so entries
//! that missed their checkpoint are simply reprocessed; with deterministic
//! backends the reprocessed entries are byte-identical and the final
//! manifest is the same as from an uninterrupted run.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::Backends;
use crate::filter::{
    evaluate_candidate, FilterCandidate, FilterConfig, FilterDecision, FilterReport,
};
use crate::path::{
    derive_sample_seed, execute_path, pair_outputs, ExecutionContext, PathInput, SampleVariant,
    SynthesisPath,
};
use crate::policy::{ImagePolicy, TemplateRegistry, TextPolicy};

use super::manifest::{Manifest, ManifestHeader};
use super::record::SampleRecord;

/// Records committed per shard between checkpoints.
pub const DEFAULT_CHECKPOINT_EVERY: usize = 256;

#[derive(Debug, Error)]
pub enum JobError {
    #[error("invalid job config: {0}")]
    InvalidConfig(String),
    #[error(
        "checkpoint {path} was written by config {found}, current config is {expected}; refusing to resume"
    )]
    CheckpointMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("checkpoint {path} claims {committed} committed records but the partial log has {available}")]
    TruncatedPartial {
        path: String,
        committed: usize,
        available: usize,
    },
    #[error("shard {0} worker panicked")]
    ShardPanicked(usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_at(path: &Path) -> impl FnOnce(io::Error) -> JobError + '_ {
    move |source| JobError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Everything a synthesis job needs beyond the input manifest.
#[derive(Debug, Clone)]
pub struct JobSpec {
    pub job_id: String,
    /// Directory for checkpoints and partial logs.
    pub job_dir: PathBuf,
    pub path: SynthesisPath,
    pub path_name: String,
    pub variant: SampleVariant,
    pub text_policy: TextPolicy,
    pub image_policy: ImagePolicy,
    pub filter: FilterConfig,
    pub shards: usize,
    pub seed: u64,
    /// Digest of the validated caller config; stamps outputs and guards
    /// resume.
    pub config_digest: String,
    pub checkpoint_every: usize,
    /// Name for the output manifest header.
    pub output_name: String,
}

impl JobSpec {
    fn validate(&self) -> Result<(), JobError> {
        if self.shards < 1 {
            return Err(JobError::InvalidConfig("shards must be >= 1".to_string()));
        }
        if self.checkpoint_every < 1 {
            return Err(JobError::InvalidConfig(
                "checkpoint_every must be >= 1".to_string(),
            ));
        }
        self.filter.validate().map_err(JobError::InvalidConfig)?;
        self.image_policy
            .validate()
            .map_err(|e| JobError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardCounts {
    pub passed: usize,
    pub rejected: usize,
    pub quarantined: usize,
}

/// Per-shard progress marker. Resume refuses to run when the digest does not
/// match the current config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobCheckpoint {
    pub job_id: String,
    pub shard_index: usize,
    pub committed: usize,
    pub total_in_shard: usize,
    pub done: bool,
    pub counts: ShardCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_committed_id: Option<String>,
    pub config_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "lowercase")]
enum ProcessedStatus {
    Pass { record: SampleRecord, ratio: f64 },
    Reject { ratio: f64, reason: String },
    Quarantined { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProcessedRecord {
    index: usize,
    id: String,
    #[serde(flatten)]
    status: ProcessedStatus,
}

#[derive(Debug)]
pub struct JobOutcome {
    pub manifest: Manifest,
    pub report: FilterReport,
}

/// Stable hex digest of any serializable config.
pub fn config_digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Run (or resume) a synthesis job over the manifest. Passed records come
/// back in input order; per-record failures are quarantined with their stage
/// label and the job carries on.
pub fn run_synthesis_job(
    backends: &Backends,
    registry: &TemplateRegistry,
    input: &Manifest,
    spec: &JobSpec,
    resume: bool,
) -> Result<JobOutcome, JobError> {
    spec.validate()?;
    fs::create_dir_all(&spec.job_dir).map_err(io_at(&spec.job_dir))?;

    let total = input.records.len();
    let shard_count = spec.shards.min(total).max(1);
    let slices = shard_slices(total, shard_count);

    let results: Vec<Result<Vec<ProcessedRecord>, JobError>> = thread::scope(|scope| {
        let mut handles = Vec::new();
        for (shard_index, (start, end)) in slices.iter().copied().enumerate() {
            let records = &input.records[start..end];
            handles.push(scope.spawn(move || {
                run_shard(backends, registry, spec, records, shard_index, start, resume)
            }));
        }
        handles
            .into_iter()
            .enumerate()
            .map(|(i, handle)| handle.join().unwrap_or(Err(JobError::ShardPanicked(i))))
            .collect()
    });

    let mut entries = Vec::with_capacity(total);
    for result in results {
        entries.extend(result?);
    }
    entries.sort_by_key(|e| e.index);

    let mut report = FilterReport::default();
    let mut records = Vec::new();
    for entry in entries {
        let decision = match entry.status {
            ProcessedStatus::Pass { record, ratio } => {
                records.push(record);
                FilterDecision::Pass { ratio }
            }
            ProcessedStatus::Reject { ratio, reason } => FilterDecision::Reject { ratio, reason },
            ProcessedStatus::Quarantined { reason } => FilterDecision::Quarantined { reason },
        };
        report.tally(&entry.id, &decision);
    }

    let manifest = Manifest {
        header: ManifestHeader {
            name: spec.output_name.clone(),
            variant: Some(spec.variant.name().to_string()),
            config_digest: Some(spec.config_digest.clone()),
            count: records.len(),
            mix: None,
        },
        records,
    };
    Ok(JobOutcome { manifest, report })
}

/// Contiguous, near-even shard ranges covering `total` records.
fn shard_slices(total: usize, shards: usize) -> Vec<(usize, usize)> {
    let base = total / shards;
    let remainder = total % shards;
    let mut out = Vec::with_capacity(shards);
    let mut start = 0;
    for i in 0..shards {
        let len = base + usize::from(i < remainder);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn run_shard(
    backends: &Backends,
    registry: &TemplateRegistry,
    spec: &JobSpec,
    records: &[SampleRecord],
    shard_index: usize,
    global_offset: usize,
    resume: bool,
) -> Result<Vec<ProcessedRecord>, JobError> {
    let ckpt_path = spec.job_dir.join(format!("shard-{shard_index}.ckpt.json"));
    let partial_path = spec.job_dir.join(format!("shard-{shard_index}.partial.jsonl"));

    let mut committed: Vec<ProcessedRecord> = Vec::new();
    if resume && ckpt_path.exists() {
        let ckpt = read_checkpoint(&ckpt_path)?;
        if ckpt.config_digest != spec.config_digest {
            return Err(JobError::CheckpointMismatch {
                path: ckpt_path.display().to_string(),
                expected: spec.config_digest.clone(),
                found: ckpt.config_digest,
            });
        }
        let entries = read_partial(&partial_path)?;
        if entries.len() < ckpt.committed {
            return Err(JobError::TruncatedPartial {
                path: partial_path.display().to_string(),
                committed: ckpt.committed,
                available: entries.len(),
            });
        }
        committed = entries.into_iter().take(ckpt.committed).collect();
        // Entries past the checkpoint never committed; drop and reprocess.
        write_partial(&partial_path, &committed)?;
    } else {
        let _ = fs::remove_file(&partial_path);
        write_checkpoint(
            &ckpt_path,
            spec,
            shard_index,
            records.len(),
            &committed,
            false,
        )?;
    }

    let ctx = ExecutionContext {
        backends,
        registry,
        text_policy: &spec.text_policy,
        image_policy: &spec.image_policy,
    };

    let mut pending: Vec<ProcessedRecord> = Vec::new();
    for (local, record) in records.iter().enumerate().skip(committed.len()) {
        let status = process_record(&ctx, backends, spec, record);
        pending.push(ProcessedRecord {
            index: global_offset + local,
            id: record.id.clone(),
            status,
        });
        if pending.len() >= spec.checkpoint_every {
            commit(
                &ckpt_path,
                &partial_path,
                spec,
                shard_index,
                records.len(),
                &mut committed,
                &mut pending,
                false,
            )?;
        }
    }
    commit(
        &ckpt_path,
        &partial_path,
        spec,
        shard_index,
        records.len(),
        &mut committed,
        &mut pending,
        true,
    )?;
    Ok(committed)
}

/// Execute, pair, and filter one record. Every failure mode maps to a status
/// naming its stage; nothing here aborts the shard.
fn process_record(
    ctx: &ExecutionContext<'_>,
    backends: &Backends,
    spec: &JobSpec,
    record: &SampleRecord,
) -> ProcessedStatus {
    let seed = derive_sample_seed(spec.seed, &record.id, &spec.path_name);
    let input = PathInput::from_record(record);
    let exec = match execute_path(ctx, &spec.path, &spec.path_name, &input, seed) {
        Ok(exec) => exec,
        Err(e) => {
            return ProcessedStatus::Quarantined {
                reason: e.to_string(),
            }
        }
    };
    let sample = match pair_outputs(&exec, spec.variant, record) {
        Ok(sample) => sample,
        Err(e) => {
            return ProcessedStatus::Quarantined {
                reason: e.to_string(),
            }
        }
    };
    let candidate = FilterCandidate {
        record: sample,
        tags: exec.tags().cloned(),
        starting_text: exec.image_source_text().map(str::to_string),
    };
    match evaluate_candidate(backends, &candidate, &spec.filter) {
        FilterDecision::Pass { ratio } => {
            let mut record = candidate.record;
            if let Some(prov) = record.provenance.as_mut() {
                prov.filter_ratio = Some(ratio);
            }
            ProcessedStatus::Pass { record, ratio }
        }
        FilterDecision::Reject { ratio, reason } => ProcessedStatus::Reject { ratio, reason },
        FilterDecision::Quarantined { reason } => ProcessedStatus::Quarantined { reason },
    }
}

#[allow(clippy::too_many_arguments)]
fn commit(
    ckpt_path: &Path,
    partial_path: &Path,
    spec: &JobSpec,
    shard_index: usize,
    total_in_shard: usize,
    committed: &mut Vec<ProcessedRecord>,
    pending: &mut Vec<ProcessedRecord>,
    done: bool,
) -> Result<(), JobError> {
    if !pending.is_empty() {
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(partial_path)
            .map_err(io_at(partial_path))?;
        for entry in pending.iter() {
            let line = serde_json::to_string(entry).expect("entry serializes");
            writeln!(file, "{line}").map_err(io_at(partial_path))?;
        }
        file.sync_all().map_err(io_at(partial_path))?;
        committed.append(pending);
    }
    write_checkpoint(ckpt_path, spec, shard_index, total_in_shard, committed, done)
}

fn write_checkpoint(
    path: &Path,
    spec: &JobSpec,
    shard_index: usize,
    total_in_shard: usize,
    committed: &[ProcessedRecord],
    done: bool,
) -> Result<(), JobError> {
    let counts = ShardCounts {
        passed: committed
            .iter()
            .filter(|e| matches!(e.status, ProcessedStatus::Pass { .. }))
            .count(),
        rejected: committed
            .iter()
            .filter(|e| matches!(e.status, ProcessedStatus::Reject { .. }))
            .count(),
        quarantined: committed
            .iter()
            .filter(|e| matches!(e.status, ProcessedStatus::Quarantined { .. }))
            .count(),
    };
    let ckpt = JobCheckpoint {
        job_id: spec.job_id.clone(),
        shard_index,
        committed: committed.len(),
        total_in_shard,
        done,
        counts,
        last_committed_id: committed.last().map(|e| e.id.clone()),
        config_digest: spec.config_digest.clone(),
    };
    let bytes = serde_json::to_vec_pretty(&ckpt).expect("checkpoint serializes");
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(io_at(path))?;
    fs::rename(&tmp, path).map_err(io_at(path))
}

fn read_checkpoint(path: &Path) -> Result<JobCheckpoint, JobError> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    serde_json::from_slice(&bytes).map_err(|e| JobError::Io {
        path: path.display().to_string(),
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}

/// Parse the partial log leniently: a torn tail line (crash mid-append) is
/// ignored; the checkpoint decides what counts as committed.
fn read_partial(path: &Path) -> Result<Vec<ProcessedRecord>, JobError> {
    let file = match fs::File::open(path) {
        Ok(file) => file,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_at(path)(e)),
    };
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_at(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        match serde_json::from_str::<ProcessedRecord>(trimmed) {
            Ok(entry) => out.push(entry),
            Err(_) => break,
        }
    }
    Ok(out)
}

fn write_partial(path: &Path, entries: &[ProcessedRecord]) -> Result<(), JobError> {
    let tmp = path.with_extension("tmp");
    {
        let mut file = fs::File::create(&tmp).map_err(io_at(path))?;
        for entry in entries {
            let line = serde_json::to_string(entry).expect("entry serializes");
            writeln!(file, "{line}").map_err(io_at(path))?;
        }
        file.sync_all().map_err(io_at(path))?;
    }
    fs::rename(&tmp, path).map_err(io_at(path))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::manifest::Manifest;
    use super::*;
    use crate::backends::ImageStore;
    use crate::path::builtin_paths;
    use crate::policy::ImageStyle;

    fn fixture_manifest(n: usize) -> Manifest {
        let records = (0..n)
            .map(|i| {
                SampleRecord::real(format!("r{i:04}"))
                    .with_image(format!("img_{i:04}"))
                    .with_text(format!("fixture caption {i} with a candle"))
            })
            .collect();
        Manifest::new("fixture", None).with_records(records)
    }

    fn job_spec(dir: &Path, shards: usize) -> JobSpec {
        JobSpec {
            job_id: "test-job".to_string(),
            job_dir: dir.to_path_buf(),
            path: builtin_paths()["sp1"].clone(),
            path_name: "sp1".to_string(),
            variant: SampleVariant::Cap,
            text_policy: TextPolicy::builtin(1),
            image_policy: ImagePolicy::style(ImageStyle::Real),
            filter: FilterConfig::default(),
            shards,
            seed: 7,
            config_digest: "digest-a".to_string(),
            checkpoint_every: 16,
            output_name: "fixture-cap".to_string(),
        }
    }

    fn mock_backends(dir: &Path) -> Backends {
        let store = Arc::new(ImageStore::open(dir.join("store")).unwrap());
        Backends::mock(store)
    }

    #[test]
    fn job_emits_passed_records_in_input_order() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let registry = TemplateRegistry::new();
        let manifest = fixture_manifest(40);
        let spec = job_spec(&dir.path().join("job"), 3);
        let outcome = run_synthesis_job(&backends, &registry, &manifest, &spec, false).unwrap();
        assert!(outcome.manifest.len() <= manifest.len());
        assert_eq!(outcome.report.evaluated, 40);
        assert_eq!(
            outcome.report.passed + outcome.report.rejected + outcome.report.quarantined,
            40
        );
        // Input order preserved and provenance resolves to parents.
        let mut last_parent = String::new();
        for record in &outcome.manifest.records {
            let prov = record.provenance.as_ref().unwrap();
            assert!(manifest.records.iter().any(|r| r.id == prov.parent_id));
            assert!(prov.parent_id > last_parent || last_parent.is_empty());
            last_parent = prov.parent_id.clone();
        }
    }

    #[test]
    fn shard_count_does_not_change_output() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let registry = TemplateRegistry::new();
        let manifest = fixture_manifest(30);
        let one = run_synthesis_job(
            &backends,
            &registry,
            &manifest,
            &job_spec(&dir.path().join("job1"), 1),
            false,
        )
        .unwrap();
        let four = run_synthesis_job(
            &backends,
            &registry,
            &manifest,
            &job_spec(&dir.path().join("job4"), 4),
            false,
        )
        .unwrap();
        assert_eq!(one.manifest.to_jsonl_bytes(), four.manifest.to_jsonl_bytes());
        assert_eq!(one.report, four.report);
    }

    #[test]
    fn resume_reproduces_uninterrupted_output() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let registry = TemplateRegistry::new();
        let manifest = fixture_manifest(50);

        let clean_spec = job_spec(&dir.path().join("clean"), 2);
        let clean = run_synthesis_job(&backends, &registry, &manifest, &clean_spec, false).unwrap();

        // Full run, then rewind the checkpoints to a mid-run state and
        // resume: the reprocessed tail must reproduce the same bytes.
        let crash_spec = job_spec(&dir.path().join("crash"), 2);
        run_synthesis_job(&backends, &registry, &manifest, &crash_spec, false).unwrap();
        for shard_index in 0..2 {
            let ckpt_path = crash_spec
                .job_dir
                .join(format!("shard-{shard_index}.ckpt.json"));
            let mut ckpt = read_checkpoint(&ckpt_path).unwrap();
            let entries = read_partial(
                &crash_spec
                    .job_dir
                    .join(format!("shard-{shard_index}.partial.jsonl")),
            )
            .unwrap();
            ckpt.committed = entries.len() / 2;
            ckpt.done = false;
            let bytes = serde_json::to_vec_pretty(&ckpt).unwrap();
            fs::write(&ckpt_path, bytes).unwrap();
        }
        let resumed = run_synthesis_job(&backends, &registry, &manifest, &crash_spec, true).unwrap();
        assert_eq!(
            clean.manifest.to_jsonl_bytes(),
            resumed.manifest.to_jsonl_bytes()
        );
        assert_eq!(clean.report, resumed.report);
    }

    #[test]
    fn resume_refuses_config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let registry = TemplateRegistry::new();
        let manifest = fixture_manifest(10);
        let spec = job_spec(&dir.path().join("job"), 1);
        run_synthesis_job(&backends, &registry, &manifest, &spec, false).unwrap();
        let mut altered = spec.clone();
        altered.config_digest = "digest-b".to_string();
        let err = run_synthesis_job(&backends, &registry, &manifest, &altered, true).unwrap_err();
        assert!(matches!(err, JobError::CheckpointMismatch { .. }));
    }

    #[test]
    fn torn_partial_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let backends = mock_backends(dir.path());
        let registry = TemplateRegistry::new();
        let manifest = fixture_manifest(20);
        let spec = job_spec(&dir.path().join("job"), 1);
        let clean = run_synthesis_job(&backends, &registry, &manifest, &spec, false).unwrap();

        // Simulate a crash mid-append: garbage tail beyond the checkpoint.
        let partial = spec.job_dir.join("shard-0.partial.jsonl");
        let mut bytes = fs::read(&partial).unwrap();
        bytes.extend_from_slice(b"{\"index\":99,\"id\":\"r9");
        fs::write(&partial, bytes).unwrap();
        let resumed = run_synthesis_job(&backends, &registry, &manifest, &spec, true).unwrap();
        assert_eq!(
            clean.manifest.to_jsonl_bytes(),
            resumed.manifest.to_jsonl_bytes()
        );
    }

    #[test]
    fn config_digest_is_stable_per_value() {
        #[derive(Serialize)]
        struct Cfg {
            a: u32,
            b: String,
        }
        let one = config_digest(&Cfg {
            a: 1,
            b: "x".to_string(),
        });
        let two = config_digest(&Cfg {
            a: 1,
            b: "x".to_string(),
        });
        assert_eq!(one, two);
        assert_ne!(
            one,
            config_digest(&Cfg {
                a: 2,
                b: "x".to_string()
            })
        );
    }

    #[test]
    fn shard_slices_cover_everything() {
        assert_eq!(shard_slices(10, 3), vec![(0, 4), (4, 7), (7, 10)]);
        assert_eq!(shard_slices(2, 2), vec![(0, 1), (1, 2)]);
        assert_eq!(shard_slices(0, 1), vec![(0, 0)]);
    }
}
