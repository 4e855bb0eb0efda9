//! Subcommand implementations. Each returns the process exit code: 0 ok,
//! 2 config error, 3 backend exhaustion, 4 partial (quarantines present).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use tagsynth::backends::{Backends, ImageRef, ImageStore, MockOptions};
use tagsynth::dataset::{
    augment_tail_classes, compute_stats, config_digest, histogram_csv, ingest_manifest,
    mix_manifests, run_synthesis_job, JobSpec, Manifest, MixConfig, MixRule,
};
use tagsynth::filter::FilterReport;
use tagsynth::path::resolve_path;
use tagsynth::policy::{
    render_image_instruction, render_text_instruction, ImagePolicy, ImageStyle, TextPolicy,
};
use tagsynth::tags::VisualTags;

use crate::config::JobConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

pub fn build_backends(cfg: &JobConfig) -> Result<Backends> {
    let store = Arc::new(
        ImageStore::open(&cfg.image_store_dir)
            .with_context(|| format!("opening image store {}", cfg.image_store_dir.display()))?,
    );
    if cfg.mock {
        let options = MockOptions {
            latency: (cfg.mock_latency_ms > 0)
                .then(|| Duration::from_millis(cfg.mock_latency_ms)),
        };
        Ok(Backends::mock_with(store, options))
    } else {
        let suite = cfg
            .backends
            .as_ref()
            .ok_or_else(|| anyhow!("no backends configured"))?;
        Backends::over_http(suite, store).map_err(Into::into)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_run(cfg: JobConfig, resume: bool, force: bool, dry_run: bool) -> Result<i32> {
    cfg.validate_path_policy()?;
    if dry_run {
        let plan = json!({
            "path": cfg.path.literal(),
            "variant": cfg.variant.name(),
            "filter": cfg.filter,
            "shards": cfg.shards,
            "seed": cfg.seed,
            "config_digest": cfg.digest,
            "input_manifest": cfg.input_manifest,
            "output_manifest": cfg.output_manifest,
            "mock": cfg.mock,
        });
        println!("{}", serde_json::to_string_pretty(&plan)?);
        return Ok(EXIT_OK);
    }

    if cfg.output_manifest.exists() && !force {
        let existing = ingest_manifest(&cfg.output_manifest)?;
        if existing.header.config_digest.as_deref() == Some(cfg.digest.as_str()) && !resume {
            println!(
                "output {} already complete for this config (digest {}); use --force to redo",
                cfg.output_manifest.display(),
                &cfg.digest[..12]
            );
            return Ok(EXIT_OK);
        }
        if existing.header.config_digest.as_deref() != Some(cfg.digest.as_str()) {
            bail!(
                "output {} exists with a different config digest; use --force to overwrite",
                cfg.output_manifest.display()
            );
        }
    }

    let input = ingest_manifest(&cfg.input_manifest)?;
    let backends = build_backends(&cfg)?;
    let spec = JobSpec {
        job_id: cfg.digest[..12].to_string(),
        job_dir: cfg.job_dir.clone(),
        path: cfg.path.clone(),
        path_name: cfg.path_spec.clone(),
        variant: cfg.variant,
        text_policy: cfg.text_policy.clone(),
        image_policy: cfg.image_policy.clone(),
        filter: cfg.filter.clone(),
        shards: cfg.shards,
        seed: cfg.seed,
        config_digest: cfg.digest.clone(),
        checkpoint_every: cfg.checkpoint_every,
        output_name: cfg
            .output_manifest
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "synthetic".to_string()),
    };

    let started = Instant::now();
    let outcome = run_synthesis_job(&backends, &cfg.registry, &input, &spec, resume)?;
    let elapsed = started.elapsed();

    // The manifest lands last: its atomic write marks the run complete, so
    // the reports it implies must already be on disk.
    write_report(&cfg, &outcome.report)?;
    outcome.manifest.write_to(&cfg.output_manifest)?;

    let report = &outcome.report;
    let throughput = report.evaluated as f64 / elapsed.as_secs_f64().max(1e-9);
    println!(
        "passed {}/{} ({:.1}% pass rate), rejected {}, quarantined {}",
        report.passed,
        report.evaluated,
        report.pass_rate() * 100.0,
        report.rejected,
        report.quarantined
    );
    println!(
        "elapsed {:.2}s, throughput {:.1} records/s",
        elapsed.as_secs_f64(),
        throughput
    );
    println!(
        "output -> {} ({} records, digest {})",
        cfg.output_manifest.display(),
        outcome.manifest.len(),
        &cfg.digest[..12]
    );

    Ok(run_exit_code(report))
}

/// Quarantines make the run partial; a run where every record failed on
/// transport means the backends were unreachable.
fn run_exit_code(report: &FilterReport) -> i32 {
    if report.quarantined == 0 {
        return EXIT_OK;
    }
    let all_transport = report.quarantined == report.evaluated
        && report
            .rejection_reasons
            .keys()
            .all(|reason| reason.contains("transport error"));
    if all_transport {
        EXIT_BACKEND
    } else {
        EXIT_PARTIAL
    }
}

fn write_report(cfg: &JobConfig, report: &FilterReport) -> Result<()> {
    let stamped = json!({
        "config_digest": cfg.digest,
        "filter": cfg.filter,
        "report": report,
    });
    let report_path = cfg.output_manifest.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_vec_pretty(&stamped)?)
        .with_context(|| format!("writing {}", report_path.display()))?;
    let csv_path = cfg.output_manifest.with_extension("report.csv");
    std::fs::write(&csv_path, report.histogram_csv())
        .with_context(|| format!("writing {}", csv_path.display()))?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_mix(
    original: &Path,
    synthetic: &[PathBuf],
    output: &Path,
    rule: &str,
    p_r: f64,
    total: Option<usize>,
    seed: u64,
    force: bool,
) -> Result<i32> {
    let mix_rule = match rule {
        "ratio" => MixRule::Ratio,
        "paper_mix" => MixRule::PaperMix,
        other => bail!("unknown mix rule \"{other}\" (expected ratio or paper_mix)"),
    };
    let total = match (mix_rule, total) {
        (MixRule::Ratio, Some(total)) => total,
        (MixRule::Ratio, None) => bail!("--total is required for the ratio rule"),
        (MixRule::PaperMix, _) => 0,
    };

    let digest = config_digest(&json!({
        "original": original.display().to_string(),
        "synthetic": synthetic.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "rule": rule, "p_r": p_r, "total": total, "seed": seed,
    }));
    if output.exists() && !force {
        let existing = ingest_manifest(output)?;
        if existing.header.config_digest.as_deref() == Some(digest.as_str()) {
            println!(
                "output {} already complete for this mix config; use --force to redo",
                output.display()
            );
            return Ok(EXIT_OK);
        }
        bail!(
            "output {} exists with a different mix config; use --force to overwrite",
            output.display()
        );
    }

    let original_manifest = ingest_manifest(original)?;
    let synthetic_manifests: Vec<Manifest> = synthetic
        .iter()
        .map(|p| ingest_manifest(p))
        .collect::<Result<_, _>>()?;
    let cfg = MixConfig {
        p_r,
        seed,
        mix_rule,
    };
    let mut mixed = mix_manifests(&original_manifest, &synthetic_manifests, &cfg, total)?;
    mixed.header.config_digest = Some(digest);
    mixed.write_to(output)?;

    let real = mixed
        .records
        .iter()
        .filter(|r| r.origin == tagsynth::dataset::Origin::Real)
        .count();
    let total_out = mixed.len().max(1);
    println!(
        "mixed {} records -> {} (original fraction {:.3}, synthetic fraction {:.3})",
        mixed.len(),
        output.display(),
        real as f64 / total_out as f64,
        (mixed.len() - real) as f64 / total_out as f64
    );
    Ok(EXIT_OK)
}

pub fn cmd_stats(
    manifests: &[PathBuf],
    json_out: Option<&Path>,
    csv_out: Option<&Path>,
) -> Result<i32> {
    let loaded: Vec<Manifest> = manifests
        .iter()
        .map(|p| ingest_manifest(p))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Manifest> = loaded.iter().collect();
    let stats = compute_stats(&refs);
    let json = serde_json::to_string_pretty(&stats)?;
    match json_out {
        Some(path) => std::fs::write(path, &json)
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    if let Some(path) = csv_out {
        std::fs::write(path, histogram_csv(&stats))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_tag(cfg: &JobConfig, image: &str) -> Result<i32> {
    let backends = build_backends(cfg)?;
    let tagged = backends.tag_image(&ImageRef::new(image))?;
    println!("{}", serde_json::to_string_pretty(&tagged)?);
    Ok(EXIT_OK)
}

pub fn cmd_synth_text(
    cfg: &JobConfig,
    tags_csv: &str,
    caption: Option<&str>,
    template: u8,
    constraints: &[String],
) -> Result<i32> {
    let tags = VisualTags::from_objects(tags_csv.split(','));
    let mut policy = TextPolicy::builtin(template);
    policy.style_constraints = constraints.to_vec();
    let instruction = render_text_instruction(&cfg.registry, &tags, caption, &policy)?;
    let backends = build_backends(cfg)?;
    let text = backends.generate_text(&instruction)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "instruction": instruction.rendered_text,
            "text": text,
        }))?
    );
    Ok(EXIT_OK)
}

pub fn cmd_synth_image(
    cfg: &JobConfig,
    text: &str,
    style: ImageStyle,
    weights: &[String],
    seed: u64,
) -> Result<i32> {
    let mut policy = ImagePolicy::style(style);
    policy.tag_weights = parse_weights(weights)?;
    let prompt = render_image_instruction(text, &policy)?;
    let backends = build_backends(cfg)?;
    let image = backends.generate_image(&prompt, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "prompt": prompt,
            "image_ref": image.as_str(),
        }))?
    );
    Ok(EXIT_OK)
}

fn parse_weights(weights: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for spec in weights {
        let (tag, weight) = spec
            .split_once('=')
            .with_context(|| format!("weight \"{spec}\" should be tag=value"))?;
        let weight: f64 = weight
            .parse()
            .with_context(|| format!("weight value in \"{spec}\""))?;
        out.insert(tag.to_string(), weight);
    }
    Ok(out)
}

pub fn cmd_validate_path(spec: &str) -> Result<i32> {
    let path = resolve_path(spec)?;
    let nodes: Vec<_> = path
        .nodes()
        .iter()
        .map(|n| json!({"node": n.code(), "kind": n.kind()}))
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "literal": path.literal(),
            "nodes": nodes,
            "side_caption": path.has_side_caption(),
        }))?
    );
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_augment_tail(
    cfg: &JobConfig,
    input: &Path,
    output: &Path,
    threshold: usize,
    per_class: usize,
    style: ImageStyle,
    force: bool,
) -> Result<i32> {
    if output.exists() && !force {
        bail!(
            "output {} exists; use --force to overwrite",
            output.display()
        );
    }
    let manifest = ingest_manifest(input)?;
    let backends = build_backends(cfg)?;
    let policy = ImagePolicy::style(style);
    let outcome = augment_tail_classes(&backends, &manifest, threshold, per_class, &policy, cfg.seed)?;
    outcome.manifest.write_to(output)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "augmented {} tail classes with {} synthetic records -> {}",
        outcome.tail_classes.len(),
        outcome.manifest.len(),
        output.display()
    );
    Ok(EXIT_OK)
}

/// Map an error chain to the exit class: configuration and validation
/// problems exit 2, backend exhaustion exits 3, everything else exits 1.
pub fn classify_error(err: &anyhow::Error) -> (i32, &'static str) {
    use tagsynth::backends::BackendError;
    use tagsynth::dataset::{JobError, ManifestError, MixError, TailError};
    use tagsynth::path::PathError;
    use tagsynth::policy::PolicyError;

    for cause in err.chain() {
        if let Some(backend) = cause.downcast_ref::<BackendError>() {
            if backend.is_retryable() {
                return (EXIT_BACKEND, "backend");
            }
            return (1, "runtime");
        }
        if let Some(job) = cause.downcast_ref::<JobError>() {
            return match job {
                JobError::InvalidConfig(_) | JobError::CheckpointMismatch { .. } => {
                    (EXIT_CONFIG, "config")
                }
                _ => (1, "runtime"),
            };
        }
        if cause.downcast_ref::<PathError>().is_some()
            || cause.downcast_ref::<PolicyError>().is_some()
            || cause.downcast_ref::<ManifestError>().is_some()
            || cause.downcast_ref::<MixError>().is_some()
        {
            return (EXIT_CONFIG, "config");
        }
        if let Some(tail) = cause.downcast_ref::<TailError>() {
            return match tail {
                TailError::Generation { .. } => (EXIT_BACKEND, "backend"),
                _ => (EXIT_CONFIG, "config"),
            };
        }
    }
    // Bare messages from config resolution count as config errors.
    if err.downcast_ref::<std::io::Error>().is_none() {
        (EXIT_CONFIG, "config")
    } else {
        (1, "runtime")
    }
}
