//! Operator surface for the synthesis pipeline: wires config files and flags
//! onto manifests, paths, policies, and backends.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use tagsynth::policy::ImageStyle;

use crate::config::{ConfigFile, JobConfig};

#[derive(Parser)]
#[command(
    name = "tagsynth",
    version,
    about = "Controllable image-text data synthesis: tag decomposition, policy-driven synthesis paths, self-filtering, dataset mixing"
)]
struct Cli {
    /// JSON config file; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Swap every model backend for the deterministic mocks.
    #[arg(long, global = true)]
    mock: bool,
    /// Artificial per-call latency for mock backends, in milliseconds.
    #[arg(long, global = true)]
    mock_latency_ms: Option<u64>,
    /// Job seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Shard count for job execution.
    #[arg(long, global = true)]
    shards: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a synthesis job: ingest, execute the path per record, filter,
    /// and write the synthetic manifest plus a filter report.
    Run {
        /// Input manifest (line-delimited JSON).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output manifest path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Synthesis path: builtin name (sp1..sp4, sp_text_loop) or arrow
        /// literal like "1a->2a->1e->3a->2b->1d" (+1b@3a for the side
        /// caption).
        #[arg(long)]
        path: Option<String>,
        /// Output pairing: cap, img, or capimg.
        #[arg(long)]
        variant: Option<String>,
        /// Filtering threshold override.
        #[arg(long)]
        p_f: Option<f64>,
        /// Continue an interrupted job from its checkpoints.
        #[arg(long)]
        resume: bool,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
        /// Validate config, path, and policies without any backend call.
        #[arg(long)]
        dry_run: bool,
    },
    /// Mix original and synthetic manifests into a training manifest.
    Mix {
        #[arg(long)]
        original: PathBuf,
        /// Synthetic manifests; repeatable.
        #[arg(long = "synthetic", required = true)]
        synthetic: Vec<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// ratio or paper_mix.
        #[arg(long, default_value = "ratio")]
        rule: String,
        /// Probability of drawing an original record per draw (ratio rule).
        #[arg(long, default_value_t = 0.5)]
        p_r: f64,
        /// Number of records to emit (ratio rule).
        #[arg(long)]
        total: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Word-count and filter-ratio statistics for one or more manifests.
    Stats {
        manifests: Vec<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        json_out: Option<PathBuf>,
        /// Also write the word-count histogram as CSV.
        #[arg(long)]
        csv_out: Option<PathBuf>,
    },
    /// Tag a single image through the vision tagging stack.
    Tag {
        #[arg(long)]
        image: String,
    },
    /// Render a text instruction from tags (and an optional caption) and
    /// synthesize text for it.
    SynthText {
        /// Comma-separated tag phrases.
        #[arg(long)]
        tags: String,
        #[arg(long)]
        caption: Option<String>,
        /// Builtin template id (1..=10).
        #[arg(long, default_value_t = 1)]
        template: u8,
        /// Extra output constraints; repeatable.
        #[arg(long = "constraint")]
        constraints: Vec<String>,
    },
    /// Render an image prompt from text and synthesize an image for it.
    SynthImage {
        #[arg(long)]
        text: String,
        /// Style template: real, nocap, isometric, enhance, quality.
        #[arg(long, default_value = "real")]
        style: ImageStyle,
        /// Tag weight, as tag=weight; repeatable.
        #[arg(long = "weight")]
        weights: Vec<String>,
    },
    /// Validate a synthesis path literal or builtin name.
    ValidatePath { spec: String },
    /// Generate synthetic images for tail classes of a labeled manifest.
    AugmentTail {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Classes with fewer records than this are tail classes.
        #[arg(long, default_value_t = tagsynth::dataset::DEFAULT_TAIL_THRESHOLD)]
        threshold: usize,
        /// Synthetic images per tail class.
        #[arg(long, default_value_t = tagsynth::dataset::DEFAULT_PER_CLASS)]
        per_class: usize,
        #[arg(long, default_value = "real")]
        style: ImageStyle,
        #[arg(long)]
        force: bool,
    },
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            let (code, class) = commands::classify_error(&err);
            let payload = json!({
                "error": { "class": class, "message": format!("{err:#}") }
            });
            eprintln!("{payload}");
            std::process::exit(code);
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let base_dir = cli
        .config
        .as_deref()
        .and_then(|p| p.parent())
        .filter(|p| !p.as_os_str().is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    let file = match cli.config.as_deref() {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };

    // Subcommands that need a resolved job config get one lazily; simple
    // ones (stats, validate-path, mix) never touch backends.
    match &cli.command {
        Command::Run {
            input,
            output,
            path,
            variant,
            p_f,
            resume,
            force,
            dry_run,
        } => {
            let cfg = JobConfig::resolve(
                file,
                &base_dir,
                path.as_deref(),
                variant.as_deref(),
                input.as_deref(),
                output.as_deref(),
                cli.seed,
                cli.shards,
                *p_f,
                cli.mock,
                cli.mock_latency_ms,
            )?;
            commands::cmd_run(cfg, *resume, *force, *dry_run)
        }
        Command::Mix {
            original,
            synthetic,
            output,
            rule,
            p_r,
            total,
            force,
        } => commands::cmd_mix(
            original,
            synthetic,
            output,
            rule,
            *p_r,
            *total,
            cli.seed.unwrap_or(0),
            *force,
        ),
        Command::Stats {
            manifests,
            json_out,
            csv_out,
        } => commands::cmd_stats(manifests, json_out.as_deref(), csv_out.as_deref()),
        Command::Tag { image } => {
            let cfg = tool_config(file, &base_dir, &cli)?;
            commands::cmd_tag(&cfg, image)
        }
        Command::SynthText {
            tags,
            caption,
            template,
            constraints,
        } => {
            let cfg = tool_config(file, &base_dir, &cli)?;
            commands::cmd_synth_text(&cfg, tags, caption.as_deref(), *template, constraints)
        }
        Command::SynthImage {
            text,
            style,
            weights,
        } => {
            let cfg = tool_config(file, &base_dir, &cli)?;
            commands::cmd_synth_image(&cfg, text, *style, weights, cli.seed.unwrap_or(0))
        }
        Command::ValidatePath { spec } => commands::cmd_validate_path(spec),
        Command::AugmentTail {
            input,
            output,
            threshold,
            per_class,
            style,
            force,
        } => {
            let cfg = tool_config(file, &base_dir, &cli)?;
            commands::cmd_augment_tail(&cfg, input, output, *threshold, *per_class, *style, *force)
        }
    }
}

/// Resolve a config for single-shot tool commands, which need backends but
/// not manifests. Placeholder manifest paths keep `JobConfig::resolve` as
/// the single validation path.
fn tool_config(file: ConfigFile, base_dir: &std::path::Path, cli: &Cli) -> anyhow::Result<JobConfig> {
    JobConfig::resolve(
        file,
        base_dir,
        Some("sp1"),
        None,
        Some(std::path::Path::new("-unused-input-")),
        Some(std::path::Path::new("-unused-output-")),
        cli.seed,
        cli.shards,
        None,
        cli.mock,
        cli.mock_latency_ms,
    )
}
